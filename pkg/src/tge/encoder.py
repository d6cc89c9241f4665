"""Deterministic toy attention encoder and low-rank adapter classifier.

The encoder is a bias-free, single-head attention stack (no MLP, no layer norm)
over ``[CLS] + patches``. It exists to give the compression and analysis code
real hidden states and CLS attention maps to work on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NumericError, ShapeError, StatisticsError
from .token_model import GridLayout, TokenGrid

_WEIGHT_RANGE = 0.1


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed by ``seed`` plus an optional stream path."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


@dataclass(frozen=True)
class AttentionMap:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or not len(w):
            raise ShapeError("attention map must be a non-empty vector")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-6:
            raise NumericError("attention weights must be nonnegative and sum to 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class EncoderParams:
    dim: int = 32
    layers: int = 3
    vocab: int = 64
    seed: int = 0
    patch_px: int = 14
    channels: int = 1
    weights: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.layers < 2:
            raise InputError("encoder needs at least 2 layers")
        if min(self.dim, self.vocab, self.patch_px, self.channels) < 1:
            raise InputError("encoder shape parameters must be positive")
        d = self.dim

        def uniform(stream, shape):
            return seeded_rng(self.seed, stream).uniform(-_WEIGHT_RANGE, _WEIGHT_RANGE, size=shape)

        w = {
            "embed": uniform(0, (self.patch_px * self.patch_px * self.channels, d)),
            "cls": uniform(1, (d,)),
            "unembed": uniform(2, (self.vocab, d)),
            "q": [uniform(10 + 3 * i, (d, d)) for i in range(self.layers)],
            "k": [uniform(11 + 3 * i, (d, d)) for i in range(self.layers)],
            "v": [uniform(12 + 3 * i, (d, d)) for i in range(self.layers)],
        }
        object.__setattr__(self, "weights", w)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "vocab": self.vocab, "seed": self.seed,
                "patch_px": self.patch_px, "channels": self.channels}


@dataclass(frozen=True)
class EncodedOutput:
    """``hidden[l]`` is the (1 + n, dim) state after layer ``l``; row 0 is CLS."""

    hidden: list
    cls_attention_second_to_last: AttentionMap
    rows: int
    cols: int

    def patch_grid(self, layer: int = -2) -> TokenGrid:
        """Patch tokens (CLS dropped) of one layer's output as a TokenGrid."""
        return TokenGrid.from_tokens(self.hidden[layer][1:], self.rows, self.cols)


def _stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_attention(query, keys, scale_dim: int) -> AttentionMap:
    q = np.asarray(query, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    if q.ndim != 1 or k.ndim != 2 or k.shape[1] != q.shape[0] or scale_dim != q.shape[0]:
        raise ShapeError(f"query {q.shape}, keys {k.shape}, scale_dim {scale_dim} do not agree")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise NumericError("non-finite query or keys")
    return AttentionMap(_stable_softmax(k @ q / np.sqrt(scale_dim)))


def patchify(pixels, layout: GridLayout, channels: int = 1) -> np.ndarray:
    """(side, side[, C]) pixels -> (n_patches, patch*patch*C) in row-major patch order."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    side, p = layout.grid_side_px, layout.patch_px
    if px.shape != (side, side, channels):
        raise ShapeError(f"pixels {px.shape} do not match one {side}x{side}x{channels} grid")
    if not np.isfinite(px).all():
        raise NumericError("non-finite pixels")
    m = side // p
    return px.reshape(m, p, m, p, channels).transpose(0, 2, 1, 3, 4).reshape(m * m, p * p * channels)


def encode(pixels, params: EncoderParams, layout: GridLayout) -> EncodedOutput:
    if layout.patch_px != params.patch_px:
        raise ShapeError("layout and encoder disagree on patch size")
    w = params.weights
    d = params.dim
    x = np.vstack([w["cls"][None, :], patchify(pixels, layout, params.channels) @ w["embed"]])
    hidden = []
    cls_map = None
    for layer in range(params.layers):
        q, k, v = x @ w["q"][layer], x @ w["k"][layer], x @ w["v"][layer]
        if layer == params.layers - 2:
            # CLS query against patch keys only
            cls_map = softmax_attention(q[0], k[1:], d)
        attn = _stable_softmax(q @ k.T / np.sqrt(d))
        x = x + attn @ v
        hidden.append(x)
    if not np.isfinite(x).all():
        raise NumericError("encoder produced non-finite activations")
    m = layout.patches_per_side
    return EncodedOutput(hidden, cls_map, m, m)


def logit_lens(hidden_state, unembedding) -> tuple[int, np.ndarray]:
    h = np.asarray(hidden_state, dtype=np.float64)
    u = np.asarray(unembedding, dtype=np.float64)
    if h.ndim != 1 or u.ndim != 2 or u.shape[1] != h.shape[0]:
        raise ShapeError(f"hidden {h.shape} does not match unembedding {u.shape}")
    logits = u @ h
    # np.argmax returns the first maximal index
    return int(np.argmax(logits)), logits


def decode_layers(output: EncodedOutput, params: EncoderParams) -> np.ndarray:
    """Logit-lens token id for every (layer, position), shape (layers, 1 + n)."""
    return np.stack([np.argmax(h @ params.weights["unembed"].T, axis=1) for h in output.hidden])


def detect_register_tokens(grid: TokenGrid) -> list[int]:
    """Indices whose L2 norm is more than two population std-devs from the mean norm."""
    if grid.n_tokens < 2:
        raise StatisticsError("need at least 2 tokens for norm statistics")
    norms = np.linalg.norm(grid.tokens.astype(np.float64), axis=1)
    mu, sigma = norms.mean(), norms.std()
    return [int(i) for i in np.flatnonzero(np.abs(norms - mu) > 2 * sigma)]


@dataclass(frozen=True)
class AdapterModel:
    """Frozen ``base`` plus trainable low-rank update ``factor_b @ factor_a``."""

    base: np.ndarray
    factor_a: np.ndarray
    factor_b: np.ndarray

    def __post_init__(self):
        for name in ("base", "factor_a", "factor_b"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        out, inp = self.base.shape
        rank = self.factor_a.shape[0]
        if self.factor_a.shape != (rank, inp) or self.factor_b.shape != (out, rank):
            raise ShapeError("adapter factor shapes do not match the base matrix")
        if not 0 < rank < min(inp, out):
            raise InputError(f"rank {rank} must be below min(in_dim, out_classes) = {min(inp, out)}")

    @property
    def in_dim(self) -> int:
        return self.base.shape[1]

    @property
    def out_classes(self) -> int:
        return self.base.shape[0]

    @property
    def rank(self) -> int:
        return self.factor_a.shape[0]

    @property
    def n_params(self) -> int:
        return self.factor_a.size + self.factor_b.size

    @classmethod
    def random(cls, in_dim: int, rank: int, out_classes: int, seed: int, scale: float = 0.1):
        rng = seeded_rng(seed, 100)
        return cls(
            rng.uniform(-scale, scale, (out_classes, in_dim)),
            rng.uniform(-scale, scale, (rank, in_dim)),
            rng.uniform(-scale, scale, (out_classes, rank)),
        )

    def weight(self) -> np.ndarray:
        return self.base + self.factor_b @ self.factor_a

    def probabilities(self, features) -> np.ndarray:
        return _stable_softmax(self.weight() @ np.asarray(features, dtype=np.float64))

    def with_flat(self, flat) -> "AdapterModel":
        """Copy with trainable factors taken from a flat vector (factor_a then factor_b)."""
        split = self.factor_a.size
        return replace(
            self,
            factor_a=np.asarray(flat[:split]).reshape(self.factor_a.shape),
            factor_b=np.asarray(flat[split:]).reshape(self.factor_b.shape),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.factor_a.ravel(), self.factor_b.ravel()])


def adapter_loss_and_gradient(model: AdapterModel, sample) -> tuple[float, np.ndarray]:
    """Cross-entropy loss and its gradient over the adapter factors only.

    The gradient is flattened as ``factor_a`` row-major followed by ``factor_b``
    row-major; the frozen base contributes nothing.
    """
    features, label = sample
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.in_dim,):
        raise ShapeError(f"features of shape {x.shape}, expected ({model.in_dim},)")
    if not 0 <= int(label) < model.out_classes:
        raise InputError(f"label {label} outside [0, {model.out_classes})")
    logits = model.weight() @ x
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = float(log_z - shifted[label])
    err = np.exp(shifted - log_z)
    err[label] -= 1.0
    grad_w = np.outer(err, x)
    grad_a = model.factor_b.T @ grad_w
    grad_b = grad_w @ model.factor_a.T
    return loss, np.concatenate([grad_a.ravel(), grad_b.ravel()])


def sgd_step(model: AdapterModel, batch, lr: float) -> AdapterModel:
    batch = list(batch)
    if not batch:
        raise InputError("empty batch")
    if lr < 0:
        raise InputError("learning rate must be nonnegative")
    grad = np.mean([adapter_loss_and_gradient(model, s)[1] for s in batch], axis=0)
    return model.with_flat(model.flat() - lr * grad)
