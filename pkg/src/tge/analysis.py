"""Pilot-study tools: background scoring/pruning and token ablation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoder import AdapterModel, detect_register_tokens, seeded_rng
from .errors import BoundsError, InputError, ShapeError
from .token_model import GridLayout, TokenGrid, load_grid

ABLATION_KINDS = ("object", "object_buffer", "register", "random")


@dataclass(frozen=True)
class BackgroundLexicon:
    labels: tuple
    embeddings: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if not len(e) or len(e) != len(self.labels):
            raise InputError("lexicon needs one embedding per label and at least one term")
        if not np.isfinite(e).all():
            raise InputError("lexicon embeddings must be finite")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "embeddings", e)

    @classmethod
    def load(cls, path) -> "BackgroundLexicon":
        """Read a TGR1 file with one term per row; the tag lists labels comma-separated."""
        grid = load_grid(path)
        labels = grid.tag.split(",") if grid.tag else [f"term{i}" for i in range(grid.rows)]
        return cls(tuple(labels), grid.data.reshape(grid.rows * grid.cols, grid.dim))


@dataclass(frozen=True)
class AblationSpec:
    """What to ablate. ``bbox`` is ``(x0, y0, x1, y1)`` in grid pixels, half-open."""

    kind: str
    bbox: Optional[tuple] = None
    k: int = 0
    n: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ABLATION_KINDS:
            raise InputError(f"unknown ablation kind {self.kind!r}")
        if self.kind in ("object", "object_buffer"):
            if self.bbox is None or len(self.bbox) != 4:
                raise InputError(f"{self.kind} ablation needs a bbox")
            x0, y0, x1, y1 = self.bbox
            if x1 <= x0 or y1 <= y0:
                raise InputError(f"empty bbox {self.bbox}")
            object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        if self.kind == "object_buffer" and self.k < 1:
            raise InputError("buffer width k must be >= 1")
        if self.kind == "random" and self.n < 1:
            raise InputError("random ablation needs n >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "AblationSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"object": {"bbox"}, "object_buffer": {"bbox", "k"}, "register": set(),
                   "random": {"n", "seed"}}.get(kind)
        if allowed is None:
            raise InputError(f"unknown ablation kind {kind!r}")
        extra = set(d) - allowed
        if extra:
            raise InputError(f"unexpected fields for {kind}: {sorted(extra)}")
        if "bbox" in d:
            d["bbox"] = tuple(d["bbox"])
        for key in ("k", "n", "seed"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise InputError(f"{key} must be an integer")
        return cls(kind, **d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.bbox is not None:
            out["bbox"] = list(self.bbox)
        if self.kind == "object_buffer":
            out["k"] = self.k
        if self.kind == "random":
            out.update(n=self.n, seed=self.seed)
        return out


@dataclass(frozen=True)
class AblationResult:
    ablated_indices: list
    replacement_norm: float
    metric_before: float
    metric_after: float
    decrease_percent: float


def _cos_max(token: np.ndarray, embeddings: np.ndarray) -> float:
    nt = np.linalg.norm(token)
    ne = np.linalg.norm(embeddings, axis=1)
    denom = nt * ne
    cos = np.divide(embeddings @ token, denom, out=np.zeros(len(embeddings)), where=denom > 0)
    return float(np.clip(cos, -1.0, 1.0).max())


def background_score(token, lexicon: BackgroundLexicon) -> float:
    """Highest cosine similarity between ``token`` and any background term."""
    t = np.asarray(token, dtype=np.float64)
    if t.shape != (lexicon.embeddings.shape[1],):
        raise ShapeError(f"token of shape {t.shape}, lexicon dim {lexicon.embeddings.shape[1]}")
    return _cos_max(t, lexicon.embeddings)


def prune_background(grid: TokenGrid, lexicon: BackgroundLexicon, fraction: float = 0.5):
    """Drop the ``floor(fraction * n)`` most background-like tokens.

    Returns ``(retained, dropped)`` index lists; ``retained`` keeps grid order,
    ``dropped`` is in drop-rank order (highest score first, ties to lower index).
    """
    if not 0.0 < fraction < 1.0:
        raise InputError("fraction must lie in (0, 1)")
    scores = np.array([background_score(t, lexicon) for t in grid.tokens.astype(np.float64)])
    n = grid.n_tokens
    n_drop = int(np.floor(fraction * n + 1e-12))
    order = np.lexsort((np.arange(n), -scores))
    dropped = order[:n_drop]
    mask = np.ones(n, dtype=bool)
    mask[dropped] = False
    return np.flatnonzero(mask).tolist(), dropped.tolist()


def tokens_from_bbox(bbox, layout: GridLayout) -> list[int]:
    """Indices of patches whose pixel area overlaps ``bbox`` at all, row-major."""
    x0, y0, x1, y1 = bbox
    side, p = layout.grid_side_px, layout.patch_px
    if x1 <= x0 or y1 <= y0:
        raise InputError(f"empty bbox {bbox}")
    if x0 < 0 or y0 < 0 or x1 > side or y1 > side:
        raise BoundsError(f"bbox {bbox} leaves the {side}x{side} grid")
    m = layout.patches_per_side
    cols = range(x0 // p, (x1 - 1) // p + 1)
    rows = range(y0 // p, (y1 - 1) // p + 1)
    return [r * m + c for r in rows for c in cols]


def buffer_ring(indices, layout: GridLayout, k: int) -> list[int]:
    """Grow an index set by Chebyshev distance ``k`` on the patch lattice."""
    if k < 1:
        raise InputError("buffer width must be >= 1")
    m = layout.patches_per_side
    mask = np.zeros((m, m), dtype=bool)
    for i in indices:
        r, c = divmod(int(i), m)
        mask[max(0, r - k):r + k + 1, max(0, c - k):c + k + 1] = True
    return np.flatnonzero(mask).tolist()


def resolve_ablation(grid: TokenGrid, spec: AblationSpec, layout: Optional[GridLayout] = None) -> list[int]:
    if spec.kind in ("object", "object_buffer"):
        if layout is None or layout.patches_per_side != grid.rows or grid.rows != grid.cols:
            raise ShapeError("object ablation needs a layout whose patch lattice matches the grid")
        idx = tokens_from_bbox(spec.bbox, layout)
        return buffer_ring(idx, layout, spec.k) if spec.kind == "object_buffer" else idx
    if spec.kind == "register":
        return detect_register_tokens(grid)
    if spec.n > grid.n_tokens:
        raise InputError(f"cannot ablate {spec.n} of {grid.n_tokens} tokens")
    picks = seeded_rng(spec.seed, 300).choice(grid.n_tokens, size=spec.n, replace=False)
    return sorted(int(i) for i in picks)


def ablate_tokens(grid: TokenGrid, spec: AblationSpec, corpus_mean, layout: Optional[GridLayout] = None):
    """Replace the tokens selected by ``spec`` with ``corpus_mean``.

    ``layout`` is only needed for the object kinds. Returns ``(new_grid, indices)``.
    """
    mean = np.asarray(corpus_mean, dtype=np.float32)
    if mean.shape != (grid.dim,):
        raise ShapeError(f"corpus mean of shape {mean.shape}, grid dim {grid.dim}")
    idx = resolve_ablation(grid, spec, layout)
    tokens = grid.tokens.copy()
    tokens[idx] = mean
    return TokenGrid.from_tokens(tokens, grid.rows, grid.cols, grid.tag), idx


def pooled_probability(model: AdapterModel, grid: TokenGrid, target_class: int) -> float:
    features = grid.tokens.astype(np.float64).mean(axis=0)
    return float(model.probabilities(features)[target_class])


def degradation_metric(model: AdapterModel, grid_before: TokenGrid, grid_after: TokenGrid,
                       target_class: int, ablated_indices=(), corpus_mean=None) -> AblationResult:
    """Relative drop in the proxy classifier's target probability after ablation."""
    if grid_before.data.shape != grid_after.data.shape:
        raise ShapeError("grids differ in shape")
    before = pooled_probability(model, grid_before, target_class)
    after = pooled_probability(model, grid_after, target_class)
    if before <= 0.0:
        raise InputError("target probability before ablation is 0; decrease undefined")
    norm = float(np.linalg.norm(corpus_mean)) if corpus_mean is not None else 0.0
    return AblationResult(list(ablated_indices), norm, before, after, 100.0 * (before - after) / before)


def corpus_mean(grids) -> np.ndarray:
    """Mean of every token across ``grids``."""
    total, count = None, 0
    for g in grids:
        s = g.tokens.astype(np.float64).sum(axis=0)
        total = s if total is None else total + s
        count += g.n_tokens
    if not count:
        raise InputError("no tokens to average")
    return total / count


@dataclass(frozen=True)
class SignalFixture:
    grid: TokenGrid
    layout: GridLayout
    bbox: tuple
    object_indices: list
    corpus_mean: np.ndarray
    model: AdapterModel
    target_class: int


def signal_fixture(seed: int, dim: int = 16, bbox=(140, 140, 210, 210), layout=None,
                   noise: float = 0.05, signal_gain: float = 4.0) -> SignalFixture:
    """Token grid whose class evidence lives only in the bbox tokens.

    Background tokens are a shared background vector plus noise; object tokens add a
    signal direction orthogonal to the background. The proxy classifier reads the
    signal direction from the mean-pooled grid, so removing object tokens removes
    nearly all of its evidence while a same-size random ablation mostly hits
    background.
    """
    layout = layout or GridLayout(336, 336)
    m = layout.patches_per_side
    rng = seeded_rng(seed, 400)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    background, signal = basis[:, 0], basis[:, 1]
    tokens = background + noise * rng.normal(size=(m * m, dim))
    obj = tokens_from_bbox(bbox, layout)
    tokens[obj] += signal_gain * signal
    grid = TokenGrid.from_tokens(tokens, m, m, f"signal-{seed}")
    # ablation replacement: the mean over a background-heavy corpus
    mean = background.copy()
    # class 1 logit grows with the pooled signal component; scale puts the clean
    # probability near 0.9
    pooled_signal = signal_gain * len(obj) / (m * m)
    scale = np.log(9.0) / pooled_signal
    base = np.vstack([np.zeros(dim), scale * signal])
    extra = rng.normal(size=dim)
    extra -= basis @ (basis.T @ extra)
    extra /= np.linalg.norm(extra)
    # rank-1 adapter on a direction the fixture never excites
    model = AdapterModel(base, 1e-3 * extra[None, :], np.array([[0.0], [1e-3]]))
    return SignalFixture(grid, layout, tuple(bbox), obj, mean, model, 1)
