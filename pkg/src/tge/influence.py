"""Gradient-similarity data selection.

A warm-up adapter model supplies per-sample loss gradients; each gradient is
compressed by a fixed random sign projection, and a training sample is scored
by its best cosine match against the validation gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import AdapterModel, adapter_loss_and_gradient, seeded_rng, sgd_step
from .errors import InputError, NumericError, ShapeError

DEFAULT_SKETCH_DIM = 8192
DEFAULT_KEEP_FRACTION = 0.7


@dataclass(frozen=True)
class ProjectionSketch:
    """d_out x d_in matrix of +-1/sqrt(d_out). Signs are held as int8."""

    d_in: int
    d_out: int
    seed: int
    signs: np.ndarray = field(repr=False, compare=False)

    @property
    def matrix(self) -> np.ndarray:
        return self.signs / np.sqrt(self.d_out)


@dataclass(frozen=True)
class GradientFeature:
    sample_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite gradient feature for {self.sample_id!r}")
        object.__setattr__(self, "vector", v)


@dataclass
class InfluenceRanking:
    entries: list  # (sample_id, score), best first
    keep_fraction: float
    zero_gradient: set = field(default_factory=set)


def build_sketch(d_in: int, d_out: int = DEFAULT_SKETCH_DIM, seed: int = 0) -> ProjectionSketch:
    if d_in < 1 or d_out < 1:
        raise InputError("sketch dimensions must be positive")
    bits = seeded_rng(seed, 200).integers(0, 2, size=(d_out, d_in), dtype=np.int8)
    return ProjectionSketch(d_in, d_out, seed, (2 * bits - 1).astype(np.int8))


def project_gradient(sketch: ProjectionSketch, grad, sample_id: str = "") -> GradientFeature:
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != (sketch.d_in,):
        raise ShapeError(f"gradient of shape {g.shape}, sketch expects ({sketch.d_in},)")
    return GradientFeature(sample_id, (sketch.signs @ g) / np.sqrt(sketch.d_out))


def project_gradients(sketch: ProjectionSketch, grads, sample_ids) -> list[GradientFeature]:
    """Batch form of :func:`project_gradient` (one matrix product for all rows)."""
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != sketch.d_in:
        raise ShapeError(f"gradients of shape {g.shape}, sketch expects (*, {sketch.d_in})")
    # identical gradients must map to identical features; a blocked matmul does
    # not promise that across rows, so project each distinct row once
    uniq, inverse = np.unique(g, axis=0, return_inverse=True)
    projected = ((uniq @ sketch.signs.T.astype(np.float64)) / np.sqrt(sketch.d_out))[inverse.ravel()]
    return [GradientFeature(sid, row) for sid, row in zip(sample_ids, projected)]


def _unit_rows(vectors: np.ndarray):
    norms = np.linalg.norm(vectors, axis=1)
    unit = np.zeros_like(vectors)
    nz = norms > 0
    unit[nz] = vectors[nz] / norms[nz, None]
    return unit, nz


def _score_matrix(train: np.ndarray, val: np.ndarray) -> np.ndarray:
    tu, _ = _unit_rows(train)
    vu, _ = _unit_rows(val)
    # zero-norm rows are all zeros, so their cosines come out as 0; rounding
    # keeps last-ulp noise from reordering exact ties
    return np.round(np.clip(tu @ vu.T, -1.0, 1.0).max(axis=1), 12)


def influence_score(train_feature: GradientFeature, val_features) -> float:
    """Best cosine similarity between one training feature and any validation feature."""
    val = [v.vector for v in val_features]
    if not val:
        raise InputError("validation set is empty")
    vm = np.stack(val)
    if vm.shape[1] != train_feature.vector.shape[0]:
        raise ShapeError("training and validation features differ in dimension")
    return float(_score_matrix(train_feature.vector[None, :], vm)[0])


def keep_count(n: int, keep_fraction: float) -> int:
    return math.ceil(keep_fraction * n - 1e-12)


def rank_and_select(train_features, val_features, keep_fraction: float = DEFAULT_KEEP_FRACTION):
    """Rank training samples by influence and keep the top ``ceil(fraction * N)``.

    Returns ``(ranking, selected_ids)``; ``selected_ids`` is the ranking prefix.
    """
    train_features = list(train_features)
    val_features = list(val_features)
    if not train_features or not val_features:
        raise InputError("training and validation sets must be nonempty")
    if not 0.0 < keep_fraction <= 1.0:
        raise InputError("keep_fraction must lie in (0, 1]")
    tm = np.stack([t.vector for t in train_features])
    vm = np.stack([v.vector for v in val_features])
    if tm.shape[1] != vm.shape[1]:
        raise ShapeError("training and validation features differ in dimension")
    scores = _score_matrix(tm, vm)
    ids = [t.sample_id for t in train_features]
    zero = {i for i, t in zip(ids, tm) if not t.any()}
    entries = sorted(zip(ids, scores.tolist()), key=lambda e: (-e[1], e[0]))
    ranking = InfluenceRanking(entries, keep_fraction, zero)
    return ranking, [sid for sid, _ in entries[:keep_count(len(entries), keep_fraction)]]


def warmup_and_featurize(model: AdapterModel, crude_train, validation, warmup_steps: int,
                         lr: float, sketch_seed: int, d_out: int = DEFAULT_SKETCH_DIM):
    """Full-batch SGD warm-up on ``crude_train``, then one projected gradient per sample.

    Samples are ``(sample_id, features, label)`` triples. Returns
    ``(train_features, val_features)``.
    """
    crude_train, validation = list(crude_train), list(validation)
    if not crude_train or not validation:
        raise InputError("training and validation sets must be nonempty")
    batch = [(x, y) for _, x, y in crude_train]
    for _ in range(warmup_steps):
        model = sgd_step(model, batch, lr)
    sketch = build_sketch(model.n_params, d_out, sketch_seed)

    def featurize(samples):
        grads = [adapter_loss_and_gradient(model, (x, y))[1] for _, x, y in samples]
        return project_gradients(sketch, grads, [sid for sid, _, _ in samples])

    return featurize(crude_train), featurize(validation)
