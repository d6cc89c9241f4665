"""Anchored token selection and the two-stage grid/image compression pipeline."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .affinity import AffinityConfig, cluster_grid, pool_clusters
from .encoder import AttentionMap, EncodedOutput, EncoderParams, encode
from .errors import BudgetError, GridError, InputError, ShapeError, TGEError
from .token_model import (
    CompressionReport,
    FlopsModel,
    GridLayout,
    TokenGrid,
    estimate_flops,
    patch_count,
    reference_flops_model,
)


@dataclass(frozen=True)
class SelectionConfig:
    ratio_r: float = 1.0
    budget_override: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.ratio_r <= 1.0:
            raise InputError(f"ratio_r must lie in (0, 1], got {self.ratio_r}")
        if self.budget_override is not None and self.budget_override < 1:
            raise InputError("budget_override must be >= 1")

    def budget_for(self, n: int) -> int:
        if self.budget_override is not None:
            return self.budget_override
        return max(1, math.floor(n * self.ratio_r + 0.5))


@dataclass(frozen=True)
class RetainedTokens:
    vectors: np.ndarray
    source_indices: list
    scores: list

    def __post_init__(self):
        if not len(self.vectors) == len(self.source_indices) == len(self.scores):
            raise ShapeError("vectors, source_indices and scores differ in length")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise InputError("scores must be non-increasing")

    def __len__(self):
        return len(self.source_indices)

    def as_grid(self, tag: str = "") -> TokenGrid:
        return TokenGrid(np.asarray(self.vectors, dtype=np.float32)[None, :, :], tag)


def score_tokens(cls_attention) -> list[tuple[int, float]]:
    """Tokens ranked by attention weight, highest first; ties go to the lower index."""
    w = cls_attention.weights if isinstance(cls_attention, AttentionMap) else np.asarray(cls_attention)
    order = np.lexsort((np.arange(len(w)), -w))
    return [(int(i), float(w[i])) for i in order]


def _top(weights: np.ndarray, r: int) -> np.ndarray:
    return np.lexsort((np.arange(len(weights)), -weights))[:r]


def select_anchored(tokens, cls_attention, config: SelectionConfig) -> RetainedTokens:
    x = np.asarray(tokens)
    w = cls_attention.weights if isinstance(cls_attention, AttentionMap) else np.asarray(cls_attention, dtype=np.float64)
    n = len(w)
    if x.shape[0] != n:
        raise ShapeError(f"{x.shape[0]} tokens but {n} attention weights")
    r = config.budget_for(n)
    if r > n:
        raise BudgetError(f"budget {r} exceeds the {n} available tokens")
    keep = _top(w, r)
    return RetainedTokens(x[keep].copy(), [int(i) for i in keep], [float(w[i]) for i in keep])


def compress_grid(grid: TokenGrid, encoder_output: EncodedOutput, affinity: AffinityConfig,
                  selection: SelectionConfig):
    """Cluster-pool the grid, then keep the most attended pooled tokens.

    A pooled token's score is the summed CLS attention of its members and its
    source index is its smallest member index. When pooling already leaves no
    more tokens than the budget, every pooled token is kept.
    """
    cls = encoder_output.cls_attention_second_to_last
    if len(cls) != grid.n_tokens:
        raise ShapeError(f"attention map covers {len(cls)} tokens, grid has {grid.n_tokens}")
    assignment = cluster_grid(grid, affinity)
    pooled, frag = pool_clusters(grid, assignment)
    member_weight = np.zeros(assignment.cluster_count)
    np.add.at(member_weight, assignment.cluster_of, cls.weights)
    # pooled rows are in first-member order; bring the label-indexed weights along
    first_of_label = np.full(assignment.cluster_count, grid.n_tokens)
    np.minimum.at(first_of_label, assignment.cluster_of, np.arange(grid.n_tokens))
    member_weight = member_weight[np.argsort(first_of_label, kind="stable")]
    first = np.asarray(frag.retained_indices)

    budget = selection.budget_for(len(pooled))
    r = min(budget, len(pooled))
    keep = _top(member_weight, r)
    retained = RetainedTokens(pooled[keep], [int(first[k]) for k in keep],
                              [float(member_weight[k]) for k in keep])
    report = CompressionReport(
        original_token_count=grid.n_tokens,
        retained_token_count=r,
        tokens_per_grid=r,
        compression_ratio=Fraction(grid.n_tokens, r),
        estimated_tflops=0.0,
        retained_indices=list(retained.source_indices),
        cluster_sizes=frag.cluster_sizes,
        pooled_token_count=len(pooled),
    )
    report.validate()
    return retained, report


def grid_pixels(pixels, layout: GridLayout, g: int) -> np.ndarray:
    """Pixels of grid ``g`` (row-major over the mosaic).

    ``pixels`` is either a full (H, W[, C]) array or a sequence holding one
    array per grid.
    """
    if isinstance(pixels, np.ndarray):
        side = layout.grid_side_px
        gy, gx = divmod(g, layout.grids_x)
        if pixels.shape[:2] != (layout.image_height, layout.image_width):
            raise ShapeError(f"pixels {pixels.shape[:2]} do not match layout "
                             f"{layout.image_height}x{layout.image_width}")
        return pixels[gy * side:(gy + 1) * side, gx * side:(gx + 1) * side]
    return np.asarray(pixels[g])


def _compress_one(args):
    g, px, layout, encoder, affinity, selection = args
    try:
        out = encode(px, encoder, layout)
        return compress_grid(out.patch_grid(), out, affinity, selection)
    except TGEError as exc:
        raise GridError(g, exc) from exc


def compress_grids(pixels, layout: GridLayout, encoder: EncoderParams, affinity: AffinityConfig,
                   selection: SelectionConfig, jobs: int = 1):
    """Encode and compress every grid independently.

    Returns ``[(RetainedTokens, CompressionReport), ...]`` in grid order; the
    output does not depend on ``jobs``.
    """
    grids = patch_count(layout)[0]
    if not isinstance(pixels, np.ndarray) and len(pixels) != grids:
        raise ShapeError(f"expected {grids} grid tiles, got {len(pixels)}")
    tasks = ((g, grid_pixels(pixels, layout, g), layout, encoder, affinity, selection)
             for g in range(grids))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_compress_one, tasks, chunksize=8))
    return [_compress_one(t) for t in tasks]


def merge_reports(results, layout: GridLayout, selection: SelectionConfig,
                  flops: Optional[FlopsModel] = None) -> CompressionReport:
    """Combine per-grid results into one image report.

    Cluster sizes are concatenated in grid order and retained indices are mapped
    to the global numbering ``g * raw_tokens_per_grid + i``.
    """
    _, raw, total = patch_count(layout)
    kept = sum(len(r) for r, _ in results)
    nominal = selection.budget_for(raw)
    report = CompressionReport(
        original_token_count=total,
        retained_token_count=kept,
        tokens_per_grid=nominal,
        compression_ratio=Fraction(total, kept),
        estimated_tflops=estimate_flops(flops or reference_flops_model(), kept),
        retained_indices=[g * raw + i for g, (r, _) in enumerate(results) for i in r.source_indices],
        cluster_sizes=[s for _, rep in results for s in rep.cluster_sizes],
        pooled_token_count=sum(rep.pooled_token_count for _, rep in results),
    )
    report.validate()
    return report


def compress_image(pixels, layout: GridLayout, encoder: EncoderParams, affinity: AffinityConfig,
                   selection: SelectionConfig, flops: Optional[FlopsModel] = None, jobs: int = 1):
    """Compress a whole image grid by grid; returns ``(per-grid RetainedTokens, report)``.

    ``tokens_per_grid`` in the report is the nominal budget; the realised count
    per grid can be lower where clustering alone undershoots it.
    """
    results = compress_grids(pixels, layout, encoder, affinity, selection, jobs)
    return [r for r, _ in results], merge_reports(results, layout, selection, flops)
