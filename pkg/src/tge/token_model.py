"""Token grids, grid geometry, token/FLOPs accounting and the TGR1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BudgetError,
    DegenerateFitError,
    GridFormatError,
    LayoutError,
    NumericError,
    ShapeError,
    TruncationError,
)

MAGIC = b"TGR1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIH")

# 576 raw tokens of the 336 px global overview view, pooled 2x2. Added on top of the
# grid tokens when the visual-token total is displayed ("14.0k" for 13824 grid tokens).
DEFAULT_OVERVIEW_TOKENS = 144

# (visual tokens, TFLOPs) at 24x / 32x / 48x / 96x compression of an 8064 px image.
PUBLISHED_FLOPS_ROWS = ((13824, 198.06), (10368, 149.08), (6912, 100.11), (3456, 51.13))


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """rows x cols lattice of ``dim``-vectors, stored float32 row-major.

    ``data`` has shape ``(rows, cols, dim)`` and is made read-only on construction.
    """

    data: np.ndarray
    tag: str = ""

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"token grid needs shape (rows, cols, dim), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("token grid contains NaN or Inf")
        if arr is self.data:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_tokens(cls, tokens, rows: int, cols: int, tag: str = "") -> "TokenGrid":
        tokens = np.asarray(tokens, dtype=np.float32)
        if tokens.ndim != 2 or tokens.shape[0] != rows * cols:
            raise ShapeError(f"expected {rows * cols} tokens, got array of shape {tokens.shape}")
        return cls(tokens.reshape(rows, cols, tokens.shape[1]), tag)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_tokens(self) -> int:
        return self.rows * self.cols

    @property
    def tokens(self) -> np.ndarray:
        """(n_tokens, dim) read-only view in row-major token order."""
        return self.data.reshape(self.n_tokens, self.dim)

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.tag == other.tag and self.data.shape == other.data.shape and (
            self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class GridLayout:
    image_width: int
    image_height: int
    grid_side_px: int = 336
    patch_px: int = 14

    def __post_init__(self):
        for name in ("image_width", "image_height", "grid_side_px", "patch_px"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise LayoutError(f"{name} must be a positive integer, got {v!r}")
        if self.image_width % self.grid_side_px or self.image_height % self.grid_side_px:
            raise LayoutError(
                f"image {self.image_width}x{self.image_height} is not a multiple of "
                f"grid side {self.grid_side_px}"
            )
        if self.grid_side_px % self.patch_px:
            raise LayoutError(f"grid side {self.grid_side_px} is not a multiple of patch {self.patch_px}")

    @property
    def grids_x(self) -> int:
        return self.image_width // self.grid_side_px

    @property
    def grids_y(self) -> int:
        return self.image_height // self.grid_side_px

    @property
    def patches_per_side(self) -> int:
        return self.grid_side_px // self.patch_px

    def to_dict(self) -> dict:
        return {
            "image_width": int(self.image_width),
            "image_height": int(self.image_height),
            "grid_side_px": int(self.grid_side_px),
            "patch_px": int(self.patch_px),
        }


@dataclass(frozen=True)
class FlopsModel:
    slope_tflops_per_token: float
    intercept_tflops: float

    def __post_init__(self):
        if not self.slope_tflops_per_token > 0:
            raise DegenerateFitError(f"FLOPs slope must be positive, got {self.slope_tflops_per_token}")


@dataclass
class CompressionReport:
    original_token_count: int
    retained_token_count: int
    tokens_per_grid: int
    compression_ratio: Fraction
    estimated_tflops: float
    retained_indices: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)
    pooled_token_count: Optional[int] = None

    def validate(self) -> None:
        if self.retained_token_count > self.original_token_count:
            raise BudgetError("retained more tokens than the original grid holds")
        idx = self.retained_indices
        if len(set(idx)) != len(idx):
            raise BudgetError("retained indices are not unique")
        if idx and (min(idx) < 0 or max(idx) >= self.original_token_count):
            raise BudgetError("retained index out of range")
        if self.cluster_sizes and sum(self.cluster_sizes) != self.original_token_count:
            raise BudgetError("cluster sizes do not cover the original tokens")

    def to_dict(self) -> dict:
        return {
            "original_token_count": int(self.original_token_count),
            "retained_token_count": int(self.retained_token_count),
            "tokens_per_grid": int(self.tokens_per_grid),
            "compression_ratio": float(self.compression_ratio),
            "compression_ratio_exact": str(self.compression_ratio),
            "estimated_tflops": float(self.estimated_tflops),
            "pooled_token_count": self.pooled_token_count,
            "retained_indices": [int(i) for i in self.retained_indices],
            "cluster_sizes": [int(s) for s in self.cluster_sizes],
        }


def patch_count(layout: GridLayout) -> tuple[int, int, int]:
    """Return ``(grids_total, tokens_per_grid_raw, tokens_total_raw)``."""
    grids = layout.grids_x * layout.grids_y
    per_grid = layout.patches_per_side ** 2
    return grids, per_grid, grids * per_grid


def token_budget(layout: GridLayout, tokens_per_grid: int) -> int:
    grids, raw, _ = patch_count(layout)
    if tokens_per_grid < 1:
        raise BudgetError(f"tokens_per_grid must be >= 1, got {tokens_per_grid}")
    if tokens_per_grid > raw:
        raise BudgetError(f"tokens_per_grid {tokens_per_grid} exceeds the {raw} raw tokens per grid")
    return grids * tokens_per_grid


def format_thousands(count: int) -> str:
    """``13968 -> '14.0k'``: one decimal in thousands, round half up."""
    value = (Decimal(int(count)) / 1000).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{value}k"


def display_visual_tokens(grid_tokens: int, overview_tokens: int = DEFAULT_OVERVIEW_TOKENS) -> str:
    return format_thousands(grid_tokens + overview_tokens)


def fit_flops_model(rows: Sequence[tuple[float, float]]) -> FlopsModel:
    """Ordinary least-squares line through ``(visual_tokens, tflops)`` pairs."""
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise DegenerateFitError("need at least two (tokens, tflops) rows")
    x, y = arr[:, 0], arr[:, 1]
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateFitError("all token counts are identical")
    slope = float(dx @ (y - y.mean())) / sxx
    return FlopsModel(slope, float(y.mean() - slope * x.mean()))


def estimate_flops(model: FlopsModel, visual_tokens: int) -> float:
    return max(0.0, model.slope_tflops_per_token * visual_tokens + model.intercept_tflops)


def reference_flops_model() -> FlopsModel:
    return fit_flops_model(PUBLISHED_FLOPS_ROWS)


def pool_baseline(grid: TokenGrid, k: int) -> TokenGrid:
    """Average-pool each k x k block of tokens (the fixed-pooling baseline)."""
    if k < 1 or grid.rows % k or grid.cols % k:
        raise LayoutError(f"grid {grid.rows}x{grid.cols} is not divisible by pool size {k}")
    blocks = grid.data.astype(np.float64).reshape(grid.rows // k, k, grid.cols // k, k, grid.dim)
    return TokenGrid(blocks.mean(axis=(1, 3)), grid.tag)


def encode_grid(grid: TokenGrid) -> bytes:
    tag = grid.tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise ShapeError("tag longer than 65535 bytes")
    header = _HEADER.pack(MAGIC, VERSION, grid.rows, grid.cols, grid.dim, len(tag))
    return header + tag + grid.data.astype("<f4", copy=False).tobytes()


def decode_grid(buf: bytes) -> TokenGrid:
    if len(buf) < _HEADER.size:
        raise TruncationError(f"file holds {len(buf)} bytes, header needs {_HEADER.size}", len(buf))
    magic, version, rows, cols, dim, tag_len = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise GridFormatError(f"unsupported version {version}", 4)
    if min(rows, cols, dim) < 1:
        raise GridFormatError(f"zero dimension in header {rows}x{cols}x{dim}", 6)
    pos = _HEADER.size
    if len(buf) < pos + tag_len:
        raise TruncationError("tag runs past end of file", len(buf))
    try:
        tag = buf[pos:pos + tag_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GridFormatError("tag is not valid UTF-8", pos + exc.start) from None
    pos += tag_len
    need = rows * cols * dim * 4
    if len(buf) - pos < need:
        raise TruncationError(f"payload needs {need} bytes, found {len(buf) - pos}", len(buf))
    if len(buf) - pos > need:
        raise GridFormatError("trailing bytes after payload", pos + need)
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols * dim, offset=pos)
    try:
        return TokenGrid(data.astype(np.float32).reshape(rows, cols, dim), tag)
    except NumericError:
        raise GridFormatError("payload contains NaN or Inf", pos) from None


def save_grid(grid: TokenGrid, path) -> None:
    Path(path).write_bytes(encode_grid(grid))


def load_grid(path) -> TokenGrid:
    return decode_grid(Path(path).read_bytes())
