"""Deterministic fixture scenarios and the manifests that describe them on disk."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .analysis import signal_fixture
from .encoder import AdapterModel, seeded_rng
from .errors import InputError, ManifestError
from .token_model import GridLayout, TokenGrid, load_grid, patch_count, save_grid

SCENARIOS = ("uniform", "two-region", "outlier-norm", "uhr-mosaic", "signal", "samples")
MOSAIC_LAYOUT = GridLayout(8064, 8064, 336, 14)
MOSAIC_TILES = 6


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(_dump(obj), encoding="utf-8")


def _sea(rng, side, level=-0.6, noise=0.02):
    return level + noise * rng.normal(size=(side, side))


def _scatter_objects(rng, px, count, lo=10, hi=40, region=None):
    side = px.shape[0]
    x_lo, x_hi = region if region else (0, side)
    for _ in range(count):
        s = int(rng.integers(lo, hi))
        y = int(rng.integers(0, side - s))
        x = int(rng.integers(x_lo, max(x_lo + 1, x_hi - s)))
        px[y:y + s, x:x + s] = rng.uniform(-1.0, 1.0, size=(s, s))
    return px


def uniform_pixels(side=336, value=0.25):
    return np.full((side, side), value)


def two_region_pixels(seed, side=336):
    """Left half open water, right half land cluttered with objects."""
    rng = seeded_rng(seed, 500)
    px = _sea(rng, side)
    px[:, side // 2:] = 0.3 + 0.02 * rng.normal(size=(side, side - side // 2))
    return _scatter_objects(rng, px, 30, region=(side // 2, side))


def mosaic_tiles(seed, count=MOSAIC_TILES, side=336):
    """Water tiles with a varying number of scattered objects."""
    rng = seeded_rng(seed, 501)
    return [_scatter_objects(rng, _sea(rng, side, level=-0.6 + 0.1 * t), 30 + 5 * t)
            for t in range(count)]


def outlier_norm_tokens(seed, rows=10, cols=10, dim=8, outlier=37):
    """``rows*cols - 1`` unit-norm tokens and one token of norm 10 at ``outlier``."""
    rng = seeded_rng(seed, 502)
    x = rng.normal(size=(rows * cols, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x[outlier] *= 10.0
    return TokenGrid.from_tokens(x, rows, cols, f"outlier-norm-{seed}")


def sample_sets(seed, n_train=40, n_val=10, in_dim=8, classes=2):
    """Two-class Gaussian blobs: ``(train, validation)`` lists of (id, features, label)."""
    rng = seeded_rng(seed, 503)
    centers = rng.normal(size=(classes, in_dim))

    def draw(prefix, n):
        labels = np.arange(n) % classes
        feats = centers[labels] + 0.5 * rng.normal(size=(n, in_dim))
        return [(f"{prefix}-{i:03d}", feats[i], int(labels[i])) for i in range(n)]

    return draw("train", n_train), draw("val", n_val)


def model_to_json(model: AdapterModel) -> dict:
    return {"base": model.base.tolist(), "factor_a": model.factor_a.tolist(),
            "factor_b": model.factor_b.tolist()}


def model_from_json(d: dict) -> AdapterModel:
    return AdapterModel(np.array(d["base"]), np.array(d["factor_a"]), np.array(d["factor_b"]))


def _pixel_grid(px, tag):
    return TokenGrid(np.asarray(px, dtype=np.float32)[:, :, None], tag)


def write_sample_manifest(out_dir, name, samples) -> Path:
    out_dir = Path(out_dir)
    (out_dir / name).mkdir(parents=True, exist_ok=True)
    entries = []
    for sid, feats, label in samples:
        rel = f"{name}/{sid}.tgr"
        save_grid(TokenGrid(np.asarray(feats, dtype=np.float32)[None, None, :], sid), out_dir / rel)
        entries.append({"id": sid, "path": rel, "label": int(label)})
    path = out_dir / f"{name}.json"
    write_json(path, {"format": "tge-samples", "version": 1, "samples": entries})
    return path


def generate(out_dir, seed: int, scenario: str, layout: GridLayout | None = None,
             channels: int = 1) -> Path:
    """Write one scenario's files under ``out_dir`` and return the manifest path."""
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    if channels != 1 and scenario in ("uniform", "two-region", "uhr-mosaic"):
        raise InputError("pixel fixtures are single-channel")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layout = layout or GridLayout(336, 336)
    manifest = {"format": "tge-manifest", "version": 1, "scenario": scenario, "seed": int(seed),
                "params": {"channels": channels}}

    if scenario == "samples":
        train, val = sample_sets(seed)
        manifest.update(kind="samples", layout=None, grids=[],
                        train=write_sample_manifest(out, "train", train).name,
                        validation=write_sample_manifest(out, "validation", val).name)
    elif scenario == "uhr-mosaic":
        tiles = mosaic_tiles(seed)
        for t, px in enumerate(tiles):
            save_grid(_pixel_grid(px, f"tile-{t}"), out / f"tile_{t:02d}.tgr")
        grids_total = patch_count(MOSAIC_LAYOUT)[0]
        pick = seeded_rng(seed, 504).integers(0, len(tiles), size=grids_total)
        manifest.update(kind="pixels", layout=MOSAIC_LAYOUT.to_dict(), grids_total=grids_total,
                        grids=[{"index": g, "path": f"tile_{int(t):02d}.tgr"} for g, t in enumerate(pick)])
    elif scenario in ("uniform", "two-region"):
        single = GridLayout(layout.grid_side_px, layout.grid_side_px, layout.grid_side_px, layout.patch_px)
        side = single.grid_side_px
        px = uniform_pixels(side) if scenario == "uniform" else two_region_pixels(seed, side)
        save_grid(_pixel_grid(px, scenario), out / "grid_000.tgr")
        manifest.update(kind="pixels", layout=single.to_dict(), grids_total=1,
                        grids=[{"index": 0, "path": "grid_000.tgr"}])
    elif scenario == "outlier-norm":
        save_grid(outlier_norm_tokens(seed), out / "grid_000.tgr")
        manifest.update(kind="tokens", layout=None, grids_total=1,
                        grids=[{"index": 0, "path": "grid_000.tgr"}])
    else:
        fx = signal_fixture(seed, layout=GridLayout(336, 336))
        save_grid(fx.grid, out / "grid_000.tgr")
        save_grid(TokenGrid(fx.corpus_mean.astype(np.float32)[None, None, :], "corpus-mean"),
                  out / "corpus_mean.tgr")
        write_json(out / "proxy.json", model_to_json(fx.model))
        manifest.update(kind="tokens", layout=fx.layout.to_dict(), grids_total=1,
                        grids=[{"index": 0, "path": "grid_000.tgr"}],
                        corpus_mean="corpus_mean.tgr", proxy="proxy.json",
                        target_class=fx.target_class, bbox=list(fx.bbox))
    path = out / "manifest.json"
    write_json(path, manifest)
    return path


class Manifest:
    """A loaded fixture manifest; grid files are read lazily and cached by path."""

    def __init__(self, path):
        self.path = Path(path)
        self.root = self.path.parent
        try:
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read manifest {self.path}: {exc}") from None
        if self.data.get("format") != "tge-manifest":
            raise ManifestError(f"{self.path} is not a tge manifest")
        self._cache = {}

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def layout(self) -> GridLayout | None:
        lay = self.data.get("layout")
        return GridLayout(**lay) if lay else None

    def __len__(self):
        return len(self.data["grids"])

    def grid(self, i) -> TokenGrid:
        rel = self.data["grids"][i]["path"]
        if rel not in self._cache:
            self._cache[rel] = load_grid(self.root / rel)
        return self._cache[rel]

    def pixels(self, i) -> np.ndarray:
        g = self.grid(i)
        return g.data[:, :, 0] if g.dim == 1 else g.data

    def extra_path(self, key):
        rel = self.data.get(key)
        return self.root / rel if rel else None


class PixelTiles:
    """Sequence of per-grid pixel arrays backed by a manifest."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, i):
        return self.manifest.pixels(i)


def load_samples(path):
    """Read a sample manifest into ``[(id, features, label), ...]``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read sample manifest {path}: {exc}") from None
    out = []
    for entry in doc.get("samples", []):
        sid = entry.get("id")
        f = path.parent / entry.get("path", "")
        if not f.is_file():
            raise ManifestError(f"sample {sid!r}: file {f} not found")
        grid = load_grid(f)
        out.append((str(sid), grid.tokens[0].astype(np.float64), int(entry["label"])))
    return out
