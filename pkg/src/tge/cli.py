"""Command-line entry point: ``tge <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 sweep finished with failed rows.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AblationSpec, ablate_tokens, corpus_mean, degradation_metric
from .anchored import compress_grids, merge_reports
from .config import RunConfig, reference_config
from .encoder import AdapterModel, EncoderParams
from .errors import ConfigError, InputError, TGEError
from .fixtures import SCENARIOS, Manifest, PixelTiles, generate, load_samples, model_from_json, write_json
from .influence import rank_and_select, warmup_and_featurize
from .token_model import (
    GridLayout,
    display_visual_tokens,
    load_grid,
    patch_count,
    save_grid,
    reference_flops_model,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("tge")


class UsageError(TGEError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("TGE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("tge %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(levels.get(level, logging.WARNING))
    log.propagate = False


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def layout_hash(layout: dict) -> str:
    return hashlib.sha256(_dumps(layout).encode()).hexdigest()[:12]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- commands


def cmd_gen_fixtures(args, cfg: RunConfig) -> int:
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    seed = args.seed if args.seed is not None else 0
    path = generate(args.out, seed, args.scenario, cfg.layout(), cfg["encoder.channels"])
    print(path)
    return EXIT_OK


def cmd_compress(args, cfg: RunConfig) -> int:
    manifest = Manifest(args.input)
    if manifest.kind != "pixels":
        raise InputError(f"{args.input} holds {manifest.kind}, compress needs pixel grids")
    layout = manifest.layout
    enc = cfg.encoder()
    seed = args.seed if args.seed is not None else enc.seed
    enc = EncoderParams(enc.dim, enc.layers, enc.vocab, seed, layout.patch_px, enc.channels)
    selection = cfg.selection()
    log.info("compressing %d grids with %d job(s)", len(manifest), args.jobs)
    results = compress_grids(PixelTiles(manifest), layout, enc, cfg.affinity(), selection, args.jobs)
    report = merge_reports(results, layout, selection, reference_flops_model())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for g, (tokens, grid_report) in enumerate(results):
        save_grid(tokens.as_grid(f"grid-{g}"), out / f"grid_{g:04d}.tgr")
        write_json(out / f"grid_{g:04d}.json", {
            "grid": g,
            "source_indices": tokens.source_indices,
            "scores": tokens.scores,
            "cluster_sizes": grid_report.cluster_sizes,
        })
    overview = cfg["report.overview_tokens"]
    summary = {
        "format": "tge-compress-report",
        "version": 1,
        "layout": layout.to_dict(),
        "layout_hash": layout_hash(layout.to_dict()),
        "grids_total": len(results),
        "raw_tokens_per_grid": patch_count(layout)[1],
        "tokens_per_grid": report.tokens_per_grid,
        "visual_tokens": report.retained_token_count,
        "overview_tokens": overview,
        "visual_tokens_display": display_visual_tokens(report.retained_token_count, overview),
        "original_token_count": report.original_token_count,
        "pooled_token_count": report.pooled_token_count,
        "compression_ratio": float(report.compression_ratio),
        "compression_ratio_exact": str(report.compression_ratio),
        "estimated_tflops": round(report.estimated_tflops, 6),
    }
    write_json(out / "report.json", summary)
    if args.json:
        print(_dumps(summary))
    else:
        print(f"{summary['visual_tokens']} visual tokens ({summary['visual_tokens_display']}), "
              f"{summary['tokens_per_grid']} per grid, {summary['estimated_tflops']:.2f} TFLOPs")
    return EXIT_OK


def cmd_select_data(args, cfg: RunConfig) -> int:
    train = load_samples(args.train)
    val = load_samples(args.validation)
    if not train or not val:
        raise InputError("training and validation manifests must list samples")
    dims = {len(x) for _, x, _ in train + val}
    if len(dims) != 1:
        raise InputError(f"samples disagree on feature dimension: {sorted(dims)}")
    in_dim = dims.pop()
    classes = max(y for _, _, y in train + val) + 1
    if classes < 2:
        classes = 2
    rank = cfg["influence.rank"]
    if not rank < min(in_dim, classes):
        raise ConfigError(f"influence.rank={rank} must be below min(in_dim={in_dim}, classes={classes})")
    model = AdapterModel.random(in_dim, rank, classes, cfg["influence.model_seed"])
    sketch_seed = args.seed if args.seed is not None else cfg["influence.sketch_seed"]
    train_f, val_f = warmup_and_featurize(model, train, val, cfg["influence.warmup_steps"],
                                          cfg["influence.lr"], sketch_seed, cfg["influence.d_out"])
    ranking, selected = rank_and_select(train_f, val_f, cfg["influence.keep_fraction"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chosen = set(selected)
    lines = []
    for sid, score in ranking.entries:
        row = {"sample_id": sid, "score": score, "selected": sid in chosen}
        if sid in ranking.zero_gradient:
            row["zero_gradient"] = True
        lines.append(_dumps(row) + "\n")
    (out / "ranking.jsonl").write_text("".join(lines), encoding="utf-8")
    (out / "selected.txt").write_text("".join(f"{s}\n" for s in selected), encoding="utf-8")
    print(f"selected {len(selected)} of {len(train)} samples")
    return EXIT_OK


def _ablation_context(manifest: Manifest, cfg: RunConfig):
    grids = [manifest.grid(i) for i in range(len(manifest))]
    mean_path = manifest.extra_path("corpus_mean")
    mean = load_grid(mean_path).tokens[0].astype(np.float64) if mean_path else corpus_mean(grids)
    proxy_path = manifest.extra_path("proxy")
    if proxy_path:
        model = model_from_json(json.loads(proxy_path.read_text(encoding="utf-8")))
        target = int(manifest.data.get("target_class", cfg["ablation.target_class"]))
    else:
        model = AdapterModel.random(grids[0].dim, 1, 2, cfg["ablation.seed"])
        target = cfg["ablation.target_class"]
    layout = manifest.layout
    if layout is None and grids[0].rows == grids[0].cols:
        side = grids[0].rows * cfg["layout.patch_px"]
        layout = GridLayout(side, side, side, cfg["layout.patch_px"])
    return grids, mean, model, target, layout


def _ablate_row(args):
    grid_id, grid, text, mean, model, target, layout = args
    try:
        spec = AblationSpec.from_dict(json.loads(text))
        after, idx = ablate_tokens(grid, spec, mean, layout)
        res = degradation_metric(model, grid, after, target, idx, mean)
    except (TGEError, ValueError, TypeError, KeyError) as exc:
        return {"grid_id": grid_id, "spec_text": text, "error": str(exc)}
    return {"grid_id": grid_id, "spec": spec.to_dict(), "ablated_count": len(idx),
            "metric_before": res.metric_before, "metric_after": res.metric_after,
            "decrease_percent": res.decrease_percent}


def cmd_ablate(args, cfg: RunConfig) -> int:
    manifest = Manifest(args.grids)
    if manifest.kind != "tokens":
        raise InputError(f"{args.grids} holds {manifest.kind}, ablate needs token grids")
    texts = [line.strip() for line in Path(args.specs).read_text(encoding="utf-8").splitlines()]
    texts = [t for t in texts if t and not t.startswith("#")]
    if args.seed is not None:
        cfg.set("ablation.seed", args.seed)
    grids, mean, model, target, layout = _ablation_context(manifest, cfg)
    tasks = [(g, grid, t, mean, model, target, layout) for g, grid in enumerate(grids) for t in texts]
    if args.jobs > 1 and tasks:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_ablate_row, tasks))
    else:
        rows = [_ablate_row(t) for t in tasks]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.jsonl").write_text("".join(_dumps(r) + "\n" for r in rows), encoding="utf-8")
    failed = sum("error" in r for r in rows)
    for r in rows:
        if "error" in r:
            log.warning("grid %s: %s", r["grid_id"], r["error"])
    print(f"{len(rows) - failed} ablation rows, {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


def stats_rows(reports: list[dict]) -> list[dict]:
    """Table rows grouped by layout hash, most tokens per grid first within a group."""
    rows = []
    for rep in reports:
        raw = rep["raw_tokens_per_grid"]
        tpg = rep["tokens_per_grid"]
        ratio = raw / tpg
        rows.append({
            "layout_hash": rep["layout_hash"],
            "compression": f"{ratio:g}x",
            "tokens_per_grid": tpg,
            "visual_tokens": rep["visual_tokens"],
            "visual_tokens_display": rep["visual_tokens_display"],
            "tflops": rep["estimated_tflops"],
        })
    first_seen = {}
    for r in rows:
        first_seen.setdefault(r["layout_hash"], len(first_seen))
    return sorted(rows, key=lambda r: (first_seen[r["layout_hash"]], -r["tokens_per_grid"]))


def format_table(rows: list[dict]) -> str:
    header = ("Layout", "Compression", "Tokens/Grid", "Visual Tokens", "TFLOPs")
    body = [(r["layout_hash"], r["compression"], str(r["tokens_per_grid"]),
             r["visual_tokens_display"], f"{r['tflops']:.2f}") for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i < 2 else c.rjust(w)  # noqa: E731
                                  for i, (c, w) in enumerate(zip(cells, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines)


def cmd_stats(args, cfg: RunConfig) -> int:
    reports = []
    for p in args.reports:
        path = Path(p)
        if path.is_dir():
            path = path / "report.json"
        try:
            reports.append(json.loads(path.read_text(encoding="utf-8")))
        except OSError as exc:
            raise OSError(f"cannot read report {path}: {exc.strerror}") from None
    rows = stats_rows(reports)
    print(_dumps({"rows": rows}) if args.json else format_table(rows))
    return EXIT_OK


def cmd_reference_config(args, cfg: RunConfig) -> int:
    sys.stdout.write(reference_config())
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="root seed (fixture seed, encoder seed or sketch seed per command)")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    common.add_argument("--json", action="store_true", help="machine-readable stdout")

    parser = _Parser(prog="tge", description="Token compression and data selection for UHR token grids.",
                     epilog=reference_config(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-fixtures", parents=[common], help="write a deterministic fixture scenario")
    p.add_argument("--scenario", required=True, help=", ".join(SCENARIOS))
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("compress", parents=[common], help="cluster-pool and select tokens per grid")
    p.add_argument("input", help="pixel manifest from gen-fixtures")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("select-data", parents=[common], help="rank training samples by influence")
    p.add_argument("train", help="training sample manifest")
    p.add_argument("validation", help="validation sample manifest")
    p.set_defaults(func=cmd_select_data)

    p = sub.add_parser("ablate", parents=[common], help="token ablation sweep")
    p.add_argument("grids", help="token-grid manifest")
    p.add_argument("specs", help="JSON-lines ablation specs")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", parents=[common], help="tabulate compression reports")
    p.add_argument("reports", nargs="+", help="report.json files or compress output dirs")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("reference-config", parents=[common], help="print every config key and default")
    p.set_defaults(func=cmd_reference_config)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"tge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TGEError, OSError, ValueError) as exc:
        print(f"tge: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
