"""Flat ``section.key=value`` run configuration."""

from __future__ import annotations

from pathlib import Path

from .affinity import AffinityConfig
from .anchored import SelectionConfig
from .encoder import EncoderParams
from .errors import ConfigError, TGEError
from .token_model import DEFAULT_OVERVIEW_TOKENS, GridLayout

# key -> (type, default, help)
DEFAULTS = {
    "layout.image_width": (int, 336, "image width in pixels (non-mosaic fixtures)"),
    "layout.image_height": (int, 336, "image height in pixels (non-mosaic fixtures)"),
    "layout.grid_side_px": (int, 336, "pixels per grid side"),
    "layout.patch_px": (int, 14, "pixels per patch side"),
    "encoder.dim": (int, 32, "toy encoder hidden size"),
    "encoder.layers": (int, 3, "toy encoder depth (>= 2)"),
    "encoder.vocab": (int, 64, "unembedding rows for the logit lens"),
    "encoder.seed": (int, 0, "encoder weight seed"),
    "encoder.channels": (int, 1, "pixel channels"),
    "affinity.neighborhood": (int, 8, "4 or 8 connected neighbourhood"),
    "affinity.steps_n": (int, 3, "cluster growth rounds"),
    "affinity.join_threshold": (float, 0.85, "minimum cosine to join a cluster"),
    "affinity.temperature": (float, 0.1, "softmax temperature of neighbour affinities"),
    "selection.ratio_r": (float, 1.0, "fraction of pooled tokens kept when no budget is set"),
    "selection.budget": (str, "24", "tokens kept per grid, or 'none' to use ratio_r"),
    "report.overview_tokens": (int, DEFAULT_OVERVIEW_TOKENS, "extra overview tokens in the k-display"),
    "influence.keep_fraction": (float, 0.7, "fraction of training samples kept"),
    "influence.d_out": (int, 8192, "random projection dimension"),
    "influence.sketch_seed": (int, 0, "projection seed"),
    "influence.model_seed": (int, 0, "adapter initialisation seed"),
    "influence.rank": (int, 1, "adapter rank"),
    "influence.warmup_steps": (int, 10, "full-batch SGD warm-up steps"),
    "influence.lr": (float, 0.1, "warm-up learning rate"),
    "ablation.seed": (int, 0, "seed for the fallback proxy classifier"),
    "ablation.target_class": (int, 1, "target class of the fallback proxy"),
}


def _coerce(key, raw):
    kind = DEFAULTS[key][0]
    if kind is str:
        return raw
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


class RunConfig(dict):
    """All run settings keyed by dotted name. Unknown keys are rejected."""

    def __init__(self, values=None):
        super().__init__({k: v[1] for k, v in DEFAULTS.items()})
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self[key] = _coerce(key, value) if isinstance(value, str) else value

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def validate(self):
        try:
            self.layout()
            self.encoder()
            self.affinity()
            self.selection()
        except TGEError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self["influence.keep_fraction"] <= 1:
            raise ConfigError("influence.keep_fraction must lie in (0, 1]")
        if self["influence.d_out"] < 1 or self["influence.rank"] < 1:
            raise ConfigError("influence.d_out and influence.rank must be positive")
        if self["influence.warmup_steps"] < 0 or self["influence.lr"] < 0:
            raise ConfigError("influence warm-up settings must be nonnegative")
        if self["report.overview_tokens"] < 0:
            raise ConfigError("report.overview_tokens must be nonnegative")

    def layout(self) -> GridLayout:
        return GridLayout(self["layout.image_width"], self["layout.image_height"],
                          self["layout.grid_side_px"], self["layout.patch_px"])

    def encoder(self) -> EncoderParams:
        return EncoderParams(self["encoder.dim"], self["encoder.layers"], self["encoder.vocab"],
                             self["encoder.seed"], self["layout.patch_px"], self["encoder.channels"])

    def affinity(self) -> AffinityConfig:
        return AffinityConfig(self["affinity.neighborhood"], self["affinity.steps_n"],
                              self["affinity.join_threshold"], self["affinity.temperature"])

    def selection(self) -> SelectionConfig:
        budget = str(self["selection.budget"]).strip().lower()
        if budget in ("none", ""):
            return SelectionConfig(self["selection.ratio_r"], None)
        try:
            n = int(budget)
        except ValueError:
            raise ConfigError(f"selection.budget: {budget!r} is neither an integer nor 'none'") from None
        return SelectionConfig(self["selection.ratio_r"], n)

    def dumps(self) -> str:
        return "".join(f"{k}={self[k]}\n" for k in sorted(self))


def reference_config() -> str:
    """Every key with its default and a one-line description."""
    lines = ["# tge reference configuration; every key shown at its default"]
    for key, (_, default, text) in DEFAULTS.items():
        lines.append(f"# {text}")
        lines.append(f"{key}={default}")
    return "\n".join(lines) + "\n"
