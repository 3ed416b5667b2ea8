"""Flat key=value run configuration with a validated schema.

Config files are plain text, one "key = value" per line, '#' comments.
Unknown keys are rejected so typos fail loudly.  Full-scale values from
the original training recipe are noted next to the desk-scale defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Invalid configuration key or value."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default, help)
SCHEMA = {
    # synthetic dataset
    "data.dir": (str, "data", "dataset directory used by train/eval"),
    "data.classes": (int, 20, "total number of classes (val/test get ~20% each)"),
    "data.per_class": (int, 30, "videos generated per class"),
    "data.frames": (int, 16, "dense frames per video (M)"),  # full scale: 16
    "data.side": (int, 48, "raw frame side in pixels"),
    "data.channels": (int, 1, "frame channels (1 grayscale, 3 RGB)"),
    "data.event_min": (int, 4, "shortest event window in frames"),
    "data.event_max": (int, 8, "longest event window in frames"),
    "data.pattern_size": (int, 14, "side of the class pattern patch"),
    # scan network
    "scan.side": (int, 32, "frame side fed to the scan net (full scale: 64)"),
    "scan.channels": (int, 32, "scan feature channels C"),
    # temporal selector
    "selector.T": (int, 8, "frames kept by the selector"),
    "selector.n": (int, 500, "perturbation draws per selection"),
    "selector.sigma0": (float, 0.1, "initial selection temperature"),
    "selector.decay_every": (int, 40, "epochs between temperature decays (full scale: 2000)"),
    "selector.decay_factor": (float, 0.8, "multiplicative temperature decay"),
    "selector.zero_frac": (float, 0.05, "trailing fraction of training at exactly sigma=0"),
    "selector.d": (int, 16, "hidden width of the frame scorer"),
    # task adapter
    "adapter.dt": (int, 32, "task summary dimension (full scale: 128)"),
    # recognition head
    "head.D": (int, 64, "backbone feature dimension"),
    "head.Dout": (int, 128, "fused feature dimension (full scale: 2048)"),
    "head.side": (int, 64, "model input side produced by the amplifier (full scale: 224)"),
    # training
    "train.epochs": (int, 300, "training epochs (full scale: 15000)"),
    "train.episodes": (int, 20, "episodes per epoch (full scale: 200)"),
    "train.lr": (float, 0.01, "initial SGD learning rate"),
    "train.momentum": (float, 0.9, "SGD momentum"),
    "train.clip": (float, 5.0, "global gradient-norm clip (0 disables)"),
    "train.lr_decay": (float, 0.9, "multiplicative learning-rate decay"),
    "train.lr_decay_every": (int, 100, "epochs between lr decays (full scale: 5000)"),
    "train.n_way": (int, 5, "classes per episode (N)"),
    "train.k_shot": (int, 1, "support samples per class (K)"),
    "train.n_query": (int, 3, "query samples per class (Q)"),
    "train.baseline": (bool, False, "uniform-stride + identity-warp baseline variant"),
    # evaluation
    "eval.episodes": (int, 500, "meta-test episodes (full scale: 10000)"),
}

_PARSERS = {int: int, float: float, str: str, bool: _bool}


@dataclass
class RunConfig:
    """Validated flat configuration; access values with cfg[key]."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec[1] for k, spec in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key: {k}")
            merged[k] = v
        self.values = merged
        self._validate()

    def _validate(self):
        for key, (typ, _, _) in SCHEMA.items():
            v = self.values[key]
            if not isinstance(v, typ) or (typ is not bool and isinstance(v, bool)):
                raise ConfigError(f"{key}: expected {typ.__name__}, got {v!r}")
        if self.values["selector.T"] > self.values["data.frames"]:
            raise ConfigError("selector.T cannot exceed data.frames")
        if self.values["data.event_max"] > self.values["data.frames"]:
            raise ConfigError("data.event_max cannot exceed data.frames")
        if self.values["data.event_min"] < 1 or self.values["data.event_min"] > self.values["data.event_max"]:
            raise ConfigError("need 1 <= data.event_min <= data.event_max")
        if self.values["train.k_shot"] + self.values["train.n_query"] > self.values["data.per_class"]:
            raise ConfigError("train.k_shot + train.n_query exceeds data.per_class")
        if self.values["scan.side"] < 8:
            raise ConfigError("scan.side must be >= 8")

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key: {key}") from None

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = dict(self.values)
        for k, raw in overrides.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key: {k}")
            typ = SCHEMA[k][0]
            if isinstance(raw, str):
                try:
                    merged[k] = _PARSERS[typ](raw)
                except ValueError as exc:
                    raise ConfigError(f"{k}: {exc}") from None
            else:
                merged[k] = raw
        return RunConfig(merged)

    def items(self):
        return sorted(self.values.items())

    def echo_lines(self):
        """Stable key=value lines, e.g. for checkpoints and logs."""
        return [f"{k}={v}" for k, v in self.items()]


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        typ = SCHEMA[key][0]
        try:
            values[key] = _PARSERS[typ](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def default_config() -> RunConfig:
    return RunConfig({})
