"""Run configuration: a flat ``section.key = value`` text format plus ablation presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

from .errors import ConfigError

AUGMENTATION_MODES = ("none", "plain_mixup", "feedback_only", "feedback_mixup")
TEACHING_STYLES = ("individual", "ensemble")
RUN_MODES = ("orc", "baseline_independent")
DATASET_KINDS = ("blobs", "rings", "idx")
NET_KINDS = ("mlp", "conv")


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"
    n: int = 10000
    test_fraction: float = 0.2
    num_classes: int = 10
    noise: float = 1.6
    dim: int = 8
    clusters: int = 3
    seed: int = 0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    flip: bool = False
    crop_pad: int = 0


@dataclass(frozen=True)
class LadderConfig:
    kind: str = "mlp"
    depth: int = 3
    widths: Tuple[int, ...] = (64, 48, 32, 16)
    depths: Tuple[int, ...] = ()


@dataclass(frozen=True)
class OrcConfig:
    mode: str = "orc"
    k: int = 1
    tau: float = 4.0
    alpha: float = 0.9
    alpha_mix: float = 0.2
    teaching_style: str = "individual"
    augmentation_mode: str = "feedback_mixup"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: Tuple[int, ...] = (12, 19, 26)
    gamma: float = 0.1
    pretrain_epochs: int = -1  # -1: three times ``epochs``
    seed: int = 0
    output_dir: str = "runs/default"
    pivot_checkpoint: str = ""  # empty: <output_dir>/pivot.ckpt


@dataclass(frozen=True)
class RunConfig:
    dataset: DataConfig = field(default_factory=DataConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    orc: OrcConfig = field(default_factory=OrcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def ladder_size(self) -> int:
        return len(self.ladder.widths)

    @property
    def resolved_pretrain_epochs(self) -> int:
        p = self.train.pretrain_epochs
        return 3 * self.train.epochs if p < 0 else p

    @property
    def resolved_pivot_checkpoint(self) -> Path:
        if self.train.pivot_checkpoint:
            return Path(self.train.pivot_checkpoint)
        return Path(self.train.output_dir) / "pivot.ckpt"


REQUIRED_KEYS = ("dataset.kind", "ladder.widths")
_SECTION_TYPES = {"dataset": DataConfig, "ladder": LadderConfig, "orc": OrcConfig, "train": TrainConfig}


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}", key=key) from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg: RunConfig) -> Dict[str, object]:
    flat = {}
    for section, cls in _SECTION_TYPES.items():
        sub = getattr(cfg, section)
        for f in dataclasses.fields(cls):
            flat[f"{section}.{f.name}"] = getattr(sub, f.name)
    return flat


def from_flat(flat: Dict[str, object]) -> RunConfig:
    parts = {}
    for section, cls in _SECTION_TYPES.items():
        kwargs = {f.name: flat[f"{section}.{f.name}"] for f in dataclasses.fields(cls)
                  if f"{section}.{f.name}" in flat}
        parts[section] = cls(**kwargs)
    return validate(RunConfig(**parts))


def parse_config_text(text: str, require: bool = True) -> RunConfig:
    defaults = to_flat(RunConfig())
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError("unknown key", key=key)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key", key=key)
        values[key] = _convert(key, raw, defaults[key])
    if require:
        for key in REQUIRED_KEYS:
            if key not in values:
                raise ConfigError("missing required key", key=key)
    return from_flat({**defaults, **values})


def parse_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def emit_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in to_flat(cfg).items())


def validate(cfg: RunConfig) -> RunConfig:
    d, lad, o, t = cfg.dataset, cfg.ladder, cfg.orc, cfg.train

    def check(ok, key, msg):
        if not ok:
            raise ConfigError(msg, key=key)

    check(d.kind in DATASET_KINDS, "dataset.kind", f"must be one of {DATASET_KINDS}, got {d.kind!r}")
    check(d.num_classes >= 2, "dataset.num_classes", "must be >= 2")
    check(d.noise >= 0, "dataset.noise", "must be >= 0")
    check(d.dim >= 1, "dataset.dim", "must be >= 1")
    check(d.clusters >= 1, "dataset.clusters", "must be >= 1")
    check(0 < d.test_fraction < 1, "dataset.test_fraction", "must lie in (0, 1)")
    check(d.crop_pad >= 0, "dataset.crop_pad", "must be >= 0")
    if d.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            check(bool(getattr(d, key)), f"dataset.{key}", "required for idx datasets")
    else:
        n_train = d.n - int(round(d.n * d.test_fraction))
        check(n_train >= d.num_classes, "dataset.n", "too small for the class count")
        check(lad.kind == "mlp", "ladder.kind", "synthetic vector data needs an mlp ladder")

    check(lad.kind in NET_KINDS, "ladder.kind", f"must be one of {NET_KINDS}, got {lad.kind!r}")
    check(len(lad.widths) >= 2, "ladder.widths", "need a pivot and at least one pool network")
    check(all(w >= 1 for w in lad.widths), "ladder.widths", "widths must be >= 1")
    check(lad.depth >= 1, "ladder.depth", "must be >= 1")
    check(not lad.depths or len(lad.depths) == len(lad.widths), "ladder.depths",
          "must be empty or match ladder.widths in length")

    check(o.mode in RUN_MODES, "orc.mode", f"must be one of {RUN_MODES}, got {o.mode!r}")
    pool = len(lad.widths) - 1
    check(0 <= o.k < pool, "orc.k", f"must be in [0, {pool}) for a pool of {pool} networks")
    check(o.tau > 0, "orc.tau", "must be positive")
    check(0 <= o.alpha <= 1, "orc.alpha", "must lie in [0, 1]")
    check(o.alpha_mix > 0, "orc.alpha_mix", "must be positive")
    check(o.teaching_style in TEACHING_STYLES, "orc.teaching_style",
          f"must be one of {TEACHING_STYLES}, got {o.teaching_style!r}")
    check(o.augmentation_mode in AUGMENTATION_MODES, "orc.augmentation_mode",
          f"must be one of {AUGMENTATION_MODES}, got {o.augmentation_mode!r}")

    check(t.epochs >= 0, "train.epochs", "must be >= 0")
    check(t.batch_size >= 1, "train.batch_size", "must be >= 1")
    check(t.lr > 0, "train.lr", "must be positive")
    check(0 <= t.momentum < 1, "train.momentum", "must lie in [0, 1)")
    check(t.weight_decay >= 0, "train.weight_decay", "must be >= 0")
    check(all(a < b for a, b in zip(t.milestones, t.milestones[1:])), "train.milestones",
          "must be strictly increasing")
    check(t.gamma > 0, "train.gamma", "must be positive")
    return cfg


# -- presets -------------------------------------------------------------

PRESET_AXES = {
    "table1_k0": {"orc.k": 0},
    "table1_k1": {"orc.k": 1},
    "table1_k2": {"orc.k": 2},
    "table2_none": {"orc.augmentation_mode": "none"},
    "table2_plain_mixup": {"orc.augmentation_mode": "plain_mixup"},
    "table2_feedback_only": {"orc.augmentation_mode": "feedback_only"},
    "table2_feedback_mixup": {"orc.augmentation_mode": "feedback_mixup"},
    "table3_individual": {"orc.teaching_style": "individual"},
    "table3_ensemble": {"orc.teaching_style": "ensemble"},
    "baseline_independent": {"orc.mode": "baseline_independent"},
}


def default_config() -> RunConfig:
    """Desk-scale setup: 4-MLP ladder on noisy 8-D, 10-class blobs (3 centers per class), 30 epochs."""
    return RunConfig()


def apply_preset(cfg: RunConfig, name: str) -> RunConfig:
    if name not in PRESET_AXES:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_AXES)}", key="preset")
    return from_flat({**to_flat(cfg), **PRESET_AXES[name]})


def preset(name: str) -> RunConfig:
    return apply_preset(default_config(), name)


def with_overrides(cfg: RunConfig, **flat_overrides) -> RunConfig:
    """Override dotted keys given with ``__`` in place of ``.`` (``train__seed=3``)."""
    flat = to_flat(cfg)
    for key, value in flat_overrides.items():
        dotted = key.replace("__", ".")
        if dotted not in flat:
            raise ConfigError("unknown key", key=dotted)
        flat[dotted] = value
    return from_flat(flat)
