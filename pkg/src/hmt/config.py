"""Run configuration: dimensions, windows, optimizer, and ablation switches.

Optimizer defaults (lr 2e-5, weight decay 0.1, batch 4, 30 epochs, patience
5) are tuned for fine-tuning over pretrained-encoder features; the synthetic
desk fixtures train from scratch and use lr 1e-3 in their configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence, Union

from .dmmt import FULL_WINDOW
from .errors import ConfigError

WindowSize = Union[int, str]


@dataclass
class TrainConfig:
    num_classes: int
    d: int = 32
    h: int = 4
    layers: int = 1
    r: int = 16
    l_max: int = 4
    n_max: int = 20
    m_max: int = 4
    windows: tuple = (3, 5, FULL_WINDOW)
    eta: float = 0.65
    lr: float = 2e-5
    weight_decay: float = 0.1
    batch: int = 4
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    mask_mode: str = "exclusive"
    enable_mmt_images: bool = True
    enable_dmmt: bool = True
    enable_text_branch: bool = True
    enable_dynamic_fusion: bool = True
    enable_dmt: bool = True

    def __post_init__(self):
        self.windows = tuple(self.windows)
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes {self.num_classes} < 2")
        if self.d < 4 or self.d % self.h:
            raise ConfigError(f"d={self.d} must be >= 4 and divisible by h={self.h}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if min(self.r, self.l_max, self.n_max, self.m_max) < 1:
            raise ConfigError("r, l_max, n_max, m_max must all be >= 1")
        if not self.windows:
            raise ConfigError("at least one window branch is required")
        for w in self.windows:
            if w != FULL_WINDOW and (not isinstance(w, int) or w < 1 or w % 2 == 0):
                raise ConfigError(f"window {w!r} must be odd or '{FULL_WINDOW}'")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta {self.eta} outside (0, 1)")
        if self.lr < 0:  # lr = 0 is the legitimate frozen-training case
            raise ConfigError(f"lr {self.lr} must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch, epochs, patience must all be >= 1")
        if self.mask_mode not in ("exclusive", "literal"):
            raise ConfigError(f"unknown mask_mode '{self.mask_mode}'")

    @property
    def seq_cap(self) -> int:
        """Largest sentence-level sequence length (sizes the boost gain)."""
        return self.n_max + self.m_max + 1


_BOOL_KEYS = {
    "enable_mmt_images", "enable_dmmt", "enable_text_branch",
    "enable_dynamic_fusion", "enable_dmt",
}
_INT_KEYS = {"num_classes", "d", "h", "layers", "r", "l_max", "n_max",
             "m_max", "batch", "epochs", "patience", "seed"}
_FLOAT_KEYS = {"eta", "lr", "weight_decay"}


def _parse_windows(text: str) -> tuple:
    out = []
    for item in text.replace(",", " ").split():
        out.append(FULL_WINDOW if item == FULL_WINDOW else int(item))
    return tuple(out)


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _BOOL_KEYS:
            if val.lower() not in ("true", "false", "0", "1"):
                raise ConfigError(f"line {lineno}: boolean expected for {key}")
            values[key] = val.lower() in ("true", "1")
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _FLOAT_KEYS:
            values[key] = float(val)
        elif key == "mask_mode":
            values[key] = val
        elif key == "windows":
            values[key] = _parse_windows(val)
        else:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
    if "num_classes" not in values:
        raise ConfigError("config must set num_classes")
    return TrainConfig(**values)


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_floats(cfg: TrainConfig) -> list[float]:
    """Flat numeric encoding embedded in checkpoints (f32-exact fields)."""
    flags = [cfg.enable_mmt_images, cfg.enable_dmmt, cfg.enable_text_branch,
             cfg.enable_dynamic_fusion, cfg.enable_dmt]
    encoded = [
        1.0, float(cfg.num_classes), float(cfg.d), float(cfg.h),
        float(cfg.layers), float(cfg.r), float(cfg.l_max), float(cfg.n_max),
        float(cfg.m_max), cfg.eta, cfg.lr, cfg.weight_decay,
        float(cfg.batch), float(cfg.epochs), float(cfg.patience),
        float(cfg.seed), 0.0 if cfg.mask_mode == "exclusive" else 1.0,
        float(sum(1 << i for i, f in enumerate(flags) if f)),
        float(len(cfg.windows)),
    ]
    encoded.extend(-1.0 if w == FULL_WINDOW else float(w) for w in cfg.windows)
    return encoded


def config_from_floats(vals: Sequence[float]) -> TrainConfig:
    vals = list(vals)
    if not vals or vals[0] != 1.0:
        raise ConfigError("unsupported embedded-config version")
    nwin = int(vals[18])
    windows = tuple(
        FULL_WINDOW if v == -1.0 else int(v) for v in vals[19:19 + nwin]
    )
    bits = int(vals[17])
    return TrainConfig(
        num_classes=int(vals[1]), d=int(vals[2]), h=int(vals[3]),
        layers=int(vals[4]), r=int(vals[5]), l_max=int(vals[6]),
        n_max=int(vals[7]), m_max=int(vals[8]), windows=windows,
        eta=float(vals[9]), lr=float(vals[10]), weight_decay=float(vals[11]),
        batch=int(vals[12]), epochs=int(vals[13]), patience=int(vals[14]),
        seed=int(vals[15]),
        mask_mode="exclusive" if vals[16] == 0.0 else "literal",
        enable_mmt_images=bool(bits & 1), enable_dmmt=bool(bits & 2),
        enable_text_branch=bool(bits & 4), enable_dynamic_fusion=bool(bits & 8),
        enable_dmt=bool(bits & 16),
    )
