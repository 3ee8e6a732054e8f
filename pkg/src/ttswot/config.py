"""Run configuration: model widths, schedule constants and loss options.

Defaults are the full-size values. Files use a flat ``key = value`` syntax
with ``#`` comments; every field below may be overridden.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    # schedule
    total_iters: int = 36000
    lr: float = 4e-4
    lr_halve_at: tuple = (16000, 24000, 32000)
    pretrain_iters: int = 4000
    tau_decay: float = 1e-5
    tau_min: float = 0.5
    tau_interval: int = 1000
    batch_size: int = 16
    max_crop_sec: float = 1.0
    checkpoint_every: int = 1000
    grad_clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # objective
    kl_weight: float = 1.0
    f0_loss: bool = False
    jitter: float = 0.12
    alpha: float = 1.0
    # reservoir
    esn_units: int = 2048
    esn_density: float = 0.1
    esn_radius: float = 0.9
    esn_input_scale: float = 0.1
    # bottleneck
    mlp_hidden: int = 128
    code_dim: int = 128
    n_codes: int = 256
    # vocoder
    speaker_dim: int = 128
    lstm_hidden: int = 128
    lstm_layers: int = 3
    upsample_channels: int = 128
    cond_channels: int = 64
    filter_channels: int = 64
    harmonic_blocks: int = 5
    noise_blocks: int = 1
    layers_per_block: int = 10
    # numerics
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}", key="dtype")
        if self.batch_size < 1 or self.total_iters < 0:
            raise ConfigError("batch_size must be >= 1 and total_iters >= 0")
        if not 0.0 <= self.jitter <= 1.0:
            raise ConfigError("jitter must lie in [0, 1]", key="jitter")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        raw["lr_halve_at"] = tuple(raw.get("lr_halve_at", ()))
        return cls(**raw)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _convert(key: str, text: str):
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(float(text)) if "e" in text.lower() else int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}", key=key) from exc


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}", key=key)
        changes[key] = _convert(key, value)
    return (base or TrainConfig()).replace(**changes)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# Scaled-down setting used by the end-to-end smoke tests. With 500 instead of
# 36000 updates the step size is raised so the bottleneck leaves its initial state.
SMOKE = TrainConfig(
    total_iters=500,
    pretrain_iters=100,
    lr=3e-3,
    checkpoint_every=200,
    batch_size=2,
    max_crop_sec=0.5,
    esn_units=256,
    mlp_hidden=32,
    code_dim=32,
    n_codes=32,
    speaker_dim=16,
    lstm_hidden=32,
    lstm_layers=1,
    upsample_channels=32,
    cond_channels=32,
    filter_channels=32,
    harmonic_blocks=2,
    noise_blocks=1,
    layers_per_block=4,
    dtype="float32",
)
