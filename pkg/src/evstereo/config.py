"""Run configuration: one dataclass, key=value files, CLI overrides.

Desk-scale defaults keep CPU training in the minutes range. Full-scale
reference settings (disparity budget 192, batch 8, multi-GPU) are noted in
comments only and are deliberately not defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunConfig:
    # scene / representation
    width: int = 64
    height: int = 64
    max_disparity: int = 32          # full-scale reference: 192
    events_per_window: int = 2048
    density_scales: int = 3
    event_stride: int = 1            # process every k-th evaluation sample

    # network
    concentrate_channels: int = 8
    feature_channels: int = 64
    stages: int = 2
    refine_base_channels: int = 16

    # loss
    alpha: float = 2.0
    uncertainty: bool = True
    scale_weights: list[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])
    final_weight: float = 1.0
    smooth_l1_beta: float = 1.0

    # optimization (full-scale reference: batch 8 on two GPUs)
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 2
    iterations: int = 2000
    seed: int = 0

    # augmentation
    augment: bool = True
    crop: int = 48
    flip_prob: float = 0.5

    def validate(self) -> "RunConfig":
        if self.max_disparity < 1:
            raise ValueError("max_disparity must be >= 1")
        if self.events_per_window < 2 ** (self.density_scales - 1):
            raise ValueError(
                f"events_per_window {self.events_per_window} too small for "
                f"{self.density_scales} halving scales")
        if self.crop % 16:
            raise ValueError(f"crop size must be a multiple of 16, got {self.crop}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.event_stride < 1:
            raise ValueError("event_stride must be >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {name!r}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {name}={raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind.startswith("list"):
        return [float(v) for v in raw.split(",") if v.strip()]
    return raw


def parse_config_file(path) -> dict:
    """Read key=value lines; '#' starts a comment, blank lines ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return values


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    values = parse_config_file(path) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), raw)
    return RunConfig(**values).validate()


def save_config(config: RunConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, list):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name}={value}")
    Path(path).write_text("\n".join(lines) + "\n")
