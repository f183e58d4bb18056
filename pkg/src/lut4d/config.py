"""Engine configuration and the key-value config file format.

A config file is plain text, one ``key = value`` per line.  Blank lines and
lines starting with ``#`` are ignored; tuples are comma separated::

    # 4D LUT geometry
    lut_size = 17
    context_bins = 2
    n_bases = 64
    pyramid_channels = 16, 32, 64, 128

Unknown keys are an error.  ``preset = NAME`` as the first key starts from a
named preset and overrides the keys that follow.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError


@dataclass
class FitConfig:
    mode: str = "lut_entries"  # or "alpha"
    lambda_rec: float = 1.0
    lambda_tv: float = 1e-4
    lambda_mn: float = 10.0
    steps: int = 500
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sample_pixels: int = 0  # 0 = full batch every step

    def __post_init__(self):
        if self.mode not in ("alpha", "lut_entries"):
            raise DataError(f"fit mode must be 'alpha' or 'lut_entries', got {self.mode!r}")
        if min(self.lambda_rec, self.lambda_tv, self.lambda_mn) < 0:
            raise DataError("loss weights must be non-negative")
        if self.steps < 1:
            raise DataError("steps must be >= 1")


@dataclass
class EngineConfig:
    lut_size: int = 17
    context_bins: int = 2
    n_bases: int = 64
    basis_scale: float = 0.05
    pyramid_channels: tuple[int, ...] = (16, 32, 64, 128)
    reduce_channels: int = 64
    mlp_hidden: int = 256
    encoder_channels: tuple[int, ...] = (32, 64)
    residual_blocks: int = 2
    attention_dim: int = 64
    style_max_side: int = 256
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)


PRESETS: dict[str, dict] = {
    # D=17 color nodes, two context bins, 64 basis LUTs
    "paper-default": {},
    # small lattice for quick desk experiments and tests
    "desk": {"lut_size": 9, "n_bases": 8, "pyramid_channels": (8, 8, 16, 16),
             "reduce_channels": 16, "mlp_hidden": 32, "encoder_channels": (8, 16),
             "attention_dim": 16, "style_max_side": 64},
}

_FIT_KEYS = {f.name for f in dataclasses.fields(FitConfig)}
_ENGINE_KEYS = {f.name for f in dataclasses.fields(EngineConfig)} - {"fit"}


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


def preset(name: str) -> EngineConfig:
    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return apply_overrides(EngineConfig(), PRESETS[name])


def apply_overrides(cfg: EngineConfig, values: dict) -> EngineConfig:
    cfg = dataclasses.replace(cfg, fit=dataclasses.replace(cfg.fit))
    fit_updates = {}
    for key, value in values.items():
        if key in _ENGINE_KEYS:
            like = getattr(cfg, key)
            setattr(cfg, key, _coerce(value, like) if isinstance(value, str) else value)
        elif key in _FIT_KEYS:
            like = getattr(cfg.fit, key)
            fit_updates[key] = _coerce(value, like) if isinstance(value, str) else value
        else:
            raise DataError(f"unknown config key {key!r}")
    if fit_updates:
        cfg.fit = dataclasses.replace(cfg.fit, **fit_updates)
    return cfg


def parse_config(text: str) -> EngineConfig:
    items: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        items.append((key, value))
    cfg = EngineConfig()
    if items and items[0][0] == "preset":
        cfg = preset(items.pop(0)[1])
    try:
        return apply_overrides(cfg, dict(items))
    except ValueError as exc:
        raise DataError(f"bad config value: {exc}") from None


def load_config(spec: str | None) -> EngineConfig:
    """Load a preset name or a config file path; ``None`` gives the defaults."""
    if spec is None:
        return EngineConfig()
    if spec in PRESETS:
        return preset(spec)
    path = Path(spec)
    if not path.is_file():
        raise DataError(f"config {spec!r} is neither a preset nor a file")
    return parse_config(path.read_text())


def dump_config(cfg: EngineConfig) -> str:
    lines = []
    for f in dataclasses.fields(EngineConfig):
        if f.name == "fit":
            continue
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
    for f in dataclasses.fields(FitConfig):
        lines.append(f"{f.name} = {getattr(cfg.fit, f.name)}")
    return "\n".join(lines) + "\n"
