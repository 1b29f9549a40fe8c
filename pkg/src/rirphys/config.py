"""Run configuration: TOML file values overridden by command-line flags."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace

from .room import REGIMES, SamplingRegime
from .stft import StftConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "load_config"]


@dataclass
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    regime: SamplingRegime = REGIMES["matched"]
    crossbands: int = 0
    filter_len: int | None = None
    ridge: float = 0.0
    rir_seconds: float = 0.5
    residual_threshold: float | None = None
    threshold_db: float = -20.0
    w_phi: float = 0.1
    eps_floor: float = 1e-8
    dry_samples: int = 49151
    excitation: str = "white"
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.threshold_db >= 0:
            raise ValueError("mask threshold must be negative (dB)")
        if self.w_phi <= 0:
            raise ValueError("w_phi must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.filter_len is not None and self.filter_len < 1:
            raise ValueError("filter_len must be positive")
        if self.crossbands < 0:
            raise ValueError("crossbands must be nonnegative")
        if self.dry_samples < 1:
            raise ValueError("dry_samples must be positive")


# TOML section -> RunConfig attribute for flat keys
_SECTIONS = {
    "ctf": ("crossbands", "filter_len", "ridge", "rir_seconds", "residual_threshold"),
    "loss": ("threshold_db", "w_phi"),
    "synth": ("dry_samples", "excitation"),
    "deconvolve": ("eps_floor",),
    "run": ("seed", "jobs"),
}


def _regime_from(table: dict) -> SamplingRegime:
    table = dict(table)
    name = table.pop("name", "matched")
    base = REGIMES.get(name, SamplingRegime(name))
    conv = {
        "dim_ranges": lambda v: tuple(tuple(map(float, r)) for r in v),
        "rt60_range": lambda v: tuple(map(float, v)),
        "distance_range": lambda v: tuple(map(float, v)),
        "mics_per_room": int,
        "wall_margin": float,
    }
    unknown = set(table) - set(conv)
    if unknown:
        raise ValueError(f"unknown regime keys {sorted(unknown)}")
    return replace(base, **{k: conv[k](v) for k, v in table.items()})


def load_config(path: str | os.PathLike | None = None, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from an optional TOML file, then apply non-None overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        for key in ("seed", "jobs"):
            if key in data:
                setattr(cfg, key, data.pop(key))
        if "stft" in data:
            cfg.stft = StftConfig(**data.pop("stft"))
        if "regime" in data:
            cfg.regime = _regime_from(data.pop("regime"))
        for section, keys in _SECTIONS.items():
            table = data.pop(section, {})
            extra = set(table) - set(keys)
            if extra:
                raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")
            for k, v in table.items():
                setattr(cfg, k, v)
        if data:
            raise ValueError(f"unknown configuration entries: {sorted(data)}")
    stft_over = {k: overrides.pop(k) for k in ("win_len", "hop", "window") if k in overrides}
    stft_over = {k: v for k, v in stft_over.items() if v is not None}
    if stft_over:
        cfg.stft = replace(cfg.stft, fft_len=None, **stft_over)
    regime = overrides.pop("regime", None)
    if regime is not None:
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}; choose from {sorted(REGIMES)}")
        cfg.regime = REGIMES[regime]
    for k, v in overrides.items():
        if v is not None:
            if not hasattr(cfg, k):
                raise AttributeError(f"RunConfig has no field {k!r}")
            setattr(cfg, k, v)
    cfg.validate()
    return cfg
