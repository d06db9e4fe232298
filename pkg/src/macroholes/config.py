"""Experiment configuration: a YAML file with a fixed schema, plus overrides.

Example::

    model: RI          # RI | SRW | GFF
    d: 3
    N: 24
    level: 6.0         # u for RI, alpha for GFF, unused for SRW
    nu: 0.25
    mu: 0.05
    Ltilde0: 10
    replicas: 100
    seed: 0
    audit: true        # run the coarse-graining checks on every replica
    scales: {L0: 1, Lhat0: 3, spacing: 1}
    tilt: {R_nu: 0.4, delta: 0.2, eta: 0.1, r: 1.2, crit: 8.0, eps: 2.0}
    output: runs/ri-24

Environment: ``MACROHOLES_OUTPUT`` is the root for relative output paths and
``MACROHOLES_THREADS`` caps the numba thread count.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .tilt import unit_ball_volume

OUTPUT_ENV = "MACROHOLES_OUTPUT"
THREADS_ENV = "MACROHOLES_THREADS"


class ModelKind(str, enum.Enum):
    RI = "RI"
    SRW = "SRW"
    GFF = "GFF"


class ConfigError(ValueError):
    pass


_SCALE_KEYS = {"L0", "Lhat0", "spacing", "delta_radius", "K", "gamma"}
_TILT_KEYS = {"R_nu", "delta", "eta", "r", "crit", "eps", "u", "alpha", "buffer", "entrance_margin"}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelKind = ModelKind.RI
    d: int = 3
    N: int = 16
    level: float = 1.0
    nu: float = 0.1
    mu: float = 0.0
    Ltilde0: int = 0
    replicas: int = 10
    seed: int = 0
    audit: bool = False
    connectivity: str = "nearest"
    gff_buffer: float = 2.0
    scales: dict = field(default_factory=dict)
    tilt: dict = field(default_factory=dict)
    output: Optional[str] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "model", ModelKind(str(getattr(self.model, "value", self.model)).upper()))
        except ValueError:
            raise ConfigError(f"unknown model {self.model!r}") from None
        for k, typ in (("d", int), ("N", int), ("Ltilde0", int), ("replicas", int), ("seed", int)):
            v = getattr(self, k)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{k} must be an integer")
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if self.N < 1:
            raise ConfigError("N must be positive")
        if self.replicas < 0:
            raise ConfigError("replicas must be non-negative")
        if self.Ltilde0 < 0:
            raise ConfigError("Ltilde0 must be non-negative")
        if not self.nu > 0:
            raise ConfigError("nu must be positive")
        if self.model is ModelKind.RI and not self.level > 0:
            raise ConfigError("interlacement level must be positive")
        if self.connectivity not in ("nearest", "star"):
            raise ConfigError("connectivity must be 'nearest' or 'star'")
        bad = set(self.scales) - _SCALE_KEYS
        if bad:
            raise ConfigError(f"unknown scale keys {sorted(bad)}")
        bad = set(self.tilt) - _TILT_KEYS
        if bad:
            raise ConfigError(f"unknown tilt keys {sorted(bad)}")

    def require_lower_bound_volume(self):
        """Lower-bound (tilt) experiments need ``0 < ν < ω_d``."""
        if not self.nu < unit_ball_volume(self.d):
            raise ConfigError("lower-bound experiments need nu < omega_d")

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["model"] = self.model.value
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]

    def output_dir(self, default: str) -> Path:
        p = Path(self.output or default)
        if not p.is_absolute():
            p = Path(os.environ.get(OUTPUT_ENV, ".")) / p
        return p


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def from_dict(data: dict, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Validate ``data`` (unknown keys rejected) and apply dotted ``overrides``."""
    data = json.loads(json.dumps(data or {}))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        head, _, rest = key.partition(".")
        if rest:
            data.setdefault(head, {})[rest] = val
        else:
            data[head] = val
    bad = set(data) - _FIELDS
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    return ExperimentConfig(**data)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return from_dict(data, overrides)


def apply_thread_env():
    """Honor ``MACROHOLES_THREADS`` for numba's thread pool."""
    n = os.environ.get(THREADS_ENV)
    if n:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def parse_value(text: str) -> Any:
    """Scalar from a ``key=value`` override (YAML scalar rules)."""
    return yaml.safe_load(text)
