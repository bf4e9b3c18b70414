"""Simulation configuration, JSON ingestion and random stream derivation.

Units are normalised so that the carrier wavelength and the ratio of the
Friis constant to the noise power are both one.  Those constants are not
fields of the config on purpose.

Random numbers come from numpy's Philox generator (a counter-based 64-bit
generator).  Every Monte Carlo trial gets its own key ``seed ^ trial`` and
every independent purpose inside a trial (node placement, noise, start
vectors) gets its own counter block, so results never depend on the order
in which trials are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

CONFIG_KEYS = ("n", "nu", "epsilon", "gamma", "c1", "c2", "seed")

_MASK64 = (1 << 64) - 1

# Counter blocks for the independent streams of one trial.
STREAM_NODES = 0
STREAM_NOISE = 1
STREAM_START = 2
STREAM_AUX = 3


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration values."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    nu: float
    epsilon: float = 0.1
    gamma: float = 0.5
    c1: float = 2.0
    c2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)):
            raise ConfigError("n", f"must be an integer, got {self.n!r}")
        if self.n < 1:
            raise ConfigError("n", f"must be >= 1, got {self.n}")
        for key in ("nu", "epsilon", "gamma", "c1", "c2"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                raise ConfigError(key, f"must be a number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(key, f"must be finite, got {value!r}")
        if self.nu <= 0:
            raise ConfigError("nu", f"must be > 0, got {self.nu}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon", f"must be > 0, got {self.epsilon}")
        if self.gamma < 0:
            raise ConfigError("gamma", f"must be >= 0, got {self.gamma}")
        if self.c1 <= 0:
            raise ConfigError("c1", f"must be > 0, got {self.c1}")
        if self.c2 <= 0:
            raise ConfigError("c2", f"must be > 0, got {self.c2}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")

    @property
    def area(self) -> float:
        return float(self.n) ** self.nu

    @property
    def side(self) -> float:
        return float(self.n) ** (self.nu / 2)

    @property
    def power(self) -> float:
        """Per-node power P = n^(nu - 1 - gamma)."""
        return float(self.n) ** (self.nu - 1 - self.gamma)

    @property
    def snr_s(self) -> float:
        return float(self.n) ** (1 - self.nu) * self.power

    def with_overrides(self, **overrides) -> "SimulationConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n"] = int(d["n"])
        d["seed"] = int(d["seed"])
        return d


def boundary_gamma(nu: float) -> float:
    """SNR exponent that puts P exactly at n^(3 nu / 2 - 2)."""
    return 1.0 - nu / 2.0


def load_config(path: str | Path, **overrides) -> SimulationConfig:
    """Read a JSON config with keys exactly ``CONFIG_KEYS``; overrides win."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top-level JSON value must be an object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    merged = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    missing = [k for k in CONFIG_KEYS if k not in merged]
    if missing:
        raise ConfigError(missing[0], "missing config key")
    return SimulationConfig(**{k: merged[k] for k in CONFIG_KEYS})


def derive_rng(seed: int, trial: int = 0, stream: int = STREAM_NODES) -> np.random.Generator:
    """Philox stream keyed by ``seed ^ trial``; ``stream`` picks a counter block."""
    key = (int(seed) ^ int(trial)) & _MASK64
    counter = np.array([0, 0, 0, int(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
