"""Broadcast capacity scaling of line-of-sight wireless networks: channel model,
spectral-norm bounds, back-and-forth beamforming simulation and scaling fits."""

from .config import ConfigError, SimulationConfig, boundary_gamma, derive_rng, load_config

__all__ = ["ConfigError", "SimulationConfig", "boundary_gamma", "derive_rng", "load_config"]
