"""Closed-form scaling laws, the TDMA baseline and exponent regression over sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .beamform import (
    achieved_broadcast_rate,
    design_scheme,
    gain_ratios,
    interference_ratios,
    run_back_and_forth,
)
from .channel import network_channel_matrix
from .config import SimulationConfig
from .netgeom import NodeSet, build_pair_schedule, generate_network, scheme_layout
from .spectral import spectral_norm

QUANTITIES = ("norm_sq", "gain_ratio", "interference_ratio", "rate", "capacity_bound")
RESULT_HEADER = ("n", "nu", "seed", "quantity", "value")

# Above this size the dense n x n channel matrix is not formed; the capacity
# bound is replaced by the certified lower bound P max|h|^2 <= P ||H||^2.
DENSE_MAX_N = 4096


class RegimeError(ValueError):
    pass


def predicted_broadcast_rate(n: float, A: float, snr_s: float) -> float:
    """min{snr_s, 1} for A >= n^2, min{(n / sqrt(A)) snr_s, 1} for 1 <= A <= n^2."""
    if A < 1:
        raise ValueError(f"area must be >= 1, got {A}")
    if A >= float(n) ** 2:
        return min(snr_s, 1.0)
    return min(n / math.sqrt(A) * snr_s, 1.0)


def predicted_unicast_throughput(n: float, A: float, snr_s: float) -> float:
    """n snr_s for A >= n^2, sqrt(A) snr_s for n <= A <= n^2, sqrt(n) snr_s below."""
    if A < 1:
        raise ValueError(f"area must be >= 1, got {A}")
    if A >= float(n) ** 2:
        return n * snr_s
    if A >= n:
        return math.sqrt(A) * snr_s
    return math.sqrt(n) * snr_s


def duality_product(n: float, A: float, snr_s: float) -> float:
    """(T / snr_s) (R / snr_s) from the uncapped closed forms; equals n in regime."""
    if A < n:
        raise RegimeError(f"duality needs A >= n, got A={A}, n={n}")
    if not snr_s > 0:
        raise RegimeError("snr_s must be > 0")
    if A >= float(n) ** 2:
        dof, gain = float(n), 1.0
    else:
        root = math.sqrt(A)
        dof, gain = root, n / root
    if gain * snr_s > 1:
        raise RegimeError(f"broadcast cap binds: {gain * snr_s:.3g} > 1")
    return dof * gain


def tdma_baseline_rate(n: float, nu: float, P: float) -> float:
    """min{n^(1-nu) P, 1}."""
    if not P > 0:
        raise ValueError("P must be > 0")
    return min(float(n) ** (1 - nu) * P, 1.0)


def simulated_tdma_rate(nodes: NodeSet, P: float) -> float:
    """Common broadcast rate when sources take turns with pooled power n P.

    Each source reaches every node at SNR at least n P / maxdist^2; with
    equal rates the aggregate is the worst source's log2(1 + n P / maxdist^2).
    """
    if not P > 0:
        raise ValueError("P must be > 0")
    p = nodes.positions
    far = 0.0
    for chunk in range(0, len(p), 2048):
        far = max(far, float(cdist(p[chunk : chunk + 2048], p).max()))
    return math.log2(1 + len(nodes) * P / far**2)


class ExponentFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_exponent(points) -> ExponentFit:
    """Least-squares line through (log n, log value)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 points")
    if np.any(pts <= 0):
        raise ValueError("n and values must be positive")
    if np.unique(pts[:, 0]).size < 2:
        raise ValueError("need at least 2 distinct n values")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([slope, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return ExponentFit(float(slope), float(intercept), r2)


# -- sweeps -------------------------------------------------------------------

@dataclass
class ScalingResult:
    rows: list[tuple[int, float, int, str, float]] = field(default_factory=list)
    fitted: dict[tuple[str, float], ExponentFit] = field(default_factory=dict)
    failed: list[tuple[int, float, int, str]] = field(default_factory=list)
    dominance_violations: list[tuple[int, float, int]] = field(default_factory=list)
    certified_cells: list[tuple[int, float, int]] = field(default_factory=list)

    def values(self, quantity: str, nu: float | None = None) -> list[tuple[int, float]]:
        return [(n, v) for n, nu_, _, q, v in self.rows if q == quantity and (nu is None or nu_ == nu)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_HEADER)
            for n, nu, seed, q, v in self.rows:
                w.writerow([n, repr(float(nu)), seed, q, repr(float(v))])

    def summary(self) -> dict:
        return {
            "fits": [
                {"quantity": q, "nu": nu, "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared}
                for (q, nu), f in self.fitted.items()
            ],
            "failed_cells": [{"n": n, "nu": nu, "seed": s, "error": e} for n, nu, s, e in self.failed],
            "dominance_violations": [{"n": n, "nu": nu, "seed": s} for n, nu, s in self.dominance_violations],
            "certified_capacity_cells": [{"n": n, "nu": nu, "seed": s} for n, nu, s in self.certified_cells],
        }


def measure_cell(config: SimulationConfig, quantities, norm_method: str = "lanczos") -> dict:
    """Measurements for one realisation; keys are quantity names.

    ``_certified`` is set when the capacity value is the max-entry certificate.
    """
    nodes = generate_network(config)
    out: dict = {}
    needs_norm = "norm_sq" in quantities or "capacity_bound" in quantities
    if needs_norm:
        if config.n <= DENSE_MAX_N:
            H = network_channel_matrix(nodes).entries
            method = norm_method if config.n > 64 else "exact"
            norm_sq = spectral_norm(H, method=method, seed=config.seed).value ** 2
            if "norm_sq" in quantities:
                out["norm_sq"] = norm_sq
            if "capacity_bound" in quantities:
                out["capacity_bound"] = config.power * norm_sq
        else:
            if "norm_sq" in quantities:
                raise ValueError(f"norm_sq needs n <= {DENSE_MAX_N}, got {config.n}")
            out["capacity_bound"] = config.power * _max_entry_sq(nodes)
            out["_certified"] = True
    if {"gain_ratio", "interference_ratio", "rate"} & set(quantities):
        schedule = build_pair_schedule(scheme_layout(nodes, config), config)
        if "gain_ratio" in quantities:
            out["gain_ratio"] = float(np.mean(gain_ratios(nodes, schedule)))
        if "interference_ratio" in quantities:
            out["interference_ratio"] = float(np.mean(interference_ratios(nodes, schedule)))
        if "rate" in quantities:
            params = design_scheme(nodes, schedule, config)
            trace = run_back_and_forth(nodes, schedule, params, config)
            out["rate"] = achieved_broadcast_rate(trace, params.tau, params.rounds_total)
    return out


def _max_entry_sq(nodes: NodeSet) -> float:
    # closest pair, without forming the full matrix
    dist, _ = cKDTree(nodes.positions).query(nodes.positions, k=2)
    return 1.0 / float(dist[:, 1].min()) ** 2


def sweep(
    grid,
    quantities=QUANTITIES,
    trials: int = 1,
    threads: int = 1,
    norm_method: str = "lanczos",
) -> ScalingResult:
    """Run ``quantities`` on every config of ``grid`` for ``trials`` seeds each.

    Trial k of a config uses seed ``config.seed + k``.  Per-cell errors are
    recorded in ``failed`` and do not stop the sweep.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    unknown = set(quantities) - set(QUANTITIES)
    if unknown:
        raise ValueError(f"unknown quantities {sorted(unknown)}")
    cells = [cfg.with_overrides(seed=cfg.seed + k) for cfg in grid for k in range(trials)]

    def job(cfg):
        try:
            return measure_cell(cfg, quantities, norm_method), None
        except Exception as exc:  # recorded, sweep continues
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, cells))
    else:
        outcomes = [job(c) for c in cells]

    res = ScalingResult()
    for cfg, (vals, err) in zip(cells, outcomes):
        key = (cfg.n, float(cfg.nu), cfg.seed)
        if err is not None:
            res.failed.append((*key, err))
            continue
        for q in QUANTITIES:
            if q in vals:
                res.rows.append((*key, q, float(vals[q])))
        if vals.get("_certified"):
            res.certified_cells.append(key)
        if "rate" in vals and "capacity_bound" in vals:
            if vals["rate"] > vals["capacity_bound"] * (1 + 1e-12):
                res.dominance_violations.append(key)

    for q in quantities:
        for nu in sorted({float(c.nu) for c in grid}):
            pts = [(n, v) for n, v in res.values(q, nu) if v > 0]
            if len({n for n, _ in pts}) >= 3:
                res.fitted[(q, nu)] = fit_exponent(pts)
    return res
