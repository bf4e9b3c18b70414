"""One test per acceptance criterion; each prints a PASS/FAIL line with its measured numbers."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from losnet.beamform import (
    achieved_broadcast_rate,
    cosine_bound_check,
    design_scheme,
    gain_ratios,
    interference_ratios,
    run_back_and_forth,
    sample_interference_integrals,
)
from losnet.cli import main
from losnet.config import SimulationConfig, boundary_gamma
from losnet.netgeom import build_pair_schedule, empirical_count_deviation, generate_network, scheme_layout
from losnet.scaling import duality_product, fit_exponent, sweep
from losnet.spectral import (
    block_gershgorin_bound,
    inverse_square_expectation,
    moment_bound,
    scalar_gershgorin_bound,
    spectral_norm,
    trace_moment,
)

EPS = 0.1
SCHEME_NS = [2**k for k in range(10, 15)]


def _scheme(n, seed=0, nu=1.0):
    cfg = SimulationConfig(n=n, nu=nu, gamma=boundary_gamma(nu), epsilon=EPS, seed=seed)
    nodes = generate_network(cfg)
    return cfg, nodes, build_pair_schedule(scheme_layout(nodes, cfg), cfg)


def _norm_sq_protocol(nu):
    grid = [SimulationConfig(n=n, nu=nu) for n in (256, 512, 1024, 2048, 4096)]
    res = sweep(grid, ["norm_sq"], trials=10, threads=4)
    assert not res.failed
    return res.fitted[("norm_sq", nu)], res.values("norm_sq", nu)


def test_criterion_01_norm_dense(report_criterion):
    fit, values = _norm_sq_protocol(1.0)
    C = max(v for n, v in values if n == 256) / 256**0.6
    dominated = all(v <= C * n**0.6 * (1 + 1e-12) for n, v in values)
    slope_ok = 0.35 <= fit.slope <= 0.70
    ok = report_criterion(1, slope_ok and dominated, f"slope {fit.slope:.3f} in [0.35, 0.70]; C n^0.6 dominates: {dominated}")
    assert ok


def test_criterion_02_norm_sparse(report_criterion):
    fit, _ = _norm_sq_protocol(3.0)
    ok = report_criterion(2, -2.3 <= fit.slope <= -1.7, f"slope {fit.slope:.3f} in [-2.3, -1.7]")
    assert ok


def test_criterion_03_capacity_dominance(report_criterion):
    grid = [
        SimulationConfig(n=n, nu=nu, gamma=boundary_gamma(nu), seed=0)
        for nu in (1.0, 1.5)
        for n in (256, 512, 1024, 2048, 4096)
    ]
    res = sweep(grid, ["rate", "capacity_bound"], trials=2, threads=4)
    cells = len(res.values("rate"))
    ok = not res.failed and cells == len(grid) * 2 and not res.dominance_violations
    report_criterion(3, ok, f"{len(res.dominance_violations)} violations in {cells} cells")
    assert ok


def test_criterion_04_block_gershgorin(report_criterion):
    rng = np.random.default_rng(2024)
    violations = mismatch = 0
    for _ in range(10**4):
        dim = int(rng.integers(1, 65))
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        k = int(rng.integers(0, min(dim - 1, 8) + 1))
        cuts = np.sort(rng.choice(np.arange(1, dim), size=k, replace=False)) if k else []
        blocks = [b for b in np.split(rng.permutation(dim), cuts) if b.size]
        if np.linalg.norm(a, 2) > block_gershgorin_bound(a, blocks) * (1 + 1e-12):
            violations += 1
        single = block_gershgorin_bound(a, [np.array([i]) for i in range(dim)])
        if abs(single - scalar_gershgorin_bound(a)) > 1e-12 * scalar_gershgorin_bound(a):
            mismatch += 1
    ok = report_criterion(4, violations == 0 and mismatch == 0, f"{violations} violations, {mismatch} singleton mismatches in 10^4")
    assert ok


def test_criterion_05_beamforming_gain(report_criterion):
    within = []
    for seed in range(10):
        _, nodes, schedule = _scheme(4096, seed)
        within.append(cosine_bound_check(nodes, schedule, c1=2.0).fraction_within)
    pts = []
    for n in SCHEME_NS:
        for seed in range(3):
            _, nodes, schedule = _scheme(n, seed)
            pts.append((n, float(np.mean(gain_ratios(nodes, schedule)))))
    slope = fit_exponent(pts).slope
    ok = min(within) == 1.0 and abs(slope) <= 0.1
    report_criterion(5, ok, f"cosine bound {min(within):.4f} of receivers; gain ratio slope {slope:.3f}")
    assert ok


def test_criterion_06_interference(report_criterion):
    pts = []
    for n in SCHEME_NS:
        _, nodes, schedule = _scheme(n)
        pts.append((n, float(np.mean(interference_ratios(nodes, schedule)))))
    slope = fit_exponent(pts).slope
    check = sample_interference_integrals(SimulationConfig(n=4096, nu=1.0, epsilon=EPS, seed=0), 1000)
    ok = slope <= -0.05 and check.fraction_within >= 0.999
    report_criterion(6, ok, f"ratio slope {slope:.3f} <= -0.05; quadrature within bound {check.fraction_within:.4f}")
    assert ok


def test_criterion_07_end_to_end_rate(report_criterion):
    pts, worst_noise = [], 0.0
    for n in SCHEME_NS:
        for seed in range(5):
            cfg, nodes, schedule = _scheme(n, seed)
            params = design_scheme(nodes, schedule, cfg)
            trace = run_back_and_forth(nodes, schedule, params, cfg)
            pts.append((n, achieved_broadcast_rate(trace, params.tau, params.rounds_total)))
            worst_noise = max(worst_noise, trace.noise_constant)
    slope = fit_exponent(pts).slope
    ok = abs(slope + EPS) <= 0.15 and worst_noise <= 2.0
    report_criterion(
        7, ok, f"rate slope {slope:.3f} vs -0.1 +- 0.15; max noise / (t+1) {worst_noise:.3f} <= 2"
    )
    assert ok


def test_criterion_08_chernoff(report_criterion):
    dev = empirical_count_deviation(SimulationConfig(n=4096, nu=1.0, seed=0), 256, 0.5, 1000, threads=4)
    ok = report_criterion(8, dev.within_bound, f"frequency {dev.frequency:g} vs bound {dev.bound:.3g} + 3 se")
    assert ok


def test_criterion_09_trace_moments(report_criterion):
    A = 256.0
    d = 3 * math.sqrt(A)
    details, ok = [], True
    for ell in (1, 2):
        est = {m: trace_moment(m, A, d, ell, trials=400, seed=ell) for m in (16, 64, 256)}
        C = (est[16].mean + 3 * est[16].stderr) / moment_bound(16, A, d, ell)
        passed = all(e.mean <= C * moment_bound(m, A, d, ell) for m, e in est.items())
        details.append(f"l={ell} C={C:.3f} {'ok' if passed else 'exceeded'}")
        ok &= passed
    oracle_ok = True
    for m in (16, 64, 256):
        est = trace_moment(m, A, d, 1, trials=400, seed=1)
        oracle_ok &= abs(est.mean - m * m * inverse_square_expectation(A, d)) <= 3 * est.stderr
    details.append(f"first moment vs quadrature within 3 se: {oracle_ok}")
    ok = report_criterion(9, ok and oracle_ok, "; ".join(details))
    assert ok


def test_criterion_10_duality(report_criterion):
    worst = 0.0
    for n in np.unique(np.geomspace(4, 10**6, 10).astype(int)):
        for area_exp in np.linspace(1.0, 2.5, 10):
            A = float(n) ** area_exp
            worst = max(worst, abs(duality_product(int(n), A, 0.5 / n) / n - 1))
    ok = report_criterion(10, worst <= 1e-12, f"max relative deviation {worst:.2e} over 100 points")
    assert ok


@settings(max_examples=1000, derandomize=True)
@given(st.integers(0, 2**32), st.integers(1, 64), st.integers(1, 64))
def _power_matches_exact(seed, rows, cols):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    exact = spectral_norm(a, method="exact").value
    approx = spectral_norm(a, method="power-iteration", tolerance=1e-12, max_iter=100000, seed=seed).value
    assert abs(approx - exact) <= 1e-8 * exact


def test_criterion_11_numerical_kernel(report_criterion, tmp_path):
    try:
        _power_matches_exact()
        kernel_ok, kernel_msg = True, "power iteration within 1e-8 on 10^3 matrices"
    except AssertionError as exc:
        kernel_ok, kernel_msg = False, f"power iteration mismatch: {exc}"
    argv = ["sweep", "--ns", "256,512,1024", "--nus", "1", "--gamma", "0.5", "--quantities", "norm_sq,rate",
            "--trials", "2"]
    codes = [main([*argv, "--threads", t, "--out", str(tmp_path / t)]) for t in ("1", "8")]
    same = (tmp_path / "1" / "results.csv").read_bytes() == (tmp_path / "8" / "results.csv").read_bytes()
    ok = kernel_ok and same and codes == [0, 0]
    report_criterion(11, ok, f"{kernel_msg}; threads 1 vs 8 identical CSV: {same}")
    assert ok
