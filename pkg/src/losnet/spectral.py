"""Spectral norms and the matrix bounds used to control the capacity bound.

Exact norms use LAPACK's divide-and-conquer SVD (``numpy.linalg.svd``,
``gesdd``).  Larger matrices use power iteration on H H^dagger, or ARPACK
Lanczos through ``scipy.sparse.linalg.svds`` when asked for explicitly.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.sparse.linalg import svds

from .channel import ChannelMatrix, los_entries
from .config import STREAM_AUX, STREAM_START, SimulationConfig, derive_rng
from .netgeom import ClusterLayout

EXACT_MAX_DIM = 64
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, estimate: "NormEstimate"):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class NormEstimate:
    value: float
    method: str  # "exact" | "power-iteration" | "lanczos"
    iterations: int = 0
    residual: float = 0.0


def _entries(H) -> np.ndarray:
    return H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)


def _start_vector(dim: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, 0, STREAM_START)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _power_iteration(a: np.ndarray, tol: float, max_iter: int, seed: int) -> NormEstimate:
    v = _start_vector(a.shape[0], seed)
    lam, res = 0.0, math.inf
    for it in range(1, max_iter + 1):
        # H^dagger v computed without materialising the conjugate transpose
        w = a @ (v.conj() @ a).conj()
        lam = float(np.vdot(v, w).real)
        if lam <= 0.0:
            return NormEstimate(0.0, "power-iteration", it, 0.0)
        res = float(np.linalg.norm(w - lam * v)) / lam
        if res <= tol:
            return NormEstimate(math.sqrt(lam), "power-iteration", it, res)
        v = w / np.linalg.norm(w)
    est = NormEstimate(math.sqrt(max(lam, 0.0)), "power-iteration", max_iter, res)
    raise ConvergenceError(f"power iteration did not reach residual {tol} in {max_iter} steps", est)


def _lanczos(a: np.ndarray, tol: float, seed: int) -> NormEstimate:
    if min(a.shape) <= 2:
        s = np.linalg.svd(a, compute_uv=False)
        return NormEstimate(float(s[0]) if s.size else 0.0, "exact")
    v0 = _start_vector(min(a.shape), seed)
    u, s, _ = svds(a, k=1, tol=tol, v0=v0, maxiter=DEFAULT_MAX_ITER)
    sigma = float(s[0])
    if sigma == 0.0:
        return NormEstimate(0.0, "lanczos")
    u = u[:, 0]
    g = a @ (u.conj() @ a).conj()
    res = float(np.linalg.norm(g - sigma**2 * u)) / sigma**2
    return NormEstimate(sigma, "lanczos", 0, res)


def spectral_norm(
    H,
    tolerance: float = DEFAULT_TOL,
    method: str = "auto",
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> NormEstimate:
    """Largest singular value of ``H``.

    ``method="auto"`` is exact for min(shape) <= 64 and power iteration
    otherwise.  Power iteration stops once the Rayleigh-quotient residual
    ||G v - lambda v|| / lambda of G = H H^dagger drops to ``tolerance``.
    """
    a = _entries(H)
    if a.size == 0:
        return NormEstimate(0.0, "exact")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if method == "auto":
        method = "exact" if min(a.shape) <= EXACT_MAX_DIM else "power-iteration"
    if method == "exact":
        s = np.linalg.svd(a, compute_uv=False)
        return NormEstimate(float(s[0]), "exact")
    if method == "power-iteration":
        # iterate on the smaller Gram matrix
        return _power_iteration(a if a.shape[0] <= a.shape[1] else a.conj().T, tolerance, max_iter, seed)
    if method == "lanczos":
        return _lanczos(a, tolerance, seed)
    raise ValueError(f"unknown method {method!r}")


def max_entry_lower_bound(H) -> float:
    """||H|| >= max |h_jk| (the norm dominates every entry)."""
    a = _entries(H)
    return float(np.abs(a).max()) if a.size else 0.0


def schur_bound(H) -> float:
    """sqrt(||H||_1 ||H||_inf), an upper bound on the spectral norm."""
    mag = np.abs(_entries(H))
    if mag.size == 0:
        return 0.0
    return math.sqrt(mag.sum(axis=0).max() * mag.sum(axis=1).max())


# -- Gershgorin-type bounds ---------------------------------------------------

def _check_partition(blocks, dim: int) -> list[np.ndarray]:
    blocks = [np.asarray(b, dtype=np.int64).ravel() for b in blocks]
    if any(b.size == 0 for b in blocks):
        raise ValueError("partition contains an empty block")
    allidx = np.concatenate(blocks) if blocks else np.empty(0, dtype=np.int64)
    if allidx.size != dim or not np.array_equal(np.sort(allidx), np.arange(dim)):
        raise ValueError(f"partition must cover 0..{dim - 1} exactly once")
    return blocks


def block_norm_matrix(H, row_blocks, col_blocks=None) -> np.ndarray:
    """Matrix of spectral norms ||B_jk|| for the given row/column partition.

    Blocks of equal shape are stacked and decomposed in one batched SVD.
    """
    a = _entries(H)
    row_blocks = _check_partition(row_blocks, a.shape[0])
    col_blocks = row_blocks if col_blocks is None else _check_partition(col_blocks, a.shape[1])

    def grouped(blocks):
        by_size = defaultdict(list)
        for i, b in enumerate(blocks):
            by_size[b.size].append(i)
        return by_size

    out = np.empty((len(row_blocks), len(col_blocks)))
    for rsize, rids in grouped(row_blocks).items():
        ridx = np.concatenate([row_blocks[i] for i in rids])
        sub = a[ridx]
        for csize, cids in grouped(col_blocks).items():
            cidx = np.concatenate([col_blocks[i] for i in cids])
            stack = sub[:, cidx].reshape(len(rids), rsize, len(cids), csize).transpose(0, 2, 1, 3)
            if rsize == 1 or csize == 1:
                norms = np.sqrt((np.abs(stack) ** 2).sum(axis=(2, 3)))
            else:
                norms = np.linalg.svd(stack, compute_uv=False)[..., 0]
            out[np.ix_(rids, cids)] = norms
    return out


def block_gershgorin_bound(H, partition, col_partition=None) -> float:
    """max(max_j sum_k ||B_jk||, max_j sum_k ||B_kj||)."""
    norms = block_norm_matrix(H, partition, col_partition)
    return float(max(norms.sum(axis=1).max(), norms.sum(axis=0).max()))


def scalar_gershgorin_bound(H) -> float:
    """Largest absolute row or column sum."""
    mag = np.abs(_entries(H))
    if mag.size == 0:
        return 0.0
    return float(max(mag.sum(axis=1).max(), mag.sum(axis=0).max()))


def superposition_partition(n: int, nu: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Split n nodes at random into round(n^(1 - nu/2)) sparse sub-networks."""
    k = max(1, min(n, int(round(float(n) ** (1 - nu / 2))))) if nu < 2 else 1
    return [np.sort(b) for b in np.array_split(rng.permutation(n), k)]


# -- recursive decomposition ---------------------------------------------------

@dataclass(frozen=True)
class RecursionSchedule:
    n: int
    nu: float
    depth: int
    areas: np.ndarray  # A_0..A_l
    branching: np.ndarray  # K_1..K_l
    occupancy: np.ndarray  # m_0..m_l


def recursion_schedule(n: int, nu: float, depth: int) -> RecursionSchedule:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    i = np.arange(depth + 1)
    areas = float(n) ** (nu - i / (depth + 1))
    occupancy = areas * float(n) ** (1 - nu)
    return RecursionSchedule(n, nu, depth, areas, areas[:-1] / areas[1:], occupancy)


@dataclass(frozen=True)
class RecursionReport:
    norm: float
    clusters: int
    cluster_area: float
    expected_occupancy: float
    max_near_norm: float  # max_j ||H(R_j)||
    block_decomposition: float  # block Gershgorin bound from the cluster blocks
    far_measured: float  # max_j sum_{k in S_j} ||H_jk||
    far_analytic: float  # max_j sqrt(n^eps) sum_{k in S_j} sqrt(m1) / d_jk
    far_closed_form: float  # 8 sqrt(n^eps) sqrt(K1 m1 / A1)
    recursion_rhs: float

    @property
    def decomposition_holds(self) -> bool:
        return self.norm <= self.block_decomposition * (1 + 1e-12)

    @property
    def recursion_holds(self) -> bool:
        return self.norm <= self.recursion_rhs * (1 + 1e-12)

    @property
    def far_slack(self) -> float:
        return self.far_closed_form - self.far_measured


def verify_recursion_inequality(
    H, layout: ClusterLayout, config: SimulationConfig, method: str = "auto"
) -> RecursionReport:
    """Check ||H|| <= 9 max_j ||H(R_j)|| + 8 sqrt(n^eps) sqrt(K1 m1 / A1) on a square grid.

    R_j is cluster j with its (up to) 8 neighbours and S_j the rest.  The
    far-field sum over S_j is measured from the actual block norms and
    compared with its analytic replacement.
    """
    a = _entries(H)
    if layout.n_rows != layout.n_cols or not math.isclose(layout.cell_width, layout.cell_height):
        raise ValueError("recursion check needs a square grid of square clusters")
    k1 = layout.n_cells
    if 1 < k1 < 9:
        raise ValueError(f"grid too coarse: {k1} clusters, need at least 9")
    side_len = layout.cell_width
    area1 = side_len**2
    m1 = area1 * float(config.n) ** (1 - config.nu)
    root_eps = math.sqrt(float(config.n) ** config.epsilon)
    norm = spectral_norm(a, method=method).value
    far_closed = 8 * root_eps * math.sqrt(k1 * m1 / area1)
    if k1 == 1:
        return RecursionReport(norm, 1, area1, m1, norm, norm, 0.0, 0.0, far_closed, 9 * norm + far_closed)

    cells = layout.flat_cells()
    nonempty = [i for i, c in enumerate(cells) if c.size]
    blocks = block_norm_matrix(a, [cells[i] for i in nonempty])
    full = np.zeros((k1, k1))
    full[np.ix_(nonempty, nonempty)] = blocks
    rows, cols = np.divmod(np.arange(k1), layout.n_cols)
    centers = np.column_stack([(cols + 0.5) * side_len, (rows + 0.5) * side_len])
    dist = np.hypot(*(centers[:, None, :] - centers[None, :, :]).transpose(2, 0, 1))
    near = dist < 2 * side_len * (1 - 1e-12)

    near_norms = []
    far_meas = []
    far_anal = []
    for j in range(k1):
        idx = np.concatenate([cells[k] for k in np.flatnonzero(near[j])])
        near_norms.append(spectral_norm(a[np.ix_(idx, idx)], method=method).value if idx.size else 0.0)
        far = ~near[j]
        far_meas.append(max(full[j, far].sum(), full[far, j].sum()))
        far_anal.append(root_eps * float(np.sum(math.sqrt(m1) / dist[j, far])))
    max_near = max(near_norms)
    decomposition = float(max(full.sum(axis=1).max(), full.sum(axis=0).max()))
    return RecursionReport(
        norm=norm,
        clusters=k1,
        cluster_area=area1,
        expected_occupancy=m1,
        max_near_norm=max_near,
        block_decomposition=decomposition,
        far_measured=float(max(far_meas)),
        far_analytic=float(max(far_anal)),
        far_closed_form=far_closed,
        recursion_rhs=9 * max_near + far_closed,
    )


# -- trace moments between two clusters ----------------------------------------

@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    trials: int


def _check_moment_geometry(A: float, d: float) -> None:
    if not (2 * math.sqrt(A) <= d * (1 + 1e-12) and d <= A * (1 + 1e-12)):
        raise ValueError(f"geometry must satisfy 2 sqrt(A) <= d <= A, got A={A}, d={d}")


def intercluster_sample(m: int, A: float, d: float, rng: np.random.Generator) -> np.ndarray:
    """m x m LOS matrix between two squares of area A, centres d apart."""
    s = math.sqrt(A)
    rx = rng.uniform(-s / 2, s / 2, size=(m, 2))
    tx = rng.uniform(-s / 2, s / 2, size=(m, 2))
    tx[:, 0] += d
    r = np.hypot(rx[:, None, 0] - tx[None, :, 0], rx[:, None, 1] - tx[None, :, 1])
    return los_entries(r)


def trace_power(h: np.ndarray, ell: int) -> float:
    """Tr((H H^dagger)^ell)."""
    if ell == 1:
        return float(np.sum(np.abs(h) ** 2))
    g = h @ h.conj().T
    if ell == 2:
        return float(np.sum(np.abs(g) ** 2))
    ev = np.clip(np.linalg.eigvalsh(g), 0.0, None)
    return float(np.sum(ev**ell))


def trace_moment(
    m: int, A: float, d: float, ell: int, trials: int, seed: int = 0, threads: int = 1
) -> MomentEstimate:
    """Monte Carlo estimate of E Tr((H H^dagger)^ell) for the two-cluster matrix."""
    if ell < 1:
        raise ValueError("moment order must be >= 1")
    if trials < 2:
        raise ValueError("need at least 2 trials for a standard error")
    _check_moment_geometry(A, d)

    def one(t):
        return trace_power(intercluster_sample(m, A, d, derive_rng(seed, t, STREAM_AUX)), ell)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        vals = np.fromiter(pool.map(one, range(trials)), dtype=float, count=trials)
    return MomentEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)), trials)


def moment_bound_branches(m: int, A: float, d: float, ell: int) -> tuple[float, float]:
    """(m^(l+1) / d^(2l), m^(2l) (log A)^(l-1) / (A^(l-1) d^(l+1)))."""
    first = m ** (ell + 1) / d ** (2 * ell)
    second = m ** (2 * ell) * math.log(A) ** (ell - 1) / (A ** (ell - 1) * d ** (ell + 1))
    return first, second


def moment_bound(m: int, A: float, d: float, ell: int) -> float:
    return max(moment_bound_branches(m, A, d, ell))


def block_norm_bound_branches(m: int, A: float, d: float, epsilon: float) -> tuple[float, float]:
    """The two candidates m^(2+eps)/(A d) and m^(1+eps)/d^2 for ||H||^2."""
    return m ** (2 + epsilon) / (A * d), m ** (1 + epsilon) / d**2


def inverse_square_expectation(A: float, d: float) -> float:
    """E[1/r^2] for one uniform point in each of two squares of area A, centres d apart.

    The coordinate differences are triangular on [-s, s] (s = sqrt(A)), so
    the expectation is a 2-D integral evaluated by adaptive quadrature.
    """
    s = math.sqrt(A)
    if d <= s:
        raise ValueError(f"clusters overlap: need d > sqrt(A), got A={A}, d={d}")

    def f(v, u):
        return (s - abs(u)) * (s - abs(v)) / ((d + u) ** 2 + v**2)

    val, _ = integrate.dblquad(f, -s, s, -s, s, epsabs=0.0, epsrel=1e-10)
    return val / s**4


# -- closed forms --------------------------------------------------------------

def norm_bound_prediction(n: float, nu: float, epsilon: float) -> float:
    """n^(2 - 3 nu/2 + eps) for 0 < nu < 2, n^(1 - nu + eps) for nu >= 2."""
    if not nu > 0:
        raise ValueError("nu must be > 0")
    expo = 2 - 1.5 * nu if nu < 2 else 1 - nu
    return float(n) ** (expo + epsilon)


def capacity_upper_bound(P: float, norm: NormEstimate | float) -> float:
    if P < 0:
        raise ValueError("power must be >= 0")
    value = norm.value if isinstance(norm, NormEstimate) else float(norm)
    return P * value**2
