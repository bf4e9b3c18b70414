"""Back-and-forth beamforming between paired clusters.

Transmitters pre-rotate their signal by exp(-2 pi i x_k), where x_k is the
horizontal distance from the facing edge of their own cluster.  Receivers
in the partner cluster then see phases that differ by at most
pi / c1^2, so the contributions add up nearly coherently.

The amplify-and-forward recursion is linear, so instead of sampling noise
we carry the exact noise covariance of every active node from step to
step: C <- A^2 F C F^dagger + sigma^2 I.  Signal coefficients are carried
the same way, s <- A F s.  Both include the cross-pair paths, so the
interference is part of the exact model, not an added approximation.
Each relay also removes the rotation exp(2 pi i (x_j + d)) it knows its
received signal carries, so relayed signals stay phase aligned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.spatial.distance import cdist

from .config import STREAM_AUX, STREAM_NOISE, SimulationConfig, derive_rng
from .netgeom import (
    ClusterPair,
    NodeSet,
    PairSchedule,
    nominal_cluster_height,
    pair_distance_d,
    simultaneous_pairs,
    vertical_gap,
)

T_CAP = 64


def _phase(r: np.ndarray) -> np.ndarray:
    return np.exp(2j * np.pi * (r - np.floor(r)))


def compensated_field(
    positions: np.ndarray, tx, rx, tx_edge: float | None = None
) -> np.ndarray:
    """Complex sums sum_k exp(2 pi i (r_jk - x_k)) / r_jk for every receiver j.

    Without ``tx_edge`` the compensation uses the raw x coordinate with the
    sign that points away from the receivers; the magnitude is unchanged
    by the choice of reference edge.
    """
    tx = np.asarray(tx, dtype=np.int64)
    rx = np.atleast_1d(np.asarray(rx, dtype=np.int64))
    if np.intersect1d(tx, rx).size:
        raise ValueError("receiver is one of the transmitters")
    ptx = positions[tx]
    prx = positions[rx]
    r = cdist(prx, ptx)
    if tx_edge is None:
        direction = np.sign(prx[:, 0].mean() - ptx[:, 0].mean()) or 1.0
        x_k = -direction * ptx[:, 0]
    else:
        x_k = np.abs(ptx[:, 0] - tx_edge)
    return (_phase(r - x_k[None, :]) / r).sum(axis=1)


def compensated_gain(nodes: NodeSet, tx, rx_node: int, tx_edge: float | None = None) -> float:
    return float(abs(compensated_field(nodes.positions, tx, [rx_node], tx_edge)[0]))


def full_gain(nodes: NodeSet, tx, rx_node: int) -> float:
    """sum_k 1 / r_jk, the gain with perfect phase alignment."""
    p = nodes.positions
    r = np.hypot(*(p[np.asarray(tx)] - p[rx_node]).T)
    return float(np.sum(1.0 / r))


def cosine_gain_bound(nodes: NodeSet, tx, rx_node: int, c1: float) -> float:
    return math.cos(math.pi / c1**2) * full_gain(nodes, tx, rx_node)


@dataclass(frozen=True)
class SandwichReport:
    max_deviation: float
    min_deviation: float
    upper_bound: float

    @property
    def conforming(self) -> bool:
        return self.min_deviation >= -1e-9 and self.max_deviation <= self.upper_bound + 1e-12


def distance_sandwich_check(
    nodes: NodeSet, tx, rx_node: int, d: float, c1: float, tx_edge: float
) -> SandwichReport:
    """Deviations r_jk - x_k - x_j - d for one receiver.

    ``tx_edge`` is the facing edge of the transmit cluster; the receive
    cluster's facing edge lies d further towards the receiver.
    """
    p = nodes.positions
    tx = np.asarray(tx, dtype=np.int64)
    xr, yr = p[rx_node]
    rx_edge = tx_edge + d if xr >= tx_edge else tx_edge - d
    x_k = np.abs(p[tx, 0] - tx_edge)
    x_j = abs(xr - rx_edge)
    r = np.hypot(p[tx, 0] - xr, p[tx, 1] - yr)
    dev = r - x_k - x_j - d
    return SandwichReport(float(dev.max()), float(dev.min()), 1.0 / (2 * c1**2))


def interference_sum(nodes: NodeSet, interfering_tx_clusters, rx_node: int) -> float:
    """|sum_l sum_k exp(2 pi i (r_jk - x_k)) / r_jk| over other active clusters.

    ``interfering_tx_clusters`` is a sequence of ``(indices, facing_edge)``.
    """
    total = 0j
    for members, edge in interfering_tx_clusters:
        members = np.asarray(members, dtype=np.int64)
        if members.size:
            total += compensated_field(nodes.positions, members, [rx_node], edge)[0]
    return float(abs(total))


# -- interference expectation and its quadrature oracle -----------------------

def interference_expectation_bound(
    l: int, c1: float, c2: float, n: float, nu: float, epsilon: float
) -> float:
    """(9 c1 / (pi c2)) / (l d n^eps) with d = n^(nu/2) / 4."""
    if l < 1:
        raise ValueError("pair offset l must be >= 1")
    if not nu > 2 * epsilon:
        raise ValueError(f"regime needs nu > 2 eps, got nu={nu}, eps={epsilon}")
    d = float(n) ** (nu / 2) / 4
    return 9 * c1 / (math.pi * c2) / (l * d * float(n) ** epsilon)


def interference_integral_bound(l: int, c2: float, n: float, nu: float, epsilon: float) -> float:
    """9 / (2 pi) / (l c2 n^(nu/4 + eps))."""
    return 9 / (2 * math.pi) / (l * c2 * float(n) ** (nu / 4 + epsilon))


def interference_integral(x_j: float, y_j: float, x_k: float, y0: float, y1: float, d: float) -> float:
    """Integral of cos(2 pi r) / r over y_k in [y0, y1] by adaptive quadrature."""
    if y1 == y0:
        return 0.0
    dx = x_k + x_j + d

    def f(y):
        r = math.hypot(dx, y - y_j)
        return math.cos(2 * math.pi * (r - math.floor(r))) / r

    val, _ = integrate.quad(f, y0, y1, epsabs=1e-15, epsrel=1e-10, limit=200)
    return val


@dataclass(frozen=True)
class IntegralCheck:
    values: np.ndarray
    bounds: np.ndarray

    @property
    def fraction_within(self) -> float:
        return float(np.mean(np.abs(self.values) <= self.bounds))


def sample_interference_integrals(
    config: SimulationConfig, count: int, l: int | None = None, trial: int = 0
) -> IntegralCheck:
    """Quadrature over random receiver / transmitter placements in the pair geometry.

    The receive cluster occupies [0, h] vertically, the l-th interfering
    transmit cluster starts l (h + gap) above it.  Horizontal positions are
    uniform over the cluster width L/4.
    """
    rng = derive_rng(config.seed, trial, STREAM_AUX)
    n = config.n
    h = nominal_cluster_height(config)
    gap = vertical_gap(config)
    d = pair_distance_d(config)
    w = config.side / 4
    n_c = max(2, simultaneous_pairs(config.side, h, gap))
    vals = np.empty(count)
    bounds = np.empty(count)
    for i in range(count):
        li = l if l is not None else int(rng.integers(1, n_c))
        x_j, x_k = rng.uniform(0, w, size=2)
        y_j = rng.uniform(0, h)
        y0 = li * (h + gap)
        vals[i] = interference_integral(x_j, y_j, x_k, y0, y0 + h, d)
        bounds[i] = interference_integral_bound(li, config.c2, n, config.nu, config.epsilon)
    return IntegralCheck(vals, bounds)


# -- Hoeffding tail -------------------------------------------------------------

def hoeffding_tail(span: float, m: int, t: float) -> float:
    """2 exp(-2 m t^2 / span^2); with span = 2/d this is 2 exp(-m d^2 t^2 / 2)."""
    if not t > 0:
        raise ValueError("threshold must be > 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    return 2.0 * math.exp(-2.0 * m * t**2 / span**2)


def hoeffding_threshold(n: float, epsilon: float, epsilon1: float, d: float) -> float:
    """t = sqrt(2 n^(eps + eps1 - 1)) / d, for which the tail is 2 exp(-n^eps1)."""
    return math.sqrt(2 * float(n) ** (epsilon + epsilon1 - 1)) / d


def empirical_hoeffding_frequency(
    d: float, m: int, t: float, trials: int, rng: np.random.Generator
) -> float:
    """Frequency of |mean - E| > t for m i.i.d. cos(2 pi U) / d terms."""
    x = np.cos(2 * np.pi * rng.uniform(size=(trials, m))) / d
    return float(np.mean(np.abs(x.mean(axis=1)) > t))


# -- amplification and slot spacing ------------------------------------------

def amplification_factor(gain_base: float, snr_floor: float, t: int) -> float:
    """A with (A * gain_base)^(2t) * snr_floor = 1."""
    if not (gain_base > 0 and snr_floor > 0 and t >= 1):
        raise ValueError("gain_base and snr_floor must be > 0 and t >= 1")
    return snr_floor ** (-1.0 / (2 * t)) / gain_base


def select_rounds(snr_floor: float, n: float, epsilon: float, cap: int = T_CAP) -> tuple[int, bool]:
    """Smallest t with snr_floor^(-1/t) <= n^eps, capped at ``cap``."""
    if not snr_floor > 0:
        raise ValueError("snr_floor must be > 0")
    if snr_floor >= 1:
        return 1, False
    need = math.log(1 / snr_floor) / (epsilon * math.log(n)) if n > 1 else math.inf
    t = max(1, math.ceil(need * (1 - 1e-12)))
    return (cap, True) if t > cap else (t, False)


@dataclass(frozen=True)
class SlotSpacing:
    tau: int
    raw: float
    duty_cycle: float | None
    required_amp: float | None
    power_ratio: float | None  # A^2 / ((n^nu / (N_C M)) tau P)

    @property
    def power_feasible(self) -> bool | None:
        if self.power_ratio is None:
            return None
        return self.power_ratio <= 1 + 1e-12

    @property
    def power_tau(self) -> int | None:
        """Smallest spacing for which the amplification meets the power budget."""
        if self.power_ratio is None:
            return None
        return max(1, math.ceil(self.tau * self.power_ratio * (1 - 1e-12)))


def slot_spacing(
    P: float,
    d: float,
    M: float,
    n: float,
    nu: float,
    t: int,
    snr_floor: float,
    epsilon: float,
    n_pairs: int | None = None,
    amp: float | None = None,
) -> SlotSpacing:
    """tau = ceil((1/P) (d / (M n^(1-nu)))^2 n^(-eps) SNR^(-1/t)).

    With ``n_pairs`` the duty cycle N_C M n^(1-nu) / n is reported; with
    ``amp`` as well, the ratio of A^2 to the budget (n^nu / (N_C M)) tau P.
    """
    if not all(v > 0 for v in (P, d, M, n, snr_floor)) or t < 1:
        raise ValueError("slot_spacing needs positive inputs and t >= 1")
    occupancy = M * float(n) ** (1 - nu)
    raw = (d / occupancy) ** 2 / P * float(n) ** (-epsilon) * snr_floor ** (-1.0 / t)
    tau = max(1, math.ceil(raw * (1 - 1e-12)))
    duty = req = ratio = None
    if n_pairs is not None:
        duty = n_pairs * occupancy / n
        req = math.sqrt(float(n) ** nu / (n_pairs * M) * tau * P)
        if amp is not None:
            ratio = (amp / req) ** 2
    return SlotSpacing(tau, raw, duty, req, ratio)


# -- full scheme -----------------------------------------------------------------

@dataclass(frozen=True)
class SchemeParams:
    t: int
    amp_factor: float
    tau: int
    k1: float
    k2: float
    snr_floor: float
    gain_base: float
    d: float
    cluster_area: float
    n_pairs: int
    rounds_total: int
    t_capped: bool = False
    snr_regime_ok: bool = True
    power_ratio: float | None = None
    power_tau: int | None = None
    source: int = 0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.t < 1 or not self.amp_factor > 0 or self.tau < 1:
            raise ValueError("need t >= 1, A > 0, tau >= 1")


def phase1_snr(nodes: NodeSet, source: int, tau0: float, P: float) -> np.ndarray:
    """Received SNR n tau0 P / r^2 of the source broadcast; inf at the source."""
    p = nodes.positions
    r2 = ((p - p[source]) ** 2).sum(axis=1)
    with np.errstate(divide="ignore"):
        snr = len(nodes) * tau0 * P / r2
    snr[source] = np.inf
    return snr


def pair_gains(nodes: NodeSet, pair: ClusterPair) -> np.ndarray:
    """Compensated gains at every receiver of ``pair``, both directions."""
    out = []
    p = nodes.positions
    if pair.left.size and pair.right.size:
        out.append(np.abs(compensated_field(p, pair.left, pair.right, pair.left_edge)))
        out.append(np.abs(compensated_field(p, pair.right, pair.left, pair.right_edge)))
    return np.concatenate(out) if out else np.empty(0)


def round_interference(nodes: NodeSet, pairs: list[ClusterPair], tx_side: str):
    """Per receiver: (pair id, rx index, own-pair gain, interference magnitude)."""
    p = nodes.positions
    rx_side = "right" if tx_side == "left" else "left"
    rows = []
    for pr in pairs:
        rx = pr.right if rx_side == "right" else pr.left
        own_tx = pr.left if tx_side == "left" else pr.right
        if rx.size == 0:
            continue
        own = (
            np.abs(compensated_field(p, own_tx, rx, pr.edge(tx_side)))
            if own_tx.size
            else np.zeros(rx.size)
        )
        inter = np.zeros(rx.size, dtype=complex)
        for other in pairs:
            if other.pair_id == pr.pair_id:
                continue
            otx = other.left if tx_side == "left" else other.right
            if otx.size:
                inter += compensated_field(p, otx, rx, other.edge(tx_side))
        rows.append((pr.pair_id, rx, own, np.abs(inter)))
    return rows


def gain_ratios(nodes: NodeSet, schedule: PairSchedule) -> np.ndarray:
    """Compensated gain over M n^(1-nu) / d for every scheduled receiver, both directions."""
    lay = schedule.layout
    occupancy = schedule.cluster_width * schedule.cluster_height * len(nodes) / (lay.side**2)
    base = occupancy / schedule.d
    seen = set()
    out = []
    for pr in schedule.pairs:
        if (pr.row, pr.left_col) in seen:
            continue
        seen.add((pr.row, pr.left_col))
        out.append(pair_gains(nodes, pr) / base)
    return np.concatenate(out) if out else np.empty(0)


@dataclass(frozen=True)
class CosineBoundCheck:
    gains: np.ndarray
    bounds: np.ndarray
    max_deviation: float  # largest r_jk - x_k - x_j - d over all scheduled links
    min_deviation: float

    @property
    def fraction_within(self) -> float:
        return float(np.mean(self.gains >= self.bounds * (1 - 1e-12))) if self.gains.size else 1.0


def cosine_bound_check(nodes: NodeSet, schedule: PairSchedule, c1: float) -> CosineBoundCheck:
    """Compensated gain against cos(pi / c1^2) sum_k 1 / r_jk for every scheduled receiver."""
    p = nodes.positions
    factor = math.cos(math.pi / c1**2)
    gains, bounds = [], []
    dmax, dmin = -math.inf, math.inf
    seen = set()
    for pr in schedule.pairs:
        if (pr.row, pr.left_col) in seen or not (pr.left.size and pr.right.size):
            continue
        seen.add((pr.row, pr.left_col))
        r = cdist(p[pr.right], p[pr.left])
        xl = pr.local_x(p, "left")
        xr = pr.local_x(p, "right")
        dev = r - xl[None, :] - xr[:, None] - pr.gap
        dmax, dmin = max(dmax, float(dev.max())), min(dmin, float(dev.min()))
        for rr, x_tx in ((r, xl), (r.T, xr)):
            gains.append(np.abs((_phase(rr - x_tx[None, :]) / rr).sum(axis=1)))
            bounds.append(factor * (1.0 / rr).sum(axis=1))
    if not gains:
        return CosineBoundCheck(np.empty(0), np.empty(0), dmax, dmin)
    return CosineBoundCheck(np.concatenate(gains), np.concatenate(bounds), dmax, dmin)


def interference_ratios(nodes: NodeSet, schedule: PairSchedule) -> np.ndarray:
    """Interference magnitude over own-pair compensated gain, per receiver and direction."""
    out = []
    for r in range(schedule.rounds_total):
        pairs = schedule.pairs_in_round(r)
        if not pairs or pairs[0].end_side != "right":
            continue  # the "left" round repeats the same active set
        for tx_side in ("left", "right"):
            for _, _, own, inter in round_interference(nodes, pairs, tx_side):
                keep = own > 0
                out.append(inter[keep] / own[keep])
    return np.concatenate(out) if out else np.empty(0)


def design_scheme(
    nodes: NodeSet, schedule: PairSchedule, config: SimulationConfig, source: int = 0
) -> SchemeParams:
    """Choose t, A and tau for one realisation.

    K1 is measured as the RMS compensated gain over all scheduled receivers
    divided by M n^(1-nu) / d; A is then set so that (A K1 M n^(1-nu)/d)^(2t)
    times the SNR floor equals one.
    """
    n, nu, eps = config.n, config.nu, config.epsilon
    P = config.power
    d = schedule.d
    M = schedule.cluster_width * schedule.cluster_height
    occupancy = M * float(n) ** (1 - nu)
    gain_base = occupancy / d
    flags = []

    tau0 = max(1, math.ceil((d / occupancy) ** 2 / P * (1 - 1e-12)))
    snr = phase1_snr(nodes, source, tau0, P)
    snr_floor = float(np.min(snr[np.isfinite(snr)])) if len(nodes) > 1 else 1.0
    regime_ok = snr_floor >= float(n) ** (nu / 2 - 1 - eps)
    if not regime_ok:
        flags.append("snr-floor-below-threshold")
    if not (2 * eps < nu <= 2 - eps):
        flags.append("nu-outside-interference-window")
    t, capped = select_rounds(snr_floor, n, eps)
    if capped:
        flags.append("t-capped")

    gains = np.concatenate([pair_gains(nodes, pr) for pr in schedule.pairs] or [np.empty(0)])
    gains = gains[gains > 0]
    k1 = float(np.sqrt(np.mean(gains**2)) / gain_base) if gains.size else 1.0

    k2 = 0.0
    scale = d * float(n) ** eps / (occupancy * max(math.log(n), 1e-12))
    for r in range(schedule.rounds_total):
        pairs = schedule.pairs_in_round(r)
        if len(pairs) > 1 and pairs[0].end_side == "right":
            for _, _, _, inter in round_interference(nodes, pairs, "left"):
                if inter.size:
                    k2 = max(k2, float(inter.max()) * scale)

    amp = amplification_factor(k1 * gain_base, snr_floor, t)
    slot = slot_spacing(P, d, M, n, nu, t, snr_floor, eps, n_pairs=schedule.n_pairs, amp=amp)
    return SchemeParams(
        t=t,
        amp_factor=amp,
        tau=slot.tau,
        k1=k1,
        k2=k2,
        snr_floor=snr_floor,
        gain_base=gain_base,
        d=d,
        cluster_area=M,
        n_pairs=schedule.n_pairs,
        rounds_total=schedule.rounds_total,
        t_capped=capped,
        snr_regime_ok=regime_ok,
        power_ratio=slot.power_ratio,
        power_tau=slot.power_tau,
        source=source,
        flags=tuple(flags),
    )


TRACE_HEADER = ("round", "pair", "rx_index", "signal_mag", "noise_power", "interference_mag", "sinr")


@dataclass
class BeamformTrace:
    """Per-step records of every receiver plus the final SINR of served nodes.

    ``step`` counts back-and-forth transmissions inside one TDMA round;
    ``tdma_round`` identifies the round itself.
    """

    t: int
    tdma_round: np.ndarray
    step: np.ndarray
    pair: np.ndarray
    rx: np.ndarray
    signal_mag: np.ndarray
    noise_power: np.ndarray
    interference_mag: np.ndarray
    sinr: np.ndarray
    final_nodes: np.ndarray
    final_sinr: np.ndarray
    final_noise: np.ndarray
    final_signal: np.ndarray
    noise_monotone: bool
    params: SchemeParams | None = field(default=None, repr=False)

    @property
    def rates(self) -> np.ndarray:
        return np.log2(1.0 + self.final_sinr)

    @property
    def noise_constant(self) -> float:
        """max final noise power / (t + 1)."""
        return float(self.final_noise.max() / (self.t + 1)) if self.final_noise.size else 0.0

    def write_csv(self, path: str | Path) -> None:
        order = np.lexsort((self.rx, self.pair, self.step, self.tdma_round))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for i in order:
                w.writerow([
                    int(self.step[i]),
                    int(self.pair[i]),
                    int(self.rx[i]),
                    repr(float(self.signal_mag[i])),
                    repr(float(self.noise_power[i])),
                    repr(float(self.interference_mag[i])),
                    repr(float(self.sinr[i])),
                ])


def _side_members(pairs, side, positions):
    idx, x, pid = [], [], []
    for pr in pairs:
        members = pr.left if side == "left" else pr.right
        idx.append(members)
        x.append(pr.local_x(positions, side))
        pid.append(np.full(members.size, pr.pair_id))
    return np.concatenate(idx), np.concatenate(x), np.concatenate(pid)


def run_back_and_forth(
    nodes: NodeSet,
    schedule: PairSchedule,
    params: SchemeParams,
    config: SimulationConfig | None = None,
    noise_variance: float = 1.0,
    rounds=None,
    noise_samples: int | None = None,
    trial: int = 0,
) -> BeamformTrace:
    """Simulate every TDMA round of the back-and-forth phase.

    After the source broadcast every node holds sqrt(SNR) X + Z with SNR
    equal to the network-wide floor and unit-variance Z (nodes with a
    better observation add noise to match the floor).  In each round the
    active pairs exchange t amplify-and-forward transmissions and the
    side receiving the last one is served.

    By default noise powers are exact (covariance propagation).  With
    ``noise_samples=k`` they are instead averages of |Z|^2 over k
    independent circular Gaussian realisations drawn from the noise stream
    of ``(config.seed, trial)``; the monotonicity flag is then statistical.
    """
    p = nodes.positions
    A = params.amp_factor
    t = params.t
    sigma2 = float(noise_variance)
    sampled = noise_samples is not None
    if sampled:
        if noise_samples < 1:
            raise ValueError("noise_samples must be >= 1")
        seed = config.seed if config is not None else 0
        rng = derive_rng(seed, trial, STREAM_NOISE)
        sigma = math.sqrt(sigma2 / 2)

        def draw(size):
            return sigma * (rng.standard_normal((size, noise_samples)) + 1j * rng.standard_normal((size, noise_samples)))
    rounds = range(schedule.rounds_total) if rounds is None else rounds

    cols = {k: [] for k in ("round", "step", "pair", "rx", "sig", "noise", "inter", "sinr")}
    fin_nodes, fin_sinr, fin_noise, fin_sig = [], [], [], []
    monotone = True

    for r in rounds:
        pairs = [pr for pr in schedule.pairs_in_round(r) if pr.left.size and pr.right.size]
        if not pairs:
            continue
        end = pairs[0].end_side
        other = "left" if end == "right" else "right"
        # the side receiving step s: end side for s = t, alternating backwards
        rx_sides = [end if (t - s) % 2 == 0 else other for s in range(1, t + 1)]

        members = {side: _side_members(pairs, side, p) for side in ("left", "right")}
        li, lx, lp = members["left"]
        ri, rx_, rp = members["right"]
        dist = cdist(p[ri], p[li])  # right x left
        # Receivers strip their known rotation exp(2 pi i (x_j + d)) before
        # relaying, so the effective coefficient is exp(2 pi i (r - x_k - x_j - d)) / r.
        gap = np.concatenate([np.full(pr.right.size, pr.gap) for pr in pairs])
        gap_l = np.concatenate([np.full(pr.left.size, pr.gap) for pr in pairs])
        F = {
            "right": _phase(dist - lx[None, :] - (rx_ + gap)[:, None]) / dist,
            "left": _phase(dist.T - rx_[None, :] - (lx + gap_l)[:, None]) / dist.T,
        }
        own = {
            "right": rp[:, None] == lp[None, :],
            "left": lp[:, None] == rp[None, :],
        }
        state = {}
        first_tx = "left" if rx_sides[0] == "right" else "right"
        size = li.size if first_tx == "left" else ri.size
        noise0 = draw(size) if sampled else sigma2 * np.eye(size)
        state[first_tx] = (np.full(size, math.sqrt(params.snr_floor), dtype=complex), noise0)
        last_noise = {}

        for s, rx_side in enumerate(rx_sides, start=1):
            tx_side = "left" if rx_side == "right" else "right"
            s_tx, c_tx = state[tx_side]
            G = A * F[rx_side]
            s_rx = G @ s_tx
            inter = np.abs((G * ~own[rx_side]) @ s_tx)
            if sampled:
                c_rx = G @ c_tx + draw(G.shape[0])
                noise = np.mean(np.abs(c_rx) ** 2, axis=1)
            else:
                c_rx = G @ c_tx @ G.conj().T
                c_rx[np.diag_indices_from(c_rx)] += sigma2
                c_rx = 0.5 * (c_rx + c_rx.conj().T)
                noise = np.real(np.diag(c_rx)).copy()
            state[rx_side] = (s_rx, c_rx)

            if rx_side in last_noise and np.any(noise < last_noise[rx_side] * (1 - 1e-9) - 1e-300):
                monotone = False
            last_noise[rx_side] = noise
            sig = np.abs(s_rx) ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                sinr = np.where(noise > 0, sig / noise, np.inf)
            idx, _, pid = members[rx_side]
            cols["round"].append(np.full(idx.size, r))
            cols["step"].append(np.full(idx.size, s))
            cols["pair"].append(pid)
            cols["rx"].append(idx)
            cols["sig"].append(np.abs(s_rx))
            cols["noise"].append(noise)
            cols["inter"].append(inter)
            cols["sinr"].append(sinr)
            if s == t:
                fin_nodes.append(idx)
                fin_sinr.append(sinr)
                fin_noise.append(noise)
                fin_sig.append(sig)

    cat = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in cols.items()}
    return BeamformTrace(
        t=t,
        tdma_round=cat["round"].astype(np.int64),
        step=cat["step"].astype(np.int64),
        pair=cat["pair"].astype(np.int64),
        rx=cat["rx"].astype(np.int64),
        signal_mag=cat["sig"],
        noise_power=cat["noise"],
        interference_mag=cat["inter"],
        sinr=cat["sinr"],
        final_nodes=np.concatenate(fin_nodes) if fin_nodes else np.empty(0, dtype=np.int64),
        final_sinr=np.concatenate(fin_sinr) if fin_sinr else np.empty(0),
        final_noise=np.concatenate(fin_noise) if fin_noise else np.empty(0),
        final_signal=np.concatenate(fin_sig) if fin_sig else np.empty(0),
        noise_monotone=monotone,
        params=params,
    )


def achieved_broadcast_rate(
    trace: BeamformTrace, tau: int, rounds_total: int, served_sources: int = 1
) -> float:
    """served_sources * min_j log2(1 + SINR_j) / (tau * rounds_total), bits per slot."""
    if trace.final_sinr.size == 0:
        return 0.0
    return served_sources * float(np.min(trace.rates)) / (tau * rounds_total)
