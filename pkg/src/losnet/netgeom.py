"""Node placement, cluster grids, the cluster-pair schedule and count deviations."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import STREAM_NODES, SimulationConfig, derive_rng

# Relative slack when deciding whether a length divides the side.
_DIV_TOL = 1e-9


@dataclass(frozen=True)
class NodeSet:
    positions: np.ndarray  # shape (n, 2), columns x, y
    side: float
    config: SimulationConfig | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"positions must have shape (n, 2), got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.positions[:, 1]

    @classmethod
    def from_points(cls, points, side: float | None = None) -> "NodeSet":
        pos = np.asarray(points, dtype=float).reshape(-1, 2)
        if side is None:
            side = float(pos.max()) if pos.size else 0.0
        return cls(pos, float(side))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "x", "y"])
            for i, (x, y) in enumerate(self.positions):
                writer.writerow([i, repr(float(x)), repr(float(y))])

    @classmethod
    def read_csv(cls, path: str | Path, side: float) -> "NodeSet":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["index", "x", "y"]:
                raise ValueError(f"expected header index,x,y, got {reader.fieldnames}")
            rows = sorted(reader, key=lambda r: int(r["index"]))
        return cls(np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2), side)


def generate_network(config: SimulationConfig, trial: int = 0) -> NodeSet:
    """Place ``config.n`` nodes uniformly on [0, L)^2, L = n^(nu/2).

    Exact duplicate positions are redrawn so that every pairwise distance
    is strictly positive.
    """
    rng = derive_rng(config.seed, trial, STREAM_NODES)
    side = config.side
    pos = rng.uniform(0.0, side, size=(config.n, 2))
    while True:
        _, first = np.unique(pos, axis=0, return_index=True)
        if first.size == config.n:
            break
        dup = np.setdiff1d(np.arange(config.n), first)
        pos[dup] = rng.uniform(0.0, side, size=(dup.size, 2))
    return NodeSet(pos, side, config)


def _grid_count(side: float, step: float) -> int:
    return max(1, math.ceil(side / step * (1 - _DIV_TOL)))


@dataclass
class ClusterLayout:
    """Half-open rectangular grid over the network square.

    ``cells[row][col]`` holds the member indices of the cell spanning
    ``[col*w, (col+1)*w) x [row*h, (row+1)*h)``.  Cells cut by the far edge
    of the square are kept and marked in ``partial``.
    """

    cell_width: float
    cell_height: float
    side: float
    cells: list[list[np.ndarray]]
    counts: np.ndarray
    partial: np.ndarray
    cell_of: np.ndarray  # (n, 2) array of (row, col) per node

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cols(self) -> int:
        return self.counts.shape[1]

    @property
    def n_cells(self) -> int:
        return self.counts.size

    def members(self, row: int, col: int) -> np.ndarray:
        return self.cells[row][col]

    def bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1), clipped to the square."""
        x0 = col * self.cell_width
        y0 = row * self.cell_height
        return (x0, min(x0 + self.cell_width, self.side), y0, min(y0 + self.cell_height, self.side))

    def center(self, row: int, col: int) -> tuple[float, float]:
        x0, x1, y0, y1 = self.bounds(row, col)
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    def flat_cells(self) -> list[np.ndarray]:
        return [self.cells[r][c] for r in range(self.n_rows) for c in range(self.n_cols)]


def partition_clusters(nodes: NodeSet, cell_width: float, cell_height: float) -> ClusterLayout:
    if not (cell_width > 0 and cell_height > 0):
        raise ValueError(f"cell dimensions must be positive, got {cell_width} x {cell_height}")
    side = nodes.side
    n_cols = _grid_count(side, cell_width)
    n_rows = _grid_count(side, cell_height)
    col = np.minimum(np.floor(nodes.x / cell_width).astype(np.int64), n_cols - 1)
    row = np.minimum(np.floor(nodes.y / cell_height).astype(np.int64), n_rows - 1)
    if np.any(col < 0) or np.any(row < 0):
        raise ValueError("node coordinates must be non-negative")
    flat = row * n_cols + col
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n_rows * n_cols)
    splits = np.split(order, np.cumsum(counts)[:-1])
    cells = [[splits[r * n_cols + c] for c in range(n_cols)] for r in range(n_rows)]
    partial = np.zeros((n_rows, n_cols), dtype=bool)
    partial[:, -1] |= n_cols * cell_width > side * (1 + _DIV_TOL)
    partial[-1, :] |= n_rows * cell_height > side * (1 + _DIV_TOL)
    return ClusterLayout(
        cell_width=float(cell_width),
        cell_height=float(cell_height),
        side=side,
        cells=cells,
        counts=counts.reshape(n_rows, n_cols),
        partial=partial,
        cell_of=np.column_stack([row, col]),
    )


def square_layout(nodes: NodeSet, cells_per_side: int) -> ClusterLayout:
    s = nodes.side / cells_per_side
    return partition_clusters(nodes, s, s)


# -- back-and-forth geometry -------------------------------------------------

def nominal_cluster_height(config: SimulationConfig) -> float:
    return float(config.n) ** (config.nu / 4) / (2 * config.c1)


def pair_distance_d(config: SimulationConfig) -> float:
    return config.side / 4


def vertical_gap(config: SimulationConfig) -> float:
    return config.c2 * float(config.n) ** (config.nu / 4 + config.epsilon)


def scheme_layout(nodes: NodeSet, config: SimulationConfig | None = None) -> ClusterLayout:
    """Grid used by the back-and-forth scheme.

    Four columns of width L/4 (so paired clusters sit a gap d = L/4 apart)
    and rows of height at most n^(nu/4)/(2 c1).  The row height is shrunk to
    L / ceil(L / h) so that every row is full; a shorter cluster still obeys
    the phase-alignment geometry.
    """
    config = config or nodes.config
    if config is None:
        raise ValueError("scheme_layout needs a SimulationConfig")
    side = nodes.side
    h_nom = nominal_cluster_height(config)
    rows = _grid_count(side, h_nom)
    return partition_clusters(nodes, side / 4, side / rows)


@dataclass(frozen=True)
class ClusterPair:
    """Two clusters on one row, ``gap`` apart horizontally.

    ``left_edge`` is the inner (right) edge of the left cluster and
    ``right_edge`` the inner (left) edge of the right cluster.
    """

    pair_id: int
    round: int
    row: int
    left_col: int
    right_col: int
    left: np.ndarray
    right: np.ndarray
    left_edge: float
    right_edge: float
    y0: float
    y1: float
    end_side: str  # side that receives the final transmission: "left" | "right"

    @property
    def gap(self) -> float:
        return self.right_edge - self.left_edge

    def local_x(self, positions: np.ndarray, side: str) -> np.ndarray:
        """Horizontal distance of nodes from the facing edge of their cluster."""
        members = self.left if side == "left" else self.right
        xs = positions[members, 0]
        return self.left_edge - xs if side == "left" else xs - self.right_edge

    def edge(self, side: str) -> float:
        return self.left_edge if side == "left" else self.right_edge


@dataclass
class PairSchedule:
    pairs: list[ClusterPair]
    d: float
    vertical_gap: float
    n_pairs: int  # N_C from the closed form
    row_stride: int
    rounds: np.ndarray  # (n_rows, n_cols): round in which each cluster is the final receiver
    rounds_total: int
    cluster_height: float
    cluster_width: float
    layout: ClusterLayout = field(repr=False)

    def pairs_in_round(self, r: int) -> list[ClusterPair]:
        return [p for p in self.pairs if p.round == r]

    @property
    def max_active(self) -> int:
        return max((len(self.pairs_in_round(r)) for r in range(self.rounds_total)), default=0)


def simultaneous_pairs(side: float, cluster_height: float, gap: float) -> int:
    """N_C = floor(L / (cluster height + vertical gap))."""
    return int(math.floor(side / (cluster_height + gap) * (1 + _DIV_TOL)))


def build_pair_schedule(layout: ClusterLayout, config: SimulationConfig) -> PairSchedule:
    """Pair clusters (0,2) and (1,3) of every row and assign TDMA rounds.

    Active rows in one round are ``row_stride`` apart, the smallest stride
    that leaves a free vertical gap of at least c2 n^(nu/4 + eps) between
    adjacent active pairs.  Each pair is activated twice, once ending on
    each side, so every cluster is the final receiver in exactly one round.
    """
    side = layout.side
    if layout.n_cols != 4 or not math.isclose(layout.cell_width, side / 4, rel_tol=1e-9):
        raise ValueError("layout must have four columns of width L/4 (use scheme_layout)")
    h = layout.cell_height
    h_nom = nominal_cluster_height(config)
    if h > h_nom * (1 + 1e-9):
        raise ValueError(f"cluster height {h} exceeds n^(nu/4)/(2 c1) = {h_nom}")
    gap = vertical_gap(config)
    n_c = simultaneous_pairs(side, h_nom, gap)
    if n_c < 1:
        raise ValueError(
            f"geometry infeasible: cluster height + vertical gap = {h_nom + gap:.6g} "
            f"exceeds side L = {side:.6g}, so N_C = floor(L / (h + gap)) < 1"
        )
    n_rows = layout.n_rows
    stride = max(1, math.ceil((h + gap) / h * (1 - _DIV_TOL)))
    stride = min(stride, n_rows)
    d = pair_distance_d(config)

    pairs: list[ClusterPair] = []
    rounds = np.full((n_rows, 4), -1, dtype=np.int64)
    r = 0
    for left_col, right_col in ((0, 2), (1, 3)):
        for offset in range(stride):
            for end_side in ("right", "left"):
                for row in range(offset, n_rows, stride):
                    _, _, y0, y1 = layout.bounds(row, left_col)
                    pairs.append(
                        ClusterPair(
                            pair_id=len(pairs),
                            round=r,
                            row=row,
                            left_col=left_col,
                            right_col=right_col,
                            left=layout.members(row, left_col),
                            right=layout.members(row, right_col),
                            left_edge=(left_col + 1) * layout.cell_width,
                            right_edge=right_col * layout.cell_width,
                            y0=y0,
                            y1=y1,
                            end_side=end_side,
                        )
                    )
                    rounds[row, right_col if end_side == "right" else left_col] = r
                r += 1
    return PairSchedule(
        pairs=pairs,
        d=d,
        vertical_gap=gap,
        n_pairs=n_c,
        row_stride=stride,
        rounds=rounds,
        rounds_total=r,
        cluster_height=h,
        cluster_width=layout.cell_width,
        layout=layout,
    )


# -- cluster-size concentration ---------------------------------------------

def delta_plus(delta: float) -> float:
    """Chernoff exponent (1 + delta) ln(1 + delta) - delta."""
    return (1.0 + delta) * math.log1p(delta) - delta


def chernoff_deviation_bound(M: float, n: int, nu: float, delta: float) -> float:
    """Union bound (n^nu / M) exp(-Delta_+(delta) M n^(1 - nu)) on any cell deviating."""
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if not M > 0:
        raise ValueError(f"M must be > 0, got {M}")
    mean = M * float(n) ** (1 - nu)
    return float(n) ** nu / M * math.exp(-delta_plus(delta) * mean)


@dataclass(frozen=True)
class CountDeviation:
    frequency: float
    upper_frequency: float
    lower_frequency: float
    trials: int
    bound: float
    cells: int

    @property
    def stderr(self) -> float:
        """Binomial standard error of a frequency equal to the bound."""
        p = min(self.bound, 1.0)
        return math.sqrt(p * (1 - p) / self.trials)

    @property
    def within_bound(self) -> bool:
        return self.frequency <= self.bound + 3 * self.stderr


def _count_trial(config: SimulationConfig, M: float, delta: float, trial: int) -> tuple[bool, bool, int]:
    nodes = generate_network(config, trial)
    s = math.sqrt(M)
    full = int(math.floor(nodes.side / s * (1 + _DIV_TOL)))
    if full < 1:
        raise ValueError(f"cell area M = {M} exceeds the network area")
    layout = partition_clusters(nodes, s, s)
    counts = layout.counts[:full, :full]
    mean = M * float(config.n) ** (1 - config.nu)
    upper = bool(np.any(counts >= (1 + delta) * mean))
    lower = bool(np.any(counts <= (1 - delta) * mean))
    return upper, lower, counts.size


def empirical_count_deviation(
    config: SimulationConfig, M: float, delta: float, trials: int, threads: int = 1
) -> CountDeviation:
    """Frequency with which some full square cell of area M leaves
    ((1 - delta) M n^(1-nu), (1 + delta) M n^(1-nu)).

    Only cells lying entirely inside the square are counted; boundary
    slivers would otherwise always look deficient.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    bound = chernoff_deviation_bound(M, config.n, config.nu, delta)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda t: _count_trial(config, M, delta, t), range(trials)))
    up = sum(u for u, _, _ in results)
    lo = sum(lw for _, lw, _ in results)
    any_ = sum(u or lw for u, lw, _ in results)
    return CountDeviation(
        frequency=any_ / trials,
        upper_frequency=up / trials,
        lower_frequency=lo / trials,
        trials=trials,
        bound=bound,
        cells=results[0][2],
    )
