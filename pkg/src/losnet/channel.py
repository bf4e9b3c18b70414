"""Line-of-sight channel coefficients exp(2 pi i r) / r and channel matrices."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .netgeom import NodeSet

MAGIC = b"LOSM1"


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray  # rows are receivers, columns transmitters
    rx_indices: np.ndarray
    tx_indices: np.ndarray
    distances: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def pair_distance(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _unit_phase(r: np.ndarray) -> np.ndarray:
    # Reduce r mod 1 before scaling so integer distances give phase exactly 0.
    frac = r - np.floor(r)
    return np.exp(2j * np.pi * frac)


def los_coefficient(r: float) -> complex:
    if not r > 0:
        raise ValueError(f"distance must be > 0, got {r}")
    return complex(_unit_phase(np.float64(r)) / r)


def los_entries(r: np.ndarray) -> np.ndarray:
    """Vectorised ``los_coefficient``; zero distances are rejected."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("channel distances must be strictly positive (coincident nodes?)")
    return _unit_phase(r) / r


def network_channel_matrix(nodes: NodeSet) -> ChannelMatrix:
    n = len(nodes)
    idx = np.arange(n)
    r = cdist(nodes.positions, nodes.positions)
    off = ~np.eye(n, dtype=bool)
    if np.any(r[off] <= 0):
        j, k = np.argwhere((r <= 0) & off)[0]
        raise ValueError(f"nodes {j} and {k} coincide")
    np.fill_diagonal(r, 1.0)
    h = _unit_phase(r)
    h /= r
    np.fill_diagonal(h, 0.0)
    np.fill_diagonal(r, 0.0)
    return ChannelMatrix(h, idx, idx, r)


def intercluster_matrix(nodes: NodeSet, rx, tx) -> ChannelMatrix:
    rx = np.asarray(rx, dtype=np.int64)
    tx = np.asarray(tx, dtype=np.int64)
    overlap = np.intersect1d(rx, tx)
    if overlap.size:
        raise ValueError(f"rx and tx index sets overlap at {overlap[:5].tolist()}")
    r = cdist(nodes.positions[rx], nodes.positions[tx])
    return ChannelMatrix(los_entries(r), rx, tx, r)


def write_matrix(path: str | Path, entries: np.ndarray) -> None:
    """Binary dump: ``LOSM1``, two little-endian uint64 dims, row-major (re, im) float64."""
    a = np.ascontiguousarray(entries, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", *a.shape))
        fh.write(a.view("<f8").tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a LOSM1 matrix file")
    rows, cols = struct.unpack_from("<QQ", data, len(MAGIC))
    body = np.frombuffer(data, dtype="<f8", offset=len(MAGIC) + 16)
    if body.size != 2 * rows * cols:
        raise ValueError("truncated LOSM1 matrix file")
    return body.view("<c16").reshape(rows, cols).astype(np.complex128)
