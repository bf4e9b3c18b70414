import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from losnet.channel import (
    intercluster_matrix,
    los_coefficient,
    los_entries,
    network_channel_matrix,
    pair_distance,
    read_matrix,
    write_matrix,
)
from losnet.config import SimulationConfig
from losnet.netgeom import NodeSet, generate_network
from losnet.spectral import spectral_norm

coords = st.floats(-1e3, 1e3)


def test_pair_distance_examples():
    assert pair_distance((0, 0), (3, 4)) == 5.0
    assert pair_distance((1.5, -2.0), (1.5, -2.0)) == 0.0


@given(st.tuples(coords, coords), st.tuples(coords, coords), st.tuples(coords, coords))
def test_triangle_inequality(a, b, c):
    assert pair_distance(a, c) <= pair_distance(a, b) + pair_distance(b, c) + 1e-9


@pytest.mark.parametrize("r,expected", [(1.0, 1.0), (0.5, -2.0), (5.0, 0.2)])
def test_los_coefficient_examples(r, expected):
    h = los_coefficient(r)
    assert h.real == pytest.approx(expected, abs=1e-15)
    assert h.imag == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("r", [0.0, -1.0])
def test_los_coefficient_rejects_nonpositive(r):
    with pytest.raises(ValueError):
        los_coefficient(r)


@given(st.floats(1e-3, 1e4))
def test_phase_distance_consistency(r):
    h = los_coefficient(r)
    assert abs(h) == pytest.approx(1 / r, rel=1e-12)
    expected = np.exp(2j * np.pi * math.fmod(r, 1.0))
    assert abs(h * r - expected) <= 1e-10


def test_single_node_matrix():
    H = network_channel_matrix(NodeSet.from_points([[0.3, 0.3]], side=1.0))
    assert H.shape == (1, 1) and H.entries[0, 0] == 0


def test_two_nodes_unit_distance():
    H = network_channel_matrix(NodeSet.from_points([[0.0, 0.0], [1.0, 0.0]], side=2.0)).entries
    assert np.allclose(H, [[0, 1], [1, 0]], atol=1e-15)
    assert spectral_norm(H).value == pytest.approx(1.0)


@given(st.integers(0, 2**31))
def test_matrix_magnitudes_and_diagonal(seed):
    nodes = generate_network(SimulationConfig(n=8, nu=1.0, seed=seed))
    H = network_channel_matrix(nodes)
    off = ~np.eye(8, dtype=bool)
    assert np.allclose(np.abs(H.entries[off]), 1 / H.distances[off], rtol=1e-13)
    assert np.all(H.entries[~off] == 0)
    assert np.allclose(np.abs(H.entries), np.abs(H.entries.T))


def test_coincident_nodes_rejected():
    with pytest.raises(ValueError, match="coincide"):
        network_channel_matrix(NodeSet.from_points([[1, 1], [1, 1]], side=2.0))


def test_intercluster_single_entry():
    nodes = NodeSet.from_points([[0, 0], [2, 0]], side=3.0)
    H = intercluster_matrix(nodes, [0], [1])
    assert H.entries[0, 0] == pytest.approx(0.5)


def test_intercluster_overlap_rejected():
    nodes = NodeSet.from_points([[0, 0], [2, 0], [1, 1]], side=3.0)
    with pytest.raises(ValueError):
        intercluster_matrix(nodes, [0, 1], [1, 2])


def test_intercluster_far_clusters():
    rng = np.random.default_rng(0)
    d = 40.0
    rx = rng.uniform(-0.5, 0.5, size=(30, 2))
    tx = rng.uniform(-0.5, 0.5, size=(30, 2)) + [d, 0]
    nodes = NodeSet.from_points(np.vstack([rx, tx]), side=50.0)
    H = intercluster_matrix(nodes, range(30), range(30, 60))
    mags = np.abs(H.entries)
    assert mags.min() >= 1 / (d + 2) and mags.max() <= 1 / (d - 2)
    assert mags.max() <= 1 / H.distances.min() + 1e-15


def test_los_entries_vectorised():
    r = np.array([[1.0, 0.5], [5.0, 2.25]])
    ref = np.array([[los_coefficient(x) for x in row] for row in r])
    assert np.allclose(los_entries(r), ref, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        los_entries(np.array([1.0, 0.0]))


def test_matrix_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    path = tmp_path / "h.losm"
    write_matrix(path, a)
    assert np.array_equal(read_matrix(path), a)
    path.write_bytes(b"junk")
    with pytest.raises(ValueError):
        read_matrix(path)
