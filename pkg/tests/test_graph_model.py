import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from crowdfluid import (
    ConnectivityError,
    ModelParams,
    check_routing_detailed_balance,
    complete_graph,
    cycle_graph,
    graph_from_edges,
    make_graph,
    path_graph,
    read_edge_list,
    routing_matrix,
    routing_stationary,
    service_rate,
)
from conftest import random_connected_graph


def left_eigenvector_stationary(Q):
    """Oracle: normalised left eigenvector of Q for eigenvalue 1."""
    vals, vecs = scipy.linalg.eig(Q.T)
    k = np.argmin(np.abs(vals - 1.0))
    v = np.real(vecs[:, k])
    return v / v.sum()


@pytest.mark.parametrize("I, degrees", [(3, [2, 2, 2]), (2, [1, 1]), (5, [4] * 5)])
def test_complete_graph_degrees(I, degrees):
    assert complete_graph(I).degrees.tolist() == degrees


def test_complete_graph_needs_two_squares():
    with pytest.raises(ValueError):
        complete_graph(1)


def test_routing_matrix_examples():
    np.testing.assert_array_equal(routing_matrix(complete_graph(3)),
                                  [[0, .5, .5], [.5, 0, .5], [.5, .5, 0]])
    np.testing.assert_array_equal(routing_matrix(complete_graph(2)), [[0, 1], [1, 0]])
    Q = routing_matrix(path_graph(3))
    assert Q[1, 0] == Q[1, 2] == 0.5
    assert Q[0, 1] == Q[2, 1] == 1.0
    assert Q[0, 2] == Q[2, 0] == 0.0


def test_routing_stationary_examples():
    np.testing.assert_allclose(routing_stationary(complete_graph(3)), [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(routing_stationary(complete_graph(2)), [0.5, 0.5], rtol=0, atol=1e-15)
    theta = routing_stationary(path_graph(3))
    np.testing.assert_allclose(theta, [0.25, 0.5, 0.25], rtol=0, atol=1e-15)
    np.testing.assert_allclose(theta, left_eigenvector_stationary(routing_matrix(path_graph(3))),
                               atol=1e-12)


def test_disconnected_graph_rejected():
    with pytest.raises(ConnectivityError):
        graph_from_edges([(0, 1), (2, 3)], 4)


def test_invalid_adjacency_rejected():
    from crowdfluid import CityGraph
    with pytest.raises(ValueError, match="symmetric"):
        CityGraph(np.array([[0, 1], [0, 0]], dtype=bool))
    with pytest.raises(ValueError, match="self-loop"):
        graph_from_edges([(0, 0), (0, 1)])


def test_routing_detailed_balance_examples():
    g = complete_graph(3)
    assert check_routing_detailed_balance(routing_matrix(g), routing_stationary(g)) <= 1e-15
    violation = check_routing_detailed_balance(routing_matrix(complete_graph(2)), [0.9, 0.1])
    assert violation == pytest.approx(0.8, abs=1e-15)


def test_service_rate_examples():
    assert service_rate(1, 0.37) == 1.0
    assert service_rate(3, 0.1) == pytest.approx(0.81, rel=1e-15)
    assert service_rate(2, 0.0) == 1.0
    with pytest.raises(ValueError):
        service_rate(0, 0.1)
    with pytest.raises(ValueError):
        service_rate(2, 1.0)


@given(c=st.floats(0, 0.999), n=st.integers(1, 200))
def test_service_rate_nonincreasing(c, n):
    assert service_rate(n + 1, c) <= service_rate(n, c) <= 1.0


@settings(max_examples=60, deadline=None)
@given(I=st.integers(2, 20), seed=st.integers(0, 2**32 - 1), p=st.floats(0, 1))
def test_routing_properties_on_random_graphs(I, seed, p):
    g = random_connected_graph(np.random.default_rng(seed), I, p)
    Q = routing_matrix(g)
    theta = routing_stationary(g)
    assert np.max(np.abs(Q.sum(axis=1) - 1.0)) <= 1e-12
    assert np.all(np.diag(Q) == 0)
    assert np.all((Q > 0) == g.adjacency)
    assert abs(theta.sum() - 1.0) <= 1e-12 and np.all(theta > 0)
    assert np.max(np.abs(theta @ Q - theta)) <= 1e-12
    assert check_routing_detailed_balance(Q, theta) <= 1e-14


def test_edge_list_roundtrip(tmp_path):
    path = tmp_path / "city.txt"
    path.write_text("# a path with a chord\n0 1\n1 2\n\n2 3\n0 2\n")
    g = read_edge_list(path)
    assert g.num_squares == 4
    assert g.edges() == [(0, 1), (0, 2), (1, 2), (2, 3)]
    assert make_graph("edge_list", path=path) == g
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    with pytest.raises(ValueError):
        read_edge_list(bad)


def test_make_graph_by_name():
    assert make_graph("complete", 4) == complete_graph(4)
    assert make_graph("cycle", 5).is_regular
    assert not make_graph("path", 4).is_regular
    with pytest.raises(ValueError):
        make_graph("star", 4)


def test_cycle_graph_degrees():
    assert cycle_graph(6).degrees.tolist() == [2] * 6


def test_model_params():
    p = ModelParams(50, 2.0)
    assert p.chat_probability == 2.0 / 50
    with pytest.raises(ValueError):
        ModelParams(2, 2.0)
    with pytest.raises(ValueError):
        ModelParams(0, 0.0)
    with pytest.raises(ValueError):
        ModelParams(5, -1.0)
