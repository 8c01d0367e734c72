import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_graphs
from kgcn.aggregation import POOLINGS, AggregationError, aggregate, aggregate_backward
from kgcn.graph import build_graph, normalized_adjacency
from kgcn.partition import Partition, PartitionSet, partition_all
from oracles import aggregate_loops, central_difference, random_edges


def explicit_set(components_per_node):
    parts = tuple(Partition(v, tuple(tuple(c) for c in comps)) for v, comps in enumerate(components_per_node))
    n = len(parts)
    return PartitionSet("degree", len(parts[0].components), {"n": n, "m": 0, "checksum": 0}, parts)


def test_mean_of_two():
    ps = explicit_set([[[0], [1, 2]], [[1], []], [[2], []]])
    X = np.array([[7.0], [2.0], [4.0]])
    assert aggregate(X, ps, "mean")[0, 0, 1] == 3.0


@pytest.mark.parametrize("pooling", POOLINGS)
def test_empty_component_is_zero(pooling):
    ps = explicit_set([[[0], []], [[1], []]])
    X = np.array([[-3.0, -1.0], [-5.0, -2.0]])
    B = aggregate(X, ps, pooling)
    assert np.all(B[:, :, 1] == 0.0)
    assert B[:, :, 0].tolist() == X.tolist()


def test_max_and_sum_examples():
    ps = explicit_set([[[0], [1, 2, 3]], [[1], []], [[2], []], [[3], []]])
    X = np.array([[0.0], [1.0], [-2.0], [5.0]])
    assert aggregate(X, ps, "max")[0, 0, 1] == 5.0
    assert aggregate(X, ps, "sum")[0, 0, 1] == 4.0


def test_backward_examples():
    single = explicit_set([[[0]]])
    g = np.array([[[2.5]]])
    assert aggregate_backward(g, single, "mean", np.ones((1, 1))).tolist() == [[2.5]]
    ps = explicit_set([[[0], [1, 2]], [[1], []], [[2], []]])
    grad_B = np.zeros((3, 1, 2))
    grad_B[0, 0, 1] = 6.0
    assert aggregate_backward(grad_B, ps, "mean", np.zeros((3, 1))).ravel().tolist() == [0.0, 3.0, 3.0]


def test_max_backward_routes_ties_to_lowest_id():
    ps = explicit_set([[[0], [1, 2]], [[1], []], [[2], []]])
    X = np.array([[0.0], [4.0], [4.0]])
    grad_B = np.zeros((3, 1, 2))
    grad_B[0, 0, 1] = 1.0
    assert aggregate_backward(grad_B, ps, "max", X).ravel().tolist() == [0.0, 1.0, 0.0]


def test_shape_errors():
    ps = explicit_set([[[0]], [[1]]])
    with pytest.raises(AggregationError):
        aggregate(np.zeros((3, 2)), ps)
    with pytest.raises(AggregationError):
        aggregate(np.zeros((2, 2)), ps, "median")
    with pytest.raises(AggregationError):
        aggregate_backward(np.zeros((2, 2, 2)), ps, "mean", np.zeros((2, 2)))


def _random_case(seed, n, a, c, labeling="degree"):
    rng = np.random.default_rng(seed)
    g = build_graph(random_edges(rng, n, 0.35), n)
    return g, partition_all(g, labeling, c), rng.normal(size=(n, a))


@pytest.mark.parametrize("pooling", POOLINGS)
@pytest.mark.parametrize("seed", range(5))
def test_matches_loop_oracle(pooling, seed):
    g, ps, X = _random_case(seed, 9, 3, 3, "betweenness")
    parts = [p.components for p in ps.partitions]
    np.testing.assert_allclose(aggregate(X, ps, pooling), aggregate_loops(X, parts, pooling), rtol=0, atol=1e-13)


@pytest.mark.parametrize("pooling", ["mean", "sum"])
@given(graph=small_graphs(), c=st.integers(1, 4), alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 99))
def test_linearity(pooling, graph, c, alpha, beta, seed):
    n, edges = graph
    ps = partition_all(build_graph(edges, n), "degree", c)
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(2, n, 2))
    lhs = aggregate(alpha * X + beta * Y, ps, pooling)
    rhs = alpha * aggregate(X, ps, pooling) + beta * aggregate(Y, ps, pooling)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


@given(graph=small_graphs(), c=st.integers(1, 4), kappa=st.floats(-10, 10))
def test_constant_propagation(graph, c, kappa):
    n, edges = graph
    ps = partition_all(build_graph(edges, n), "closeness", c)
    B = aggregate(np.full((n, 2), kappa), ps, "mean")
    for v, p in enumerate(ps.partitions):
        for j, comp in enumerate(p.components):
            expected = kappa if comp else 0.0
            np.testing.assert_allclose(B[v, :, j], expected, rtol=1e-15, atol=0)
        if c > 1:
            assert np.all(B[v, :, 0] == kappa)


@pytest.mark.parametrize("pooling", POOLINGS)
@pytest.mark.parametrize("seed", range(4))
def test_backward_matches_finite_differences(pooling, seed):
    g, ps, X = _random_case(100 + seed, 10, 2, 3)
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(10, 2, 3))

    def scalar(x):
        return float((aggregate(x, ps, pooling) * W).sum())

    numeric = central_difference(scalar, X, 1e-5)
    analytic = aggregate_backward(W, ps, pooling, X)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    assert rel.max() <= 1e-5


@given(graph=small_graphs(), seed=st.integers(0, 99))
def test_c1_mean_is_row_normalized_averaging(graph, seed):
    n, edges = graph
    g = build_graph(edges, n)
    X = np.random.default_rng(seed).normal(size=(n, 3))
    B = aggregate(X, partition_all(g, "degree", 1), "mean")
    np.testing.assert_allclose(B[:, :, 0], normalized_adjacency(g, "rw").matrix @ X, rtol=0, atol=1e-14)
