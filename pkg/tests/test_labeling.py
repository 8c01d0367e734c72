import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import graphs_with_permutation, small_graphs
from kgcn.graph import build_graph, closed_neighborhood, grid_graph, induced_subgraph
from kgcn.labeling import (
    LabelingError,
    betweenness_centrality,
    canonical_order,
    canonical_ranking,
    closeness_centrality,
    degree_labeling,
    label_scores,
    ranking_from_scores,
    wl_colors,
    wl_labeling,
)
from oracles import brute_betweenness, dense_adjacency, random_edges

PATH3 = build_graph([(0, 1), (1, 2)], 3)
STAR3 = build_graph([(0, 1), (0, 2), (0, 3)], 4)
K3 = build_graph([(0, 1), (1, 2), (0, 2)], 3)
C4 = build_graph([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
PATH4 = build_graph([(0, 1), (1, 2), (2, 3)], 4)


def king_subgraph():
    g = grid_graph(3, 3, "moore")
    return induced_subgraph(g, closed_neighborhood(g, 4))


def as_sg(g):
    return induced_subgraph(g, range(g.num_nodes))


def test_degree_labeling():
    assert degree_labeling(as_sg(PATH3)).tolist() == [1, 2, 1]
    assert degree_labeling(as_sg(STAR3)).tolist() == [3, 1, 1, 1]
    king = degree_labeling(king_subgraph())
    assert king.reshape(3, 3).tolist() == [[3, 5, 3], [5, 8, 5], [3, 5, 3]]


def test_wl_examples():
    star = wl_labeling(as_sg(STAR3), 1)
    assert star[0] != star[1] and len(set(star[1:])) == 1
    for it in (1, 2, 5):
        assert len(set(wl_labeling(as_sg(C4), it))) == 1
    history = wl_colors(as_sg(PATH4), 10)
    final = history[-1]
    assert final[0] == final[3] and final[1] == final[2] and final[0] != final[1]
    # degrees already separate ends from middle, so one round confirms no split
    assert len(history) == 2


def test_wl_rejects_zero_iterations():
    with pytest.raises(LabelingError):
        wl_labeling(as_sg(PATH3), 0)


@given(small_graphs(min_nodes=1, max_nodes=8), st.integers(1, 6))
def test_wl_stable_once_no_split(graph, extra):
    n, edges = graph
    sg = as_sg(build_graph(edges, n))
    history = wl_colors(sg, n + extra)
    assert np.array_equal(history[-1], history[-2]) or len(history) == 2
    longer = wl_colors(sg, n + extra + 5)
    assert np.array_equal(longer[-1], history[-1])


def test_closeness_examples():
    np.testing.assert_allclose(closeness_centrality(as_sg(PATH3)), [2 / 3, 1.0, 2 / 3], rtol=0, atol=1e-15)
    assert closeness_centrality(as_sg(K3)).tolist() == [1.0, 1.0, 1.0]
    assert closeness_centrality(as_sg(build_graph([], 2))).tolist() == [0.0, 0.0]


def test_betweenness_examples():
    assert betweenness_centrality(as_sg(PATH3)).tolist() == [0.0, 1.0, 0.0]
    assert betweenness_centrality(as_sg(K3)).tolist() == [0.0, 0.0, 0.0]
    assert betweenness_centrality(as_sg(STAR3)).tolist() == [3.0, 0.0, 0.0, 0.0]


def betweenness_corpus(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(count):
        n = int(rng.integers(1, 8))
        corpus.append((n, random_edges(rng, n, float(rng.uniform(0.2, 0.8)))))
    return corpus


@pytest.mark.parametrize("n,edges", betweenness_corpus())
def test_betweenness_matches_path_enumeration(n, edges):
    got = betweenness_centrality(as_sg(build_graph(edges, n)))
    np.testing.assert_allclose(got, brute_betweenness(dense_adjacency(n, edges)), rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", ["degree", "wl", "closeness", "betweenness"])
@given(graphs_with_permutation(max_nodes=8))
def test_scores_are_isomorphism_invariant(name, gp):
    n, edges, perm = gp
    g = build_graph(edges, n)
    h = build_graph([(perm[u], perm[v]) for u, v in edges], n)
    s_g = label_scores(name, as_sg(g))
    s_h = label_scores(name, as_sg(h))
    np.testing.assert_allclose(s_h[perm], s_g, rtol=0, atol=1e-12)


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=10))
def test_ranking_law(raw):
    scores = np.array(raw, dtype=float)
    ranks = ranking_from_scores(scores)
    assert ranks.min() >= 1 and ranks.max() <= len(scores)
    for u, v in itertools.product(range(len(scores)), repeat=2):
        if scores[u] > scores[v]:
            assert ranks[u] < ranks[v]
        if scores[u] == scores[v]:
            assert ranks[u] == ranks[v]


def _brute_canonical(g):
    n = g.num_nodes
    A = dense_adjacency(n, g.edges().tolist()).astype(int)
    best = None
    for p in itertools.permutations(range(n)):
        key = tuple(A[np.ix_(p, p)].ravel())
        if best is None or key > best[0]:
            best = (key, p)
    return list(best[1])


@given(small_graphs(min_nodes=1, max_nodes=7))
def test_canonical_order_matches_exhaustive_search(graph):
    n, edges = graph
    g = build_graph(edges, n)
    assert canonical_order(as_sg(g)).tolist() == _brute_canonical(g)


def test_canonical_deterministic_and_degree_consistent():
    sg = as_sg(PATH3)
    assert canonical_ranking(sg).tolist() == canonical_ranking(sg).tolist()
    for perm in itertools.permutations(range(3)):
        h = build_graph([(perm[u], perm[v]) for u, v in [(0, 1), (1, 2)]], 3)
        ranks = canonical_ranking(as_sg(h))
        assert ranks[perm[1]] == 1  # the degree-2 vertex heads the order


@given(graphs_with_permutation(max_nodes=7))
def test_canonical_form_is_isomorphism_invariant(gp):
    n, edges, perm = gp
    g = build_graph(edges, n)
    h = build_graph([(perm[u], perm[v]) for u, v in edges], n)

    def form(graph):
        order = canonical_order(as_sg(graph))
        A = dense_adjacency(n, graph.edges().tolist())
        return A[np.ix_(order, order)]

    assert np.array_equal(form(g), form(h))


def test_canonical_cap():
    big = build_graph([(i, i + 1) for i in range(12)], 13)
    with pytest.raises(LabelingError, match="at most 12"):
        canonical_ranking(as_sg(big))
    # twin pruning keeps the complete graph at the cap cheap
    k12 = build_graph(list(itertools.combinations(range(12), 2)), 12)
    assert canonical_order(as_sg(k12)).tolist() == list(range(12))


def test_canonical_identical_on_interior_moore_neighborhoods():
    g = grid_graph(6, 6, "moore")
    patterns = set()
    for r in range(1, 5):
        for c in range(1, 5):
            v = r * 6 + c
            sg = induced_subgraph(g, closed_neighborhood(g, v))
            offsets = [(u // 6 - r, u % 6 - c) for u in sg.local_to_global]
            ranks = canonical_ranking(sg)
            patterns.add(tuple(sorted(zip(offsets, ranks.tolist()))))
    assert len(patterns) == 1


def test_label_scores_rejects_unknown_name():
    with pytest.raises(LabelingError):
        label_scores("pagerank", as_sg(PATH3))
    with pytest.raises(LabelingError):
        label_scores("canonical", as_sg(PATH3))
