"""Structural labelings of small subgraphs.

A labeling assigns each local vertex a real score; scores induce a ranking in
which a higher score means a lower (earlier) rank. The canonical labeling
instead yields a ranking directly from a canonical vertex order.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .graph import Graph, Subgraph

LABELING_NAMES = ("degree", "wl", "closeness", "betweenness", "canonical")
SCORE_LABELINGS = ("degree", "wl", "closeness", "betweenness")
CANONICAL_CAP = 12


class LabelingError(ValueError):
    pass


def _graph(sg) -> Graph:
    return sg.graph if isinstance(sg, Subgraph) else sg


def degree_labeling(sg: Subgraph) -> np.ndarray:
    return _graph(sg).degrees.astype(np.float64)


def wl_colors(sg: Subgraph, iterations: int) -> list[np.ndarray]:
    """Color history of 1-WL refinement; entry 0 is the degree coloring.

    Stops early once a round splits no class, so the last entry is stable
    whenever fewer than ``iterations`` rounds were run.
    """
    if iterations < 1:
        raise LabelingError("wl iterations must be >= 1")
    g = _graph(sg)
    colors = g.degrees.astype(np.int64)
    history = [colors]
    for _ in range(iterations):
        sigs = [
            (int(colors[v]), tuple(sorted(int(colors[u]) for u in g.neighbors_of(v))))
            for v in range(g.num_nodes)
        ]
        index = {s: i for i, s in enumerate(sorted(set(sigs)))}
        new = np.array([index[s] for s in sigs], dtype=np.int64)
        history.append(new)
        if len(index) == len(np.unique(colors)):
            break
        colors = new
    return history


def wl_labeling(sg: Subgraph, iterations: int = 3) -> np.ndarray:
    return wl_colors(sg, iterations)[-1].astype(np.float64)


def _bfs_distances(g: Graph, s: int) -> np.ndarray:
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[s] = 0
    queue = deque([s])
    while queue:
        v = queue.popleft()
        for u in g.neighbors_of(v):
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def closeness_centrality(sg: Subgraph) -> np.ndarray:
    """(reachable - 1) / sum of distances to reachable vertices; 0 for isolated vertices."""
    g = _graph(sg)
    out = np.zeros(g.num_nodes)
    for v in range(g.num_nodes):
        dist = _bfs_distances(g, v)
        reach = dist[dist >= 0]
        if reach.size > 1:
            out[v] = (reach.size - 1) / reach.sum()
    return out


def betweenness_centrality(sg: Subgraph) -> np.ndarray:
    """Unnormalized Brandes betweenness, each unordered pair counted once."""
    g = _graph(sg)
    n = g.num_nodes
    bc = np.zeros(n)
    for s in range(n):
        stack = []
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in g.neighbors_of(v):
                w = int(w)
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc / 2.0


def ranking_from_scores(scores) -> np.ndarray:
    """Competition ranking: rank = 1 + number of strictly larger scores.

    Tied scores share a rank, so no order is imposed inside a tie.
    """
    scores = np.asarray(scores, dtype=np.float64)
    sorted_desc = np.sort(scores)[::-1]
    # count of entries strictly greater than each score
    greater = len(scores) - np.searchsorted(sorted_desc[::-1], scores, side="right")
    return (greater + 1).astype(np.int64)


def canonical_order(sg: Subgraph, cap: int = CANONICAL_CAP) -> np.ndarray:
    """Vertex order maximizing the row-major adjacency bit string.

    Among orders with the maximal string, the lexicographically smallest
    sequence of local indices wins. The search individualizes one vertex per
    position and refines the remaining ordered cells by adjacency to it; only
    candidates whose adjacency row is maximal at that position are expanded,
    and of two twins (same neighbors apart from each other) only the smaller
    index is.
    """
    g = _graph(sg)
    n = g.num_nodes
    if n > cap:
        raise LabelingError(f"canonical labeling supports at most {cap} vertices, got {n}")
    adj = np.zeros((n, n), dtype=bool)
    for v in range(n):
        adj[v, g.neighbors_of(v)] = True
    nbr_sets = [frozenset(np.flatnonzero(adj[v]).tolist()) for v in range(n)]

    def twins(u: int, v: int) -> bool:
        return nbr_sets[u] - {v} == nbr_sets[v] - {u}

    best_rows: list[tuple] | None = None
    best_order: list[int] | None = None

    def expand(order, rows, cells):
        nonlocal best_rows, best_order
        if not cells:
            if best_rows is None or rows > best_rows:
                best_rows, best_order = list(rows), list(order)
            return
        first = cells[0]
        options = []
        for x in first:
            if any(twins(u, x) for u in first if u < x):
                continue
            rest = [[u for u in first if u != x]] + cells[1:]
            new_cells, tail = [], []
            for cell in rest:
                hit = [u for u in cell if adj[x, u]]
                miss = [u for u in cell if not adj[x, u]]
                tail += [1] * len(hit) + [0] * len(miss)
                new_cells += [c for c in (hit, miss) if c]
            row = tuple(int(adj[x, p]) for p in order) + (0,) + tuple(tail)
            options.append((row, x, new_cells))
        top = max(r for r, _, _ in options)
        depth = len(order) + 1
        for row, x, new_cells in options:
            if row != top:
                continue
            prefix = rows + [row]
            # rows are final once emitted, so a smaller prefix cannot recover
            if best_rows is not None and prefix < best_rows[:depth]:
                continue
            expand(order + [x], prefix, new_cells)

    expand([], [], [list(range(n))])
    return np.array(best_order, dtype=np.int64)


def canonical_ranking(sg: Subgraph, cap: int = CANONICAL_CAP) -> np.ndarray:
    """Rank (1-based position) of each local vertex in the canonical order."""
    order = canonical_order(sg, cap)
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def label_scores(name: str, sg: Subgraph, wl_iterations: int | None = None) -> np.ndarray:
    """Scores for a score-based labeling selected by name."""
    if name == "degree":
        return degree_labeling(sg)
    if name == "wl":
        return wl_labeling(sg, wl_iterations or max(1, _graph(sg).num_nodes))
    if name == "closeness":
        return closeness_centrality(sg)
    if name == "betweenness":
        return betweenness_centrality(sg)
    if name == "canonical":
        raise LabelingError("canonical labeling yields a ranking, not scores")
    raise LabelingError(f"unknown labeling {name!r}; expected one of {', '.join(LABELING_NAMES)}")
