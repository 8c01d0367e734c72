"""Per-node structural partitions of closed neighborhoods, plus their JSON cache."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import labeling as lab
from .graph import Graph, closed_neighborhood, induced_subgraph


class PartitionError(ValueError):
    pass


class PartitionCacheError(ValueError):
    pass


def _optimal_cuts(sorted_x: np.ndarray, k: int) -> list[int]:
    """Cut positions of the minimum within-cluster squared error split of sorted data.

    Cuts are only placed between distinct values; among equal-cost splits the
    earliest cuts win. Fewer than ``k - 1`` cuts come back when there are fewer
    than ``k`` distinct values.
    """
    n = len(sorted_x)
    allowed = [i for i in range(1, n) if sorted_x[i - 1] < sorted_x[i]]
    k = min(k, len(allowed) + 1)
    if k == 1:
        return []
    with np.errstate(under="ignore"):
        pre = np.concatenate([[0.0], np.cumsum(sorted_x)])
        pre2 = np.concatenate([[0.0], np.cumsum(sorted_x**2)])

    def sse(i, j):
        m = j - i
        s = pre[j] - pre[i]
        with np.errstate(under="ignore"):
            return max(pre2[j] - pre2[i] - s * s / m, 0.0)

    bounds = [0] + allowed + [n]
    nb = len(bounds)
    # cost[q][b]: best cost of splitting sorted_x[:bounds[b]] into q+1 groups
    cost = np.full((k, nb), np.inf)
    back = np.zeros((k, nb), dtype=np.int64)
    for b in range(1, nb):
        cost[0, b] = sse(0, bounds[b])
    for q in range(1, k):
        for b in range(q + 1, nb):
            best, arg = np.inf, -1
            for a in range(q, b):
                val = cost[q - 1, a] + sse(bounds[a], bounds[b])
                if val < best:
                    best, arg = val, a
            cost[q, b], back[q, b] = best, arg
    cuts, b = [], nb - 1
    for q in range(k - 1, 0, -1):
        b = int(back[q, b])
        cuts.append(bounds[b])
    return sorted(cuts)


def kmeans_1d(scores, k: int) -> np.ndarray:
    """Deterministic 1-D k-means; cluster 0 has the largest center.

    Centers start at the optimal contiguous split of the sorted scores, then
    Lloyd iterations (assignment ties to the lower center index, empty clusters
    keep their center) run to an exact fixed point. Clusters are relabeled by
    descending center; empty clusters come last.
    """
    x = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise PartitionError("kmeans_1d needs k >= 1")
    if x.ndim != 1 or x.size == 0:
        raise PartitionError("kmeans_1d needs a nonempty 1-D score array")
    sx = np.sort(x)
    bounds = [0] + _optimal_cuts(sx, k) + [len(sx)]
    centers = np.array([sx[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    # surplus clusters start empty, far from every point
    centers = np.concatenate([centers, np.full(k - len(centers), np.nan)])

    assign = None
    while True:
        dist = np.abs(x[:, None] - centers[None, :])
        dist[:, np.isnan(centers)] = np.inf
        new = np.argmin(dist, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if members.size:
                centers[j] = members.mean()

    occupied = np.bincount(assign, minlength=k) > 0
    order = sorted(range(k), key=lambda j: (not occupied[j], -centers[j] if occupied[j] else 0.0))
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    return relabel[assign]


@dataclass(frozen=True)
class Partition:
    center: int
    components: tuple[tuple[int, ...], ...]

    @property
    def c(self) -> int:
        return len(self.components)


def _interval_sizes(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + 1] * r + [q] * (parts - r)


def structural_partition(
    g: Graph,
    v: int,
    labeling: str,
    c: int,
    cap: int = lab.CANONICAL_CAP,
) -> Partition:
    """Split ``{v} ∪ N(v)`` into ``c`` ordered components with ``{v}`` first."""
    if c < 1:
        raise PartitionError("c must be >= 1")
    if labeling not in lab.LABELING_NAMES:
        raise PartitionError(f"unknown labeling {labeling!r}; expected one of {', '.join(lab.LABELING_NAMES)}")
    nbhd = closed_neighborhood(g, v)
    if c == 1:
        return Partition(int(v), (tuple(int(u) for u in nbhd),))
    sg = induced_subgraph(g, nbhd)
    local_v = int(np.searchsorted(sg.local_to_global, v))
    others = np.delete(np.arange(sg.local_count), local_v)
    comps: list[list[int]] = [[] for _ in range(c - 1)]

    if others.size and labeling == "canonical":
        ranks = lab.canonical_ranking(sg, cap)
        ordered = others[np.argsort(ranks[others], kind="stable")]
        if c - 1 >= ordered.size:
            for j, u in enumerate(ordered):
                comps[j].append(int(sg.local_to_global[u]))
        else:
            start = 0
            for j, size in enumerate(_interval_sizes(ordered.size, c - 1)):
                comps[j] = [int(sg.local_to_global[u]) for u in ordered[start : start + size]]
                start += size
    elif others.size:
        scores = lab.label_scores(labeling, sg)
        assign = kmeans_1d(scores[others], c - 1)
        for u, j in zip(others, assign):
            comps[j].append(int(sg.local_to_global[u]))

    return Partition(int(v), ((int(v),),) + tuple(tuple(sorted(cp)) for cp in comps))


@dataclass(frozen=True)
class AggregationPlan:
    """Flattened memberships: slot ``v * c + j`` owns ``members[offsets[s]:offsets[s+1]]``."""

    num_nodes: int
    c: int
    owners: np.ndarray
    members: np.ndarray
    offsets: np.ndarray
    sizes: np.ndarray

    def _slot_matrix(self, weights: np.ndarray) -> sp.csr_matrix:
        shape = (self.num_nodes * self.c, self.num_nodes)
        mat = sp.csr_matrix((weights, (self.owners, self.members)), shape=shape)
        mat.sort_indices()
        return mat

    @cached_property
    def sum_matrix(self) -> sp.csr_matrix:
        """(n*c, n) 0/1 membership matrix."""
        return self._slot_matrix(np.ones(len(self.members)))

    @cached_property
    def mean_matrix(self) -> sp.csr_matrix:
        return self._slot_matrix(1.0 / self.sizes[self.owners])


@dataclass(frozen=True)
class PartitionSet:
    labeling: str
    c: int
    fingerprint: dict
    partitions: tuple[Partition, ...]

    @property
    def num_nodes(self) -> int:
        return len(self.partitions)

    @cached_property
    def plan(self) -> AggregationPlan:
        owners, members, sizes = [], [], []
        for p in self.partitions:
            for j, comp in enumerate(p.components):
                owners.extend([p.center * self.c + j] * len(comp))
                members.extend(comp)
                sizes.append(len(comp))
        sizes = np.array(sizes, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        return AggregationPlan(
            self.num_nodes,
            self.c,
            np.array(owners, dtype=np.int64),
            np.array(members, dtype=np.int64),
            offsets,
            sizes,
        )

    def matches(self, g: Graph) -> bool:
        return self.fingerprint == g.fingerprint()

    def check_graph(self, g: Graph) -> None:
        fp = g.fingerprint()
        if self.fingerprint != fp:
            raise PartitionCacheError(f"partition fingerprint {self.fingerprint} does not match graph {fp}")


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("KGCN_THREADS", "1") or 1)
    return max(1, int(threads))


def partition_all(g: Graph, labeling: str, c: int, threads: int | None = None) -> PartitionSet:
    """One partition per node; the result does not depend on ``threads``."""

    def one(v: int) -> Partition:
        try:
            return structural_partition(g, v, labeling, c)
        except (PartitionError, lab.LabelingError) as exc:
            raise PartitionError(f"node {v}: {exc}") from exc

    threads = resolve_threads(threads)
    if threads == 1:
        parts = [one(v) for v in range(g.num_nodes)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(g.num_nodes)))
    return PartitionSet(labeling, int(c), g.fingerprint(), tuple(parts))


def partition_set_to_dict(ps: PartitionSet) -> dict:
    return {
        "labeling": ps.labeling,
        "c": ps.c,
        "fingerprint": dict(ps.fingerprint),
        "partitions": [[list(comp) for comp in p.components] for p in ps.partitions],
    }


def partition_set_from_dict(doc: dict) -> PartitionSet:
    try:
        labeling, c, fp = doc["labeling"], int(doc["c"]), doc["fingerprint"]
        fingerprint = {"n": int(fp["n"]), "m": int(fp["m"]), "checksum": int(fp["checksum"])}
        raw = doc["partitions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise PartitionCacheError(f"malformed partition cache: {exc!r}") from None
    if len(raw) != fingerprint["n"]:
        raise PartitionCacheError(f"cache holds {len(raw)} partitions for {fingerprint['n']} nodes")
    parts = []
    for v, comps in enumerate(raw):
        if len(comps) != c or list(comps[0]) != [v]:
            raise PartitionCacheError(f"partition of node {v} must have {c} components starting with [{v}]")
        parts.append(Partition(v, tuple(tuple(int(u) for u in comp) for comp in comps)))
    return PartitionSet(labeling, c, fingerprint, tuple(parts))


def save_partitions(ps: PartitionSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(partition_set_to_dict(ps), fh, separators=(",", ":"))
        fh.write("\n")


def load_partitions(path, graph: Graph | None = None) -> PartitionSet:
    """Read a partition cache; when ``graph`` is given its fingerprint must match."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PartitionCacheError(f"{path}: parse error at offset {exc.pos}: {exc.msg}") from None
    ps = partition_set_from_dict(doc)
    if graph is not None:
        ps.check_graph(graph)
    return ps
