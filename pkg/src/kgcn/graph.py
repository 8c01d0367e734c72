"""Undirected graphs in compressed sparse row form, grids, normalized adjacency and dataset files."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

CONNECTIVITIES = ("von_neumann", "moore")
ADJACENCY_VARIANTS = ("sym", "rw")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class GraphError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    ``neighbors[neighbor_offsets[v]:neighbor_offsets[v + 1]]`` is the strictly
    increasing neighbor list of ``v``. Self-loops are never stored.
    """

    num_nodes: int
    neighbor_offsets: np.ndarray
    neighbors: np.ndarray
    num_edges: int

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.neighbor_offsets[v] : self.neighbor_offsets[v + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.neighbor_offsets)

    def degree(self, v: int) -> int:
        return int(self.neighbor_offsets[v + 1] - self.neighbor_offsets[v])

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v, sorted lexicographically."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.neighbors
        return np.stack([src[keep], self.neighbors[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors_of(u)
        i = np.searchsorted(nbrs, v)
        return bool(i < len(nbrs) and nbrs[i] == v)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.neighbors))
        return sp.csr_matrix(
            (data, self.neighbors.copy(), self.neighbor_offsets.copy()),
            shape=(self.num_nodes, self.num_nodes),
        )

    def fingerprint(self) -> dict:
        """``{n, m, checksum}`` with checksum = 64-bit FNV-1a over the sorted edge list.

        Each endpoint is fed as 8 little-endian bytes, ``u`` before ``v``.
        """
        return dict(self._fingerprint)

    @cached_property
    def _fingerprint(self) -> dict:
        h = _FNV_OFFSET
        payload = self.edges().astype("<u8").tobytes()
        for byte in payload:
            h = ((h ^ byte) * _FNV_PRIME) & _MASK64
        return {"n": self.num_nodes, "m": self.num_edges, "checksum": h}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.neighbor_offsets, other.neighbor_offsets)
            and np.array_equal(self.neighbors, other.neighbors)
        )

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


@dataclass(frozen=True)
class Subgraph:
    """Induced subgraph; local vertex ``i`` is parent vertex ``local_to_global[i]``."""

    local_to_global: np.ndarray
    graph: Graph

    @property
    def local_count(self) -> int:
        return self.graph.num_nodes


def build_graph(edge_list: Iterable[Sequence[int]], num_nodes: int) -> Graph:
    """Symmetrize, deduplicate and drop self-loops from ``edge_list``."""
    if num_nodes <= 0:
        raise GraphError("num_nodes must be positive")
    edges = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
        raise GraphError(f"edge ({bad[0]}, {bad[1]}) out of range for {num_nodes} nodes")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    # unique on the encoded pair also sorts by (src, dst)
    codes = np.unique(both[:, 0] * num_nodes + both[:, 1])
    src, dst = np.divmod(codes, num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=offsets[1:])
    return Graph(
        num_nodes=int(num_nodes),
        neighbor_offsets=_frozen(offsets),
        neighbors=_frozen(dst.astype(np.int64)),
        num_edges=len(codes) // 2,
    )


def _check_node(g: Graph, v: int) -> None:
    if not 0 <= v < g.num_nodes:
        raise GraphError(f"node {v} out of range for {g.num_nodes} nodes")


def closed_neighborhood(g: Graph, v: int) -> np.ndarray:
    """Sorted array of ``{v} ∪ N(v)``."""
    _check_node(g, v)
    nbrs = g.neighbors_of(v)
    i = np.searchsorted(nbrs, v)
    return np.concatenate([nbrs[:i], [v], nbrs[i:]]).astype(np.int64)


def induced_subgraph(g: Graph, nodes: Iterable[int]) -> Subgraph:
    local = np.unique(np.asarray(list(nodes), dtype=np.int64))
    if local.size == 0:
        raise GraphError("induced_subgraph needs at least one node")
    for v in (local[0], local[-1]):
        _check_node(g, int(v))
    edges = []
    for i, v in enumerate(local):
        nbrs = g.neighbors_of(int(v))
        hits = np.searchsorted(local, nbrs)
        ok = (hits < len(local)) & (local[np.minimum(hits, len(local) - 1)] == nbrs)
        for j in hits[ok]:
            if j > i:
                edges.append((i, int(j)))
    return Subgraph(local_to_global=_frozen(local), graph=build_graph(edges, len(local)))


def grid_graph(height: int, width: int, connectivity: str = "moore") -> Graph:
    """Grid with row-major node ids ``row * width + col``."""
    if height < 1 or width < 1:
        raise GraphError(f"grid dimensions must be >= 1, got {height}x{width}")
    if connectivity not in CONNECTIVITIES:
        raise GraphError(f"unknown connectivity {connectivity!r}")
    steps = [(0, 1), (1, 0)]
    if connectivity == "moore":
        steps += [(1, 1), (1, -1)]
    edges = []
    for r in range(height):
        for c in range(width):
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < height and 0 <= cc < width:
                    edges.append((r * width + c, rr * width + cc))
    return build_graph(edges, height * width)


@dataclass(frozen=True)
class NormalizedAdjacency:
    variant: str
    matrix: sp.csr_matrix

    def __matmul__(self, other):
        return self.matrix @ other


def normalized_adjacency(g: Graph, variant: str = "sym") -> NormalizedAdjacency:
    """``D̃^{-1/2}(A+I)D̃^{-1/2}`` for ``sym``, ``D̃^{-1}(A+I)`` for ``rw``."""
    if variant not in ADJACENCY_VARIANTS:
        raise GraphError(f"unknown adjacency variant {variant!r}")
    a_tilde = (g.adjacency() + sp.identity(g.num_nodes, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    if variant == "sym":
        d = sp.diags(1.0 / np.sqrt(deg))
        mat = d @ a_tilde @ d
    else:
        mat = sp.diags(1.0 / deg) @ a_tilde
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return NormalizedAdjacency(variant=variant, matrix=mat)


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"feature matrix has shape {self.features.shape}, expected ({n}, a)")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        if self.labels.shape != (n,):
            raise DatasetError(f"{len(self.labels)} labels for {n} nodes")
        masks = {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}
        for name, mask in masks.items():
            if mask.shape != (n,) or mask.dtype != bool:
                raise DatasetError(f"{name} mask must be a boolean array of length {n}")
            unlabeled = np.flatnonzero(mask & (self.labels < 0))
            if unlabeled.size:
                raise DatasetError(f"node {unlabeled[0]} is in the {name} mask but unlabeled")
        overlap = (
            self.train_mask.astype(int) + self.val_mask.astype(int) + self.test_mask.astype(int)
        ) > 1
        if overlap.any():
            raise DatasetError(f"masks overlap at node {np.flatnonzero(overlap)[0]}")

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0

    def mask(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[name]
        except KeyError:
            raise DatasetError(f"unknown mask {name!r}") from None


# -- file formats -------------------------------------------------------------

MASK_CODES = {"t": "train", "v": "val", "s": "test", "-": None}
DATA_FILES = {
    "edges": "edges.tsv",
    "features": "features.tsv",
    "labels": "labels.tsv",
    "masks": "masks.tsv",
}


def _data_lines(path: Path, skip_comments: bool):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if skip_comments and (not line.strip() or line.lstrip().startswith("#")):
                continue
            yield lineno, line


def read_edges(path) -> tuple[list[tuple[int, int]], int | None]:
    """Parse ``edges.tsv``. Returns the edges and an optional ``# num_nodes=N`` header value."""
    path = Path(path)
    edges, declared = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("num_nodes="):
                    declared = int(body.split("=", 1)[1])
                continue
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}") from None
            edges.append((u, v))
    return edges, declared


def read_graph(path, num_nodes: int | None = None) -> Graph:
    edges, declared = read_edges(path)
    if num_nodes is None:
        num_nodes = declared
    if num_nodes is None:
        num_nodes = max((max(e) for e in edges), default=-1) + 1
    return build_graph(edges, num_nodes)


def write_edges(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# num_nodes={g.num_nodes}\n")
        for u, v in g.edges():
            fh.write(f"{u}\t{v}\n")


def read_features(path) -> np.ndarray:
    rows = []
    for lineno, line in _data_lines(Path(path), skip_comments=False):
        try:
            rows.append([float(x) for x in line.split("\t")])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: malformed feature row {line!r}") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise DatasetError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def read_labels(path) -> np.ndarray:
    labels = []
    for lineno, line in _data_lines(Path(path), skip_comments=False):
        try:
            labels.append(int(line.strip()))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: malformed label {line!r}") from None
    return np.array(labels, dtype=np.int64)


def read_masks(path) -> dict[str, np.ndarray]:
    codes = []
    for lineno, line in _data_lines(Path(path), skip_comments=False):
        code = line.strip()
        if code not in MASK_CODES:
            raise DatasetError(f"{path}:{lineno}: mask code must be one of t|v|s|-, got {code!r}")
        codes.append(code)
    codes = np.array(codes)
    return {name: codes == code for code, name in MASK_CODES.items() if name}


def load_dataset(edge_file, feature_file, label_file, mask_file) -> Dataset:
    features = read_features(feature_file)
    n = features.shape[0]
    if n == 0:
        raise DatasetError(f"{feature_file}: no feature rows")
    edges, declared = read_edges(edge_file)
    if declared is not None and declared != n:
        raise DatasetError(f"{edge_file} declares {declared} nodes but {feature_file} has {n} rows")
    try:
        graph = build_graph(edges, n)
    except GraphError as exc:
        raise DatasetError(f"{edge_file}: {exc}") from None
    labels = read_labels(label_file)
    masks = read_masks(mask_file)
    if len(labels) != n:
        raise DatasetError(f"{label_file} has {len(labels)} labels for {n} nodes")
    if len(masks["train"]) != n:
        raise DatasetError(f"{mask_file} has {len(masks['train'])} rows for {n} nodes")
    return Dataset(graph, features, labels, masks["train"], masks["val"], masks["test"])


def load_dataset_dir(directory) -> Dataset:
    d = Path(directory)
    return load_dataset(*(d / DATA_FILES[k] for k in ("edges", "features", "labels", "masks")))


def save_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_edges(ds.graph, d / DATA_FILES["edges"])
    with open(d / DATA_FILES["features"], "w") as fh:
        for row in ds.features:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    with open(d / DATA_FILES["labels"], "w") as fh:
        fh.writelines(f"{int(y)}\n" for y in ds.labels)
    with open(d / DATA_FILES["masks"], "w") as fh:
        for i in range(ds.graph.num_nodes):
            code = "t" if ds.train_mask[i] else "v" if ds.val_mask[i] else "s" if ds.test_mask[i] else "-"
            fh.write(code + "\n")


def community_dataset(
    num_nodes: int = 200,
    num_classes: int = 2,
    num_features: int = 8,
    p_in: float = 0.05,
    p_out: float = 0.005,
    feature_shift: float = 1.0,
    train_fraction: float = 0.5,
    seed: int = 0,
) -> Dataset:
    """Planted-partition graph with class-shifted Gaussian features.

    Nodes alternate classes; half of each class (by default) lands in the train mask,
    the rest is split evenly between val and test.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, p_in, p_out)
    draws = rng.random((num_nodes, num_nodes)) < probs
    iu = np.triu_indices(num_nodes, k=1)
    edges = np.stack([iu[0][draws[iu]], iu[1][draws[iu]]], axis=1)
    means = rng.normal(size=(num_classes, num_features)) * feature_shift
    features = means[labels] + rng.normal(size=(num_nodes, num_features))
    order = rng.permutation(num_nodes)
    n_train = int(round(train_fraction * num_nodes))
    n_val = (num_nodes - n_train) // 2
    train = np.zeros(num_nodes, bool)
    val = np.zeros(num_nodes, bool)
    test = np.zeros(num_nodes, bool)
    train[order[:n_train]] = True
    val[order[n_train : n_train + n_val]] = True
    test[order[n_train + n_val :]] = True
    return Dataset(build_graph(edges, num_nodes), features, labels.astype(np.int64), train, val, test)
