"""Grid-graph checks: k-GCN vs. standard 2-D convolution, and a directional task
that single-aggregate pooling cannot solve.

Grid node ``r * width + c`` carries pixel ``(r, c)``. Spatial offsets inside a
3x3 window are indexed row-major, ``(dr + 1) * 3 + (dc + 1)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .aggregation import aggregate
from .graph import Dataset, grid_graph
from .model import LayerParams, ModelConfig, kgcn_layer_forward, network_forward
from .partition import PartitionSet, partition_all
from .training import TrainConfig, accuracy, train


class EquivalenceViolation(AssertionError):
    pass


def conv2d_reference(img: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Valid (unpadded, stride 1) cross-correlation.

    ``img`` is (height, width, a), ``filters`` is (k, s, s, a); the result is
    (height - s + 1, width - s + 1, k).
    """
    img = np.asarray(img, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    if img.ndim != 3 or filters.ndim != 4 or filters.shape[3] != img.shape[2] or filters.shape[1] != filters.shape[2]:
        raise ValueError(f"incompatible image {img.shape} and filters {filters.shape}")
    s = filters.shape[1]
    if img.shape[0] < s or img.shape[1] < s:
        raise ValueError(f"image {img.shape[:2]} smaller than the {s}x{s} receptive field")
    windows = np.lib.stride_tricks.sliding_window_view(img, (s, s), axis=(0, 1))
    # windows: (H', W', a, s, s)
    return np.einsum("xyiab,fabi->xyf", windows, filters)


def interior_nodes(height: int, width: int, margin: int = 1) -> np.ndarray:
    return np.array(
        [r * width + c for r in range(margin, height - margin) for c in range(margin, width - margin)],
        dtype=np.int64,
    )


def offset_permutation(ps: PartitionSet, v: int, width: int) -> np.ndarray:
    """Map component index -> 3x3 offset index for a node whose components are all singletons."""
    r, c = divmod(v, width)
    part = ps.partitions[v]
    perm = np.full(part.c, -1, dtype=np.int64)
    for j, comp in enumerate(part.components):
        if len(comp) != 1:
            raise EquivalenceViolation(f"node {v}: component {j} = {comp} is not a singleton")
        ur, uc = divmod(comp[0], width)
        dr, dc = ur - r, uc - c
        if abs(dr) > 1 or abs(dc) > 1:
            raise EquivalenceViolation(f"node {v}: component {j} member {comp[0]} outside the 3x3 window")
        perm[j] = (dr + 1) * 3 + (dc + 1)
    return perm


@dataclass
class EquivalenceReport:
    height: int
    width: int
    m: int
    k: int
    seed: int
    permutation: list[int]
    max_abs_deviation: float
    per_node_deviation: list[float]
    interior: list[int]

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self, tol: float = 1e-10) -> str:
        status = "PASS" if self.max_abs_deviation <= tol else "FAIL"
        return (
            f"{status} max_dev={self.max_abs_deviation:.3e} seed={self.seed} "
            f"grid={self.height}x{self.width} k={self.k} permutation={self.permutation}"
        )


def filters_to_components(conv_filters: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """(k, 3, 3, a) convolution filters -> (k, a, 9) k-GCN filters under ``perm``."""
    k, s, _, a = conv_filters.shape
    flat = conv_filters.reshape(k, s * s, a)  # offset index is row-major over (dr, dc)
    return np.ascontiguousarray(flat[:, perm, :].transpose(0, 2, 1))


def verify_grid_equivalence(
    height: int = 6,
    width: int = 6,
    m: int = 2,
    k: int = 4,
    seed: int = 0,
    channels: int = 3,
    image: np.ndarray | None = None,
    conv_filters: np.ndarray | None = None,
    ps: PartitionSet | None = None,
) -> EquivalenceReport:
    """Compare a canonical 9-partition k-GCN layer against ``conv2d_reference``.

    The component-to-offset permutation is read off the first interior node and
    must hold for every interior node; otherwise ``EquivalenceViolation`` is raised.
    Bias is off on both sides.
    """
    if m != 2:
        raise ValueError("only m = 2 is supported: a 1-hop Moore neighborhood is exactly the 3x3 window")
    s = 2 * m - 1
    if height < 2 * m or width < 2 * m:
        raise ValueError(f"grid must be at least {2 * m}x{2 * m}")
    rng = np.random.default_rng(seed)
    if image is None:
        image = rng.normal(size=(height, width, channels))
    if conv_filters is None:
        conv_filters = rng.normal(size=(k, s, s, image.shape[2]))
    if image.shape[:2] != (height, width) or conv_filters.shape[:3] != (k, s, s):
        raise ValueError("image/filter shapes disagree with the requested grid")

    g = grid_graph(height, width, "moore")
    if ps is None:
        ps = partition_all(g, "canonical", s * s)
    interior = interior_nodes(height, width, m - 1)
    perms = {int(v): offset_permutation(ps, int(v), width) for v in interior}
    perm = perms[int(interior[0])]
    if sorted(perm.tolist()) != list(range(s * s)):
        raise EquivalenceViolation(f"node {interior[0]}: components do not cover the window: {perm.tolist()}")
    bad = [v for v, p in perms.items() if not np.array_equal(p, perm)]
    if bad:
        dump = "; ".join(f"node {v}: {ps.partitions[v].components} -> {perms[v].tolist()}" for v in bad[:5])
        raise EquivalenceViolation(
            f"no single permutation fits all interior nodes (reference {perm.tolist()}); {dump}"
        )

    X = image.reshape(height * width, -1)
    B = aggregate(X, ps, "mean")
    params = LayerParams(filters_to_components(conv_filters, perm), np.zeros(k))
    H = kgcn_layer_forward(B, params)
    ref = conv2d_reference(image, conv_filters)
    rows, cols = np.divmod(interior, width)
    dev = np.abs(H[interior] - ref[rows - (m - 1), cols - (m - 1)]).max(axis=1)
    return EquivalenceReport(
        height=height,
        width=width,
        m=m,
        k=k,
        seed=seed,
        permutation=perm.tolist(),
        max_abs_deviation=float(dev.max()),
        per_node_deviation=dev.tolist(),
        interior=interior.tolist(),
    )


# -- directional task -----------------------------------------------------------


def directional_dataset(height: int, width: int, seed: int = 0, features: np.ndarray | None = None) -> Dataset:
    """Moore grid with one i.i.d. normal feature per node.

    Interior node label: 1 if its left neighbor's feature exceeds its right
    neighbor's, else 0. Interior nodes form the train mask; the border is unlabeled.
    """
    if height < 4 or width < 4:
        raise ValueError("directional task needs a grid of at least 4x4")
    g = grid_graph(height, width, "moore")
    if features is None:
        features = np.random.default_rng(seed).normal(size=(height * width, 1))
    x = features[:, 0]
    labels = np.full(height * width, -1, dtype=np.int64)
    interior = interior_nodes(height, width)
    labels[interior] = (x[interior - 1] > x[interior + 1]).astype(np.int64)
    train_mask = np.zeros(height * width, bool)
    train_mask[interior] = True
    empty = np.zeros(height * width, bool)
    return Dataset(g, np.asarray(features, dtype=np.float64), labels, train_mask, empty, empty.copy())


def reflect_columns(features: np.ndarray, height: int, width: int, axis: int | None = None) -> np.ndarray:
    """Mirror features about grid column ``axis`` (default ``width // 2``).

    Columns whose mirror image falls outside the grid keep their values, so
    the map is an involution that fixes the axis column for any width.
    """
    axis = width // 2 if axis is None else axis
    grid = features.reshape(height, width, -1)
    out = grid.copy()
    for c in range(width):
        mc = 2 * axis - c
        if 0 <= mc < width:
            out[:, c] = grid[:, mc]
    return out.reshape(features.shape)


@dataclass
class ExpressivityReport:
    height: int
    width: int
    seed: int
    epochs: int
    c1_train_accuracy: float
    kgcn_train_accuracy: float
    kgcn_first_perfect_epoch: int | None
    axis_nodes: list[int]
    labels_flip: bool
    c1_axis_logit_max_diff: float
    kgcn_axis_logit_max_diff: float
    c1_pair_accuracy: float
    kgcn_pair_accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"c=1 train_acc={self.c1_train_accuracy:.4f} pair_acc={self.c1_pair_accuracy:.4f} "
            f"axis_logit_diff={self.c1_axis_logit_max_diff:.3e} | "
            f"9-GCN train_acc={self.kgcn_train_accuracy:.4f} pair_acc={self.kgcn_pair_accuracy:.4f} "
            f"axis_logit_diff={self.kgcn_axis_logit_max_diff:.3e} first_perfect_epoch={self.kgcn_first_perfect_epoch}"
        )


def expressivity_demo(
    height: int = 8,
    width: int = 8,
    seed: int = 0,
    epochs: int = 500,
    learning_rate: float = 0.05,
) -> ExpressivityReport:
    """Train a c=1 mean model and a canonical 9-GCN on the directional task.

    Both get the same one-layer architecture and budget. Reflection pairs use
    the axis-column mirror from ``reflect_columns``: at axis nodes the label
    flips while a c=1 model sees the same neighborhood multiset.
    """
    ds = directional_dataset(height, width, seed)
    reflected = directional_dataset(height, width, features=reflect_columns(ds.features, height, width))
    tc = TrainConfig(learning_rate=learning_rate, epochs=epochs, optimizer="adam", l2=0.0)

    results = {}
    for name, cfg in (
        ("c1", ModelConfig(layer_sizes=(2,), c=1, labeling="degree", pooling="mean", seed=seed)),
        ("kgcn", ModelConfig(layer_sizes=(2,), c=9, labeling="canonical", pooling="mean", seed=seed)),
    ):
        ps = partition_all(ds.graph, cfg.labeling, cfg.c)
        params, report = train(cfg, tc, ds, ps)
        logits = network_forward(cfg, ds, ps, params)[0]
        logits_ref = network_forward(cfg, reflected, ps, params)[0]
        results[name] = (params, report, logits, logits_ref)

    axis = width // 2
    axis_nodes = np.array([r * width + axis for r in range(1, height - 1)], dtype=np.int64)
    y, y_ref = ds.labels[axis_nodes], reflected.labels[axis_nodes]
    x = ds.features[:, 0]
    distinct = x[axis_nodes - 1] != x[axis_nodes + 1]

    def pair_accuracy(logits, logits_ref):
        pred = np.argmax(logits[axis_nodes], axis=1)
        pred_ref = np.argmax(logits_ref[axis_nodes], axis=1)
        return float(np.mean(np.concatenate([pred == y, pred_ref == y_ref])))

    def axis_diff(logits, logits_ref):
        return float(np.abs(logits[axis_nodes] - logits_ref[axis_nodes]).max())

    c1, kg = results["c1"], results["kgcn"]
    perfect = [e for e, acc in enumerate(kg[1].train_accuracy) if acc == 1.0]
    return ExpressivityReport(
        height=height,
        width=width,
        seed=seed,
        epochs=epochs,
        c1_train_accuracy=accuracy(c1[2], ds.labels, ds.train_mask),
        kgcn_train_accuracy=accuracy(kg[2], ds.labels, ds.train_mask),
        kgcn_first_perfect_epoch=perfect[0] if perfect else None,
        axis_nodes=axis_nodes.tolist(),
        labels_flip=bool(np.all(y_ref[distinct] == 1 - y[distinct])),
        c1_axis_logit_max_diff=axis_diff(c1[2], c1[3]),
        kgcn_axis_logit_max_diff=axis_diff(kg[2], kg[3]),
        c1_pair_accuracy=pair_accuracy(c1[2], c1[3]),
        kgcn_pair_accuracy=pair_accuracy(kg[2], kg[3]),
    )
