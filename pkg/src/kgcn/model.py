"""k-GCN and baseline GCN layers, full-network forward/backward, loss and gradient checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .aggregation import POOLINGS, aggregate, aggregate_backward
from .graph import ADJACENCY_VARIANTS, Dataset, NormalizedAdjacency, normalized_adjacency
from .labeling import LABELING_NAMES
from .partition import PartitionSet

ARCHS = ("kgcn", "gcn")
NONLINEARITIES = ("relu", "none")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Network layout. ``layer_sizes[-1]`` is the number of classes.

    ``arch="gcn"`` is the plain graph convolution baseline: each layer pools with the
    normalized adjacency selected by ``adjacency`` instead of partitions, so
    its filters have a single component.
    """

    layer_sizes: tuple[int, ...] = (16, 2)
    c: int = 3
    labeling: str = "degree"
    pooling: str = "mean"
    arch: str = "kgcn"
    adjacency: str = "sym"
    nonlinearity: str = "relu"
    use_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(k) for k in self.layer_sizes))
        if not self.layer_sizes or min(self.layer_sizes) < 1:
            raise ModelError("layer_sizes must list at least one positive width")
        if self.c < 1:
            raise ModelError("c must be >= 1")
        for name, value, allowed in (
            ("labeling", self.labeling, LABELING_NAMES),
            ("pooling", self.pooling, POOLINGS),
            ("arch", self.arch, ARCHS),
            ("adjacency", self.adjacency, ADJACENCY_VARIANTS),
            ("nonlinearity", self.nonlinearity, NONLINEARITIES),
        ):
            if value not in allowed:
                raise ModelError(f"{name} must be one of {', '.join(allowed)}, got {value!r}")

    @property
    def components(self) -> int:
        return self.c if self.arch == "kgcn" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LayerParams:
    filters: np.ndarray  # (k, a, c)
    bias: np.ndarray  # (k,)

    def copy(self) -> "LayerParams":
        return LayerParams(self.filters.copy(), self.bias.copy())


def init_params(config: ModelConfig, num_features: int, seed: int | None = None) -> list[LayerParams]:
    """Glorot-style uniform filters in [-s, s], s = sqrt(6 / (a*c + k)); zero bias."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params, a, c = [], num_features, config.components
    for k in config.layer_sizes:
        s = np.sqrt(6.0 / (a * c + k))
        params.append(LayerParams(rng.uniform(-s, s, size=(k, a, c)), np.zeros(k)))
        a = k
    return params


# -- layers ---------------------------------------------------------------------


def kgcn_layer_forward(B: np.ndarray, params: LayerParams) -> np.ndarray:
    """``H[v, f] = sum_ij filters[f, i, j] * B[v, i, j] + bias[f]``."""
    if B.ndim != 3 or B.shape[1:] != params.filters.shape[1:]:
        raise ModelError(f"aggregate shape {B.shape} does not fit filters {params.filters.shape}")
    n, k = B.shape[0], params.filters.shape[0]
    return B.reshape(n, -1) @ params.filters.reshape(k, -1).T + params.bias


def kgcn_layer_backward(grad_H: np.ndarray, B: np.ndarray, params: LayerParams):
    """Returns ``(grad_filters, grad_bias, grad_B)``."""
    n, k = B.shape[0], params.filters.shape[0]
    if grad_H.shape != (n, k):
        raise ModelError(f"grad_H has shape {grad_H.shape}, expected {(n, k)}")
    grad_filters = (grad_H.T @ B.reshape(n, -1)).reshape(params.filters.shape)
    grad_bias = grad_H.sum(axis=0)
    grad_B = (grad_H @ params.filters.reshape(k, -1)).reshape(B.shape)
    return grad_filters, grad_bias, grad_B


def gcn_layer_forward(A_hat: NormalizedAdjacency, H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Pre-activation ``Â H W``."""
    n = A_hat.matrix.shape[0]
    if H.ndim != 2 or H.shape[0] != n or W.ndim != 2 or W.shape[0] != H.shape[1]:
        raise ModelError(f"cannot multiply Â {A_hat.matrix.shape} H {H.shape} W {W.shape}")
    return np.asarray(A_hat.matrix @ H) @ W


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, pre: np.ndarray) -> np.ndarray:
    return grad * (pre > 0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked nodes and its gradient with respect to ``logits``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ModelError("loss mask is empty")
    y = labels[idx]
    k = logits.shape[1]
    if y.min() < 0 or y.max() >= k:
        raise ModelError(f"masked labels must lie in [0, {k})")
    z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(idx.size), y]))
    probs = np.exp(z - log_norm[:, None])
    probs[np.arange(idx.size), y] -= 1.0
    grad = np.zeros_like(logits)
    grad[idx] = probs / idx.size
    return loss, grad


# -- network --------------------------------------------------------------------


class Propagator:
    """Layer-wise pooling for a given architecture: partitions for k-GCN, Â for GCN."""

    def __init__(self, config: ModelConfig, dataset: Dataset, ps: PartitionSet | None):
        self.config = config
        n = dataset.graph.num_nodes
        if config.arch == "gcn":
            self.a_hat = normalized_adjacency(dataset.graph, config.adjacency)
            self.ps = None
            return
        if ps is None:
            raise ModelError("k-GCN needs a partition set")
        if ps.c != config.c or ps.labeling != config.labeling:
            raise ModelError(
                f"partitions ({ps.labeling}, c={ps.c}) do not match config ({config.labeling}, c={config.c})"
            )
        if ps.num_nodes != n or not ps.matches(dataset.graph):
            raise ModelError("partitions were computed for a different graph")
        self.ps = ps

    def forward(self, H: np.ndarray) -> np.ndarray:
        if self.ps is None:
            return np.asarray(self.a_hat.matrix @ H)[:, :, None]
        return aggregate(H, self.ps, self.config.pooling)

    def backward(self, grad_B: np.ndarray, H: np.ndarray) -> np.ndarray:
        if self.ps is None:
            return np.asarray(self.a_hat.matrix.T @ grad_B[:, :, 0])
        return aggregate_backward(grad_B, self.ps, self.config.pooling, H)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    aggregates: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)


def _check_params(config: ModelConfig, params: list[LayerParams], num_features: int) -> None:
    if len(params) != len(config.layer_sizes):
        raise ModelError(f"{len(params)} parameter layers for {len(config.layer_sizes)} configured")
    a = num_features
    for l, (p, k) in enumerate(zip(params, config.layer_sizes)):
        want = (k, a, config.components)
        if p.filters.shape != want or p.bias.shape != (k,):
            raise ModelError(f"layer {l}: filters {p.filters.shape}, bias {p.bias.shape}; expected {want}")
        a = k


def network_forward(
    config: ModelConfig,
    dataset: Dataset,
    ps: PartitionSet | None,
    params: list[LayerParams],
    propagator: Propagator | None = None,
):
    """aggregate -> filters -> nonlinearity per layer; the last layer returns raw logits."""
    _check_params(config, params, dataset.num_features)
    prop = propagator or Propagator(config, dataset, ps)
    cache = ForwardCache()
    H = dataset.features
    last = len(params) - 1
    for l, p in enumerate(params):
        B = prop.forward(H)
        layer = p if config.use_bias else LayerParams(p.filters, np.zeros_like(p.bias))
        Z = kgcn_layer_forward(B, layer)
        cache.inputs.append(H)
        cache.aggregates.append(B)
        cache.pre_activations.append(Z)
        H = relu_forward(Z) if l < last and config.nonlinearity == "relu" else Z
    return H, cache


def network_backward(
    config: ModelConfig,
    params: list[LayerParams],
    cache: ForwardCache,
    grad_logits: np.ndarray,
    propagator: Propagator,
) -> list[LayerParams]:
    grads: list[LayerParams] = [None] * len(params)  # type: ignore[list-item]
    grad = grad_logits
    last = len(params) - 1
    for l in range(last, -1, -1):
        if l < last and config.nonlinearity == "relu":
            grad = relu_backward(grad, cache.pre_activations[l])
        g_f, g_b, g_B = kgcn_layer_backward(grad, cache.aggregates[l], params[l])
        if not config.use_bias:
            g_b = np.zeros_like(g_b)
        grads[l] = LayerParams(g_f, g_b)
        if l > 0:
            grad = propagator.backward(g_B, cache.inputs[l])
    return grads


def l2_penalty(params: list[LayerParams], l2: float) -> float:
    return l2 * float(sum(np.sum(p.filters**2) for p in params))


def loss_and_grads(
    config: ModelConfig,
    dataset: Dataset,
    ps: PartitionSet | None,
    params: list[LayerParams],
    mask: np.ndarray | None = None,
    l2: float = 0.0,
    propagator: Propagator | None = None,
):
    """Masked cross-entropy plus ``l2 * ||filters||^2``; returns ``(loss, grads, logits)``."""
    prop = propagator or Propagator(config, dataset, ps)
    mask = dataset.train_mask if mask is None else mask
    logits, cache = network_forward(config, dataset, ps, params, prop)
    loss, g_logits = softmax_cross_entropy(logits, dataset.labels, mask)
    grads = network_backward(config, params, cache, g_logits, prop)
    if l2:
        loss += l2_penalty(params, l2)
        for g, p in zip(grads, params):
            g.filters += 2.0 * l2 * p.filters
    return loss, grads, logits


def flatten(params: list[LayerParams]) -> np.ndarray:
    return np.concatenate([np.concatenate([p.filters.ravel(), p.bias.ravel()]) for p in params])


def unflatten(vec: np.ndarray, like: list[LayerParams]) -> list[LayerParams]:
    out, i = [], 0
    for p in like:
        nf, nb = p.filters.size, p.bias.size
        out.append(
            LayerParams(vec[i : i + nf].reshape(p.filters.shape).copy(), vec[i + nf : i + nf + nb].copy())
        )
        i += nf + nb
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from blowing up."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(
    config: ModelConfig,
    dataset: Dataset,
    ps: PartitionSet | None,
    params: list[LayerParams],
    step: float = 1e-4,
    mask: np.ndarray | None = None,
    l2: float = 0.0,
    max_coords: int = 2000,
    seed: int = 0,
    loss_grad: Callable = loss_and_grads,
) -> float:
    """Max relative error between analytic and central-difference parameter gradients.

    Every coordinate is checked when there are at most ``max_coords`` of them,
    otherwise a seeded random subset of ``max_coords`` (at least 200).
    """
    if step <= 0:
        raise ModelError("finite-difference step must be positive")
    prop = Propagator(config, dataset, ps)
    _, grads, _ = loss_grad(config, dataset, ps, params, mask, l2, prop)
    analytic = flatten(grads)
    theta = flatten(params)
    coords = np.arange(theta.size)
    if not config.use_bias:
        bias_idx = []
        i = 0
        for p in params:
            i += p.filters.size
            bias_idx.extend(range(i, i + p.bias.size))
            i += p.bias.size
        coords = np.setdiff1d(coords, bias_idx)
    limit = max(200, max_coords)
    if coords.size > limit:
        coords = np.sort(np.random.default_rng(seed).choice(coords, size=limit, replace=False))

    def loss_at(vec):
        return loss_grad(config, dataset, ps, unflatten(vec, params), mask, l2, prop)[0]

    numeric = np.empty(coords.size)
    for n_i, idx in enumerate(coords):
        plus, minus = theta.copy(), theta.copy()
        plus[idx] += step
        minus[idx] -= step
        numeric[n_i] = (loss_at(plus) - loss_at(minus)) / (2.0 * step)
    if coords.size == 0:
        return 0.0
    return float(relative_error(analytic[coords], numeric).max())


def predict(
    config: ModelConfig, dataset: Dataset, ps: PartitionSet | None, params: list[LayerParams]
) -> np.ndarray:
    return network_forward(config, dataset, ps, params)[0]


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(path, config: ModelConfig, params: list[LayerParams], extra: dict | None = None) -> None:
    doc = {
        "config": config.to_dict(),
        "layers": [
            {
                "shape": list(p.filters.shape),
                "filters": p.filters.ravel().tolist(),
                "bias": p.bias.tolist(),
            }
            for p in params
        ],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ModelConfig, list[LayerParams], dict]:
    doc = json.loads(Path(path).read_text())
    try:
        config = ModelConfig.from_dict(doc["config"])
        params = []
        for l, layer in enumerate(doc["layers"]):
            shape = tuple(int(s) for s in layer["shape"])
            filters = np.array(layer["filters"], dtype=np.float64)
            bias = np.array(layer["bias"], dtype=np.float64)
            if filters.size != int(np.prod(shape)) or len(shape) != 3 or bias.shape != (shape[0],):
                raise ModelError(f"layer {l}: stored arrays do not match shape {shape}")
            params.append(LayerParams(filters.reshape(shape), bias))
    except KeyError as exc:
        raise ModelError(f"{path}: checkpoint missing field {exc}") from None
    if len(params) != len(config.layer_sizes) or any(
        p.filters.shape[0] != k or p.filters.shape[2] != config.components
        for p, k in zip(params, config.layer_sizes)
    ):
        raise ModelError(f"{path}: layer shapes disagree with the stored config")
    for prev, nxt in zip(params, params[1:]):
        if nxt.filters.shape[1] != prev.filters.shape[0]:
            raise ModelError(f"{path}: consecutive layer widths do not chain")
    return config, params, doc.get("extra", {})
