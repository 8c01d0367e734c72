"""Per-component pooling of node features into the (n, a, c) aggregation tensor."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .partition import AggregationPlan, PartitionSet

POOLINGS = ("mean", "sum", "max")


class AggregationError(ValueError):
    pass


def _check(features: np.ndarray, ps: PartitionSet, pooling: str) -> AggregationPlan:
    if pooling not in POOLINGS:
        raise AggregationError(f"unknown pooling {pooling!r}; expected one of {', '.join(POOLINGS)}")
    if features.ndim != 2 or features.shape[0] != ps.num_nodes:
        raise AggregationError(
            f"features have shape {features.shape}, partitions cover {ps.num_nodes} nodes"
        )
    return ps.plan


def _pool_matrix(plan: AggregationPlan, pooling: str) -> sp.csr_matrix:
    return plan.mean_matrix if pooling == "mean" else plan.sum_matrix


def _max_slots(features: np.ndarray, plan: AggregationPlan):
    """Per-slot max and the member (lowest node id on ties) attaining it."""
    n, a = features.shape
    values = np.zeros((n * plan.c, a))
    argmax = np.full((n * plan.c, a), -1, dtype=np.int64)
    nonempty = np.flatnonzero(plan.sizes)
    if nonempty.size == 0:
        return values, argmax
    starts = plan.offsets[nonempty]
    gathered = features[plan.members]
    seg_max = np.maximum.reduceat(gathered, starts, axis=0)
    hit = gathered == seg_max[np.repeat(np.arange(nonempty.size), plan.sizes[nonempty])]
    # members are sorted within a slot, so the first hit is the lowest id
    pos = np.where(hit, np.arange(len(plan.members))[:, None], len(plan.members))
    first = np.minimum.reduceat(pos, starts, axis=0)
    values[nonempty] = seg_max
    argmax[nonempty] = plan.members[first]
    return values, argmax


def _to_tensor(slots: np.ndarray, n: int, c: int) -> np.ndarray:
    return np.ascontiguousarray(slots.reshape(n, c, -1).transpose(0, 2, 1))


def aggregate(features: np.ndarray, ps: PartitionSet, pooling: str = "mean") -> np.ndarray:
    """``B[v, i, j]`` = pooled attribute ``i`` over component ``j`` of ``v``; empty components give 0."""
    features = np.asarray(features, dtype=np.float64)
    plan = _check(features, ps, pooling)
    n = features.shape[0]
    if pooling == "max":
        slots, _ = _max_slots(features, plan)
    else:
        slots = _pool_matrix(plan, pooling) @ features
    return _to_tensor(slots, n, plan.c)


def aggregate_backward(
    grad_B: np.ndarray, ps: PartitionSet, pooling: str, features: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum(grad_B * aggregate(features))`` with respect to ``features``."""
    features = np.asarray(features, dtype=np.float64)
    plan = _check(features, ps, pooling)
    n, a = features.shape
    if grad_B.shape != (n, a, plan.c):
        raise AggregationError(f"grad_B has shape {grad_B.shape}, expected {(n, a, plan.c)}")
    grad_slots = grad_B.transpose(0, 2, 1).reshape(n * plan.c, a)
    if pooling != "max":
        return np.asarray(_pool_matrix(plan, pooling).T @ grad_slots)
    _, argmax = _max_slots(features, plan)
    grad = np.zeros((n, a))
    valid = argmax >= 0
    rows, cols = np.nonzero(valid)
    np.add.at(grad, (argmax[rows, cols], cols), grad_slots[rows, cols])
    return grad
