"""Full-batch semi-supervised training with SGD or Adam."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Dataset
from .model import (
    LayerParams,
    ModelConfig,
    ModelError,
    Propagator,
    init_params,
    loss_and_grads,
    network_forward,
)
from .partition import PartitionSet

OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2: float = 5e-4

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {', '.join(OPTIMIZERS)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list[float]
    train_accuracy: list[float]
    val_accuracy: list[float | None]
    test_accuracy: float | None
    best_epoch: int
    wall_time: float = field(default=0.0, compare=False)

    def metrics(self) -> dict:
        """Everything except wall time; equal for reruns with the same seed."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'epoch':>5}  {'loss':>10}  {'train_acc':>9}  {'val_acc':>7}"]
        for e, (loss, tr, va) in enumerate(zip(self.train_loss, self.train_accuracy, self.val_accuracy)):
            va_s = "-" if va is None else f"{va:.4f}"
            lines.append(f"{e:5d}  {loss:10.6f}  {tr:9.4f}  {va_s:>7}")
        test = "n/a" if self.test_accuracy is None else f"{self.test_accuracy:.4f}"
        lines.append(f"best_epoch={self.best_epoch} test_acc={test} wall_time={self.wall_time:.3f}s")
        return "\n".join(lines)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Argmax accuracy over masked nodes; argmax ties go to the lowest class."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ModelError("accuracy mask is empty")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


def evaluate(
    params: list[LayerParams],
    config: ModelConfig,
    dataset: Dataset,
    ps: PartitionSet | None,
    mask: np.ndarray,
) -> float:
    logits, _ = network_forward(config, dataset, ps, params)
    return accuracy(logits, dataset.labels, mask)


class _Adam:
    def __init__(self, params: list[LayerParams], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [LayerParams(np.zeros_like(p.filters), np.zeros_like(p.bias)) for p in params]
        self.v = [LayerParams(np.zeros_like(p.filters), np.zeros_like(p.bias)) for p in params]

    def step(self, params: list[LayerParams], grads: list[LayerParams]) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for name in ("filters", "bias"):
                gi = getattr(g, name)
                mi = getattr(m, name)
                vi = getattr(v, name)
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * gi
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * gi * gi
                getattr(p, name)[...] -= cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.epsilon)


def sgd_step(params: list[LayerParams], grads: list[LayerParams], lr: float) -> None:
    for p, g in zip(params, grads):
        p.filters -= lr * g.filters
        p.bias -= lr * g.bias


def train(
    config: ModelConfig,
    train_config: TrainConfig,
    dataset: Dataset,
    ps: PartitionSet | None,
    params: list[LayerParams] | None = None,
) -> tuple[list[LayerParams], TrainReport]:
    """Minimize masked cross-entropy + ``l2 * ||filters||^2`` on the train mask.

    Returns the parameters from the epoch with the best validation accuracy
    (the final ones when there is no validation mask).
    """
    if not dataset.train_mask.any():
        raise ModelError("train mask is empty")
    if config.layer_sizes[-1] < dataset.num_classes:
        raise ModelError(
            f"final layer width {config.layer_sizes[-1]} < {dataset.num_classes} classes in the dataset"
        )
    start = time.perf_counter()
    params = init_params(config, dataset.num_features) if params is None else [p.copy() for p in params]
    prop = Propagator(config, dataset, ps)
    opt = _Adam(params, train_config) if train_config.optimizer == "adam" else None
    has_val = bool(dataset.val_mask.any())

    losses, train_acc, val_acc = [], [], []
    best_val, best_epoch, best = -1.0, 0, [p.copy() for p in params]
    for epoch in range(train_config.epochs):
        loss, grads, logits = loss_and_grads(
            config, dataset, ps, params, dataset.train_mask, train_config.l2, prop
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became {loss} at epoch {epoch} (lr={train_config.learning_rate}, "
                f"optimizer={train_config.optimizer})"
            )
        losses.append(loss)
        train_acc.append(accuracy(logits, dataset.labels, dataset.train_mask))
        va = accuracy(logits, dataset.labels, dataset.val_mask) if has_val else None
        val_acc.append(va)
        if has_val and va > best_val:
            best_val, best_epoch, best = va, epoch, [p.copy() for p in params]
        if opt is None:
            sgd_step(params, grads, train_config.learning_rate)
        else:
            opt.step(params, grads)

    if not has_val:
        best, best_epoch = params, train_config.epochs
    test = evaluate(best, config, dataset, ps, dataset.test_mask) if dataset.test_mask.any() else None
    report = TrainReport(
        train_loss=losses,
        train_accuracy=train_acc,
        val_accuracy=val_acc,
        test_accuracy=test,
        best_epoch=best_epoch,
        wall_time=time.perf_counter() - start,
    )
    return best, report
