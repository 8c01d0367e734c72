import dataclasses
import json

import numpy as np
import pytest

from kgcn.graph import Dataset, build_graph, community_dataset
from kgcn.model import LayerParams, ModelConfig, ModelError, flatten, gradient_check, init_params, loss_and_grads
from kgcn.partition import partition_all
from kgcn.training import TrainConfig, TrainingDiverged, accuracy, evaluate, sgd_step, train


def sign_task(n=40, seed=0):
    """Isolated nodes labeled by the sign of their single feature."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    x[np.abs(x) < 0.05] += 0.1
    labels = (x[:, 0] > 0).astype(np.int64)
    mask = np.ones(n, bool)
    empty = np.zeros(n, bool)
    return Dataset(build_graph([], n), x, labels, mask, empty, empty.copy())


LINEAR = ModelConfig(layer_sizes=(2,), c=1, nonlinearity="none")


def test_zero_learning_rate_keeps_params():
    ds = community_dataset(num_nodes=40, seed=1)
    config = ModelConfig(layer_sizes=(4, 2), c=2)
    ps = partition_all(ds.graph, "degree", 2)
    start = init_params(config, ds.num_features)
    for opt in ("sgd", "adam"):
        params, report = train(config, TrainConfig(learning_rate=0.0, epochs=5, optimizer=opt), ds, ps, start)
        assert np.array_equal(flatten(params), flatten(start))
        assert len(set(report.train_loss)) == 1


def test_separable_toy_task_is_learned():
    ds = sign_task()
    ps = partition_all(ds.graph, "degree", 1)
    _, report = train(LINEAR, TrainConfig(learning_rate=0.1, epochs=200, l2=0.0), ds, ps)
    assert report.train_accuracy[-1] == 1.0
    assert report.best_epoch == 200  # no validation mask: final parameters


def test_training_is_deterministic():
    ds = community_dataset(num_nodes=60, seed=3)
    config = ModelConfig(layer_sizes=(8, 2), c=3, seed=11)
    ps = partition_all(ds.graph, "degree", 3)
    tc = TrainConfig(epochs=15)
    p1, r1 = train(config, tc, ds, ps)
    p2, r2 = train(config, tc, ds, partition_all(ds.graph, "degree", 3, threads=3))
    assert r1 == r2
    assert json.dumps(r1.metrics()) == json.dumps(r2.metrics())
    assert np.array_equal(flatten(p1), flatten(p2))
    assert len(r1.train_loss) == len(r1.train_accuracy) == len(r1.val_accuracy) == 15


def test_best_val_parameters_are_returned():
    ds = community_dataset(num_nodes=60, seed=3)
    config = ModelConfig(layer_sizes=(8, 2), c=3)
    ps = partition_all(ds.graph, "degree", 3)
    params, report = train(config, TrainConfig(epochs=20), ds, ps)
    assert report.val_accuracy[report.best_epoch] == max(report.val_accuracy)
    assert evaluate(params, config, ds, ps, ds.val_mask) == max(report.val_accuracy)


def test_accuracy_examples():
    labels = np.array([0, 2, 1, 1])
    mask = np.ones(4, bool)
    assert accuracy(np.eye(3)[labels], labels, mask) == 1.0
    assert accuracy(np.zeros((4, 3)), np.array([1, 2, 1, 2]), mask) == 0.0
    with pytest.raises(ModelError, match="empty"):
        accuracy(np.zeros((4, 3)), labels, np.zeros(4, bool))


def test_evaluate_in_unit_interval():
    ds = community_dataset(num_nodes=50, seed=2)
    config = ModelConfig(layer_sizes=(4, 2), c=2, labeling="closeness")
    ps = partition_all(ds.graph, "closeness", 2)
    acc = evaluate(init_params(config, ds.num_features), config, ds, ps, ds.test_mask)
    assert 0.0 <= acc <= 1.0


def test_single_sgd_step_matches_gradient():
    base = community_dataset(num_nodes=30, seed=5)
    ds = dataclasses.replace(base, val_mask=np.zeros(30, bool))  # keep the stepped params
    config = ModelConfig(layer_sizes=(4, 2), c=3, labeling="wl")
    ps = partition_all(ds.graph, "wl", 3)
    start = init_params(config, ds.num_features)
    start[0].bias[:] = 0.3
    lr, l2 = 0.05, 0.01
    assert gradient_check(config, ds, ps, start) <= 1e-5
    _, raw, _ = loss_and_grads(config, ds, ps, start, l2=0.0)
    params, _ = train(config, TrainConfig(learning_rate=lr, epochs=1, optimizer="sgd", l2=l2), ds, ps, start)
    for p, p0, g in zip(params, start, raw):
        np.testing.assert_allclose(p.filters - p0.filters, -lr * (g.filters + 2 * l2 * p0.filters), rtol=0, atol=1e-15)
        np.testing.assert_allclose(p.bias - p0.bias, -lr * g.bias, rtol=0, atol=1e-15)


def test_sgd_step_in_place():
    params = [LayerParams(np.ones((1, 1, 1)), np.ones(1))]
    sgd_step(params, [LayerParams(np.full((1, 1, 1), 2.0), np.full(1, -1.0))], 0.5)
    assert params[0].filters.item() == 0.0 and params[0].bias.item() == 1.5


def test_loss_non_increasing_for_small_step():
    ds = sign_task(seed=4)
    ps = partition_all(ds.graph, "degree", 1)
    _, report = train(LINEAR, TrainConfig(learning_rate=1e-3, epochs=100, optimizer="sgd", l2=0.0), ds, ps)
    assert np.all(np.diff(report.train_loss) <= 1e-15)


def test_divergence_aborts_with_diagnostic():
    ds = sign_task()
    ps = partition_all(ds.graph, "degree", 1)
    bad = init_params(LINEAR, 1)
    bad[0].filters[0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(LINEAR, TrainConfig(epochs=3), ds, ps, bad)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 0.1})
    assert TrainConfig.from_dict(TrainConfig(epochs=3).to_dict()) == TrainConfig(epochs=3)


def test_report_table_and_json():
    ds = sign_task(n=10)
    ps = partition_all(ds.graph, "degree", 1)
    _, report = train(LINEAR, TrainConfig(epochs=3), ds, ps)
    lines = report.table().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("best_epoch=3 test_acc=n/a")
    assert json.loads(json.dumps(report.to_dict()))["val_accuracy"] == [None] * 3


def test_narrow_output_layer_rejected():
    ds = sign_task()
    ps = partition_all(ds.graph, "degree", 1)
    with pytest.raises(ModelError, match="final layer width"):
        train(ModelConfig(layer_sizes=(1,), c=1), TrainConfig(epochs=1), ds, ps)
