import numpy as np
import pandas as pd
import pytest

from delaynet.autodiff import Tensor, parameter
from delaynet.errors import ConfigurationError, DataError, NumericError
from delaynet.layers import Linear, Module
from delaynet.model import build
from delaynet.models import TrainConfig
from delaynet.train import Adam, batches, evaluate, fit, mae, predict, write_metrics


class LineModel(Module):
    """y = w * x + b on [B, 1, 1] inputs"""

    def __init__(self, seed=0):
        super().__init__()
        self.linear = self.register_module("linear", Linear(1, 1, seed=seed))

    def forward(self, x1, x2, training=None):
        B = x1.shape[0]
        return self.linear(x1.reshape(B, 1)).reshape(B, 1, 1)


def _line(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1, 1))
    return x, np.zeros((n, 1, 1)), 2.0 * x + 1.0


def _random_set(cfg, n, seed):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(size=(n, cfg.F, cfg.S)),
        rng.normal(size=(n, cfg.C, cfg.T)),
        rng.normal(size=(n, cfg.Fy, cfg.T)),
    )


def test_mae():
    assert mae(Tensor([1.0, 2.0]), Tensor([2.0, 0.0])).item() == pytest.approx(1.5)
    with pytest.raises(ConfigurationError):
        mae(Tensor([1.0, 2.0]), Tensor([1.0]))


def test_adam_first_step_moves_by_lr():
    p = parameter([1.0, -2.0])
    p.grad = np.array([3.0, -0.5])
    Adam([p], lr=0.1, clip_norm=None).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)


def test_adam_clips_global_norm():
    p = parameter([0.0, 0.0])
    p.grad = np.array([6.0, 8.0])
    optimizer = Adam([p], lr=0.1, clip_norm=5.0)
    assert optimizer.grad_norm() == pytest.approx(10.0)
    optimizer.step()
    np.testing.assert_allclose(optimizer.exp_avg[0], 0.1 * np.array([3.0, 4.0]))


def test_batches_merge_trailing_singleton():
    assert [len(b) for b in batches(9, 4)] == [4, 5]
    assert [len(b) for b in batches(8, 4)] == [4, 4]
    assert [len(b) for b in batches(1, 4)] == [1]
    shuffled = batches(10, 3, np.random.default_rng(0))
    assert sorted(np.concatenate(shuffled).tolist()) == list(range(10))


def test_fit_recovers_a_line():
    net = LineModel(seed=3)
    cfg = TrainConfig(lr=0.02, max_epochs=400, patience=400, batch_size=16, seed=1)
    _, report = fit(net, _line(64, 0), _line(32, 1), cfg)
    assert net.linear.weight.data[0, 0] == pytest.approx(2.0, abs=0.05)
    assert net.linear.bias.data[0] == pytest.approx(1.0, abs=0.05)
    assert report.best_val_mae < 0.05
    assert report.val_curve[-1] < report.val_curve[0]


def test_zero_learning_rate_freezes_the_network(tiny_config):
    cfg = tiny_config.model_copy(update={"apply_batchnorm": False})
    net = build(cfg, seed=0)
    before = net.state_dict()[0]
    train = TrainConfig(lr=0.0, max_epochs=3, patience=10, batch_size=4)
    _, report = fit(net, _random_set(cfg, 12, 0), _random_set(cfg, 6, 1), train)
    assert len(set(report.val_curve)) == 1
    assert report.best_epoch == 0
    for name, value in net.state_dict()[0].items():
        np.testing.assert_array_equal(value, before[name])


def test_early_stopping(tiny_config):
    cfg = tiny_config.model_copy(update={"apply_batchnorm": False})
    train = TrainConfig(lr=0.0, max_epochs=50, patience=2, batch_size=4)
    _, report = fit(build(cfg), _random_set(cfg, 8, 0), _random_set(cfg, 4, 1), train)
    assert report.stopped_early
    assert len(report.epochs) == 3


def test_fit_is_deterministic_and_restores_best(tiny_config):
    train = TrainConfig(lr=0.01, max_epochs=4, patience=4, batch_size=4, seed=7)
    data, val = _random_set(tiny_config, 12, 0), _random_set(tiny_config, 6, 1)
    net_a, net_b = build(tiny_config, seed=2), build(tiny_config, seed=2)
    ckpt_a, report_a = fit(net_a, data, val, train, seed=2)
    ckpt_b, report_b = fit(net_b, data, val, train, seed=2)
    assert report_a.epochs == report_b.epochs
    assert ckpt_a.model_dump_json() == ckpt_b.model_dump_json()
    assert all(e.wall_seconds == 0.0 for e in report_a.epochs)
    assert evaluate(net_a, val) == report_a.best_val_mae
    assert ckpt_a.best_epoch == report_a.best_epoch


def test_wall_time_is_recorded_on_request(tiny_config):
    train = TrainConfig(lr=0.01, max_epochs=1, batch_size=4, record_wall_time=True)
    _, report = fit(build(tiny_config), _random_set(tiny_config, 8, 0), _random_set(tiny_config, 4, 1), train)
    assert report.epochs[0].wall_seconds > 0.0
    assert report.wall_time > 0.0


def test_fit_rejects_empty_sets(tiny_config):
    data = _random_set(tiny_config, 8, 0)
    empty = tuple(a[:0] for a in data)
    with pytest.raises(DataError):
        fit(build(tiny_config), data, empty, TrainConfig())
    with pytest.raises(DataError):
        evaluate(build(tiny_config), empty)


def test_fit_rejects_batches_of_one_under_per_cell_batchnorm(tiny_config):
    val = _random_set(tiny_config, 3, 1)
    with pytest.raises(DataError, match="got 1 train samples"):
        fit(build(tiny_config), _random_set(tiny_config, 1, 0), val, TrainConfig(max_epochs=2, batch_size=4))
    with pytest.raises(DataError, match="batch size 1"):
        fit(build(tiny_config), _random_set(tiny_config, 4, 0), val, TrainConfig(max_epochs=2, batch_size=1))

    plain = tiny_config.model_copy(update={"apply_batchnorm": False})
    _, report = fit(build(plain), _random_set(plain, 1, 0), val, TrainConfig(max_epochs=2, batch_size=4))
    assert len(report.epochs) == 2


def test_non_finite_loss_is_a_numeric_error(tiny_config):
    x1, x2, y = _random_set(tiny_config, 8, 0)
    y[3] = np.inf
    with pytest.raises(NumericError, match="epoch 0"):
        fit(build(tiny_config), (x1, x2, y), _random_set(tiny_config, 4, 1), TrainConfig(batch_size=8))


def test_predict_shape(tiny_config):
    x1, x2, _ = _random_set(tiny_config, 5, 0)
    out = predict(build(tiny_config), x1, x2, batch_size=2)
    assert out.shape == (5, tiny_config.Fy, tiny_config.T)


def test_write_metrics(tiny_config, tmp_path):
    train = TrainConfig(lr=0.01, max_epochs=2, patience=5, batch_size=4)
    _, report = fit(build(tiny_config), _random_set(tiny_config, 8, 0), _random_set(tiny_config, 4, 1), train)
    path = tmp_path / "metrics.csv"
    write_metrics(report, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["epoch", "train_mae", "val_mae", "wall_seconds"]
    assert frame["epoch"].tolist() == [0, 1]
    np.testing.assert_allclose(frame["val_mae"], report.val_curve)
