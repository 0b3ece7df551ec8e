import numpy as np
import pytest
from pydantic import ValidationError

from delaynet.autodiff import Tensor, grad_check
from delaynet.const import D_AFF_AFF_GAU, D_LOG_AFF_GAU, BlockPosition
from delaynet.errors import ConfigurationError
from delaynet.layers import Aggregator
from delaynet.model import ZeroPredictor, build, validate_net_config
from delaynet.models import AggregatorConfig, DelayNetConfig


def _inputs(cfg, rng, B=4):
    x1 = Tensor(rng.normal(size=(B, cfg.F, cfg.S)))
    x2 = Tensor(rng.normal(size=(B, cfg.C, cfg.T)))
    return x1, x2


def test_named_architecture_parameter_counts():
    aff = build(DelayNetConfig.named(D_AFF_AFF_GAU))
    log = build(DelayNetConfig.named(D_LOG_AFF_GAU))
    assert aff.param_count() == 8278
    assert log.param_count() == 10798
    for net in (aff, log):
        assert 8_000 <= net.param_count() <= 25_000


def _aggregator_closed_form(k, width_in, width_out):
    return k * (width_in * width_in + width_in) + width_in * width_out + width_out


@pytest.mark.parametrize("k", [0, 1, 2, 7])
def test_aggregator_count_closed_form(k):
    agg = Aggregator(AggregatorConfig(n_intermediate=k, expansion=1.0), 13, 4)
    assert agg.param_count() == _aggregator_closed_form(k, 13, 4)


@pytest.mark.parametrize("name", [D_AFF_AFF_GAU, D_LOG_AFF_GAU])
def test_named_architecture_aggregator_counts(name):
    cfg = DelayNetConfig.named(name)
    net = build(cfg)
    low_in, high_in = net.low.out_channels, net.high.out_channels
    assert net.agg_low.param_count() == _aggregator_closed_form(cfg.agg_low.n_intermediate, low_in, cfg.Fc)
    assert net.agg_high.param_count() == _aggregator_closed_form(cfg.agg_high.n_intermediate, high_in, cfg.Fy)
    banks = net.low.param_count() + net.temporal.param_count() + net.high.param_count()
    assert banks + net.agg_low.param_count() + net.agg_high.param_count() == net.param_count()


def test_unknown_architecture():
    with pytest.raises(ConfigurationError):
        DelayNetConfig.named("D_Nope")


def test_forward_shape(tiny_config, rng):
    net = build(tiny_config, seed=0)
    out = net(*_inputs(tiny_config, rng))
    assert out.shape == (4, tiny_config.Fy, tiny_config.T)
    assert np.isfinite(out.data).all()


def test_forward_rejects_bad_shapes(tiny_config, rng):
    net = build(tiny_config)
    x1, x2 = _inputs(tiny_config, rng)
    with pytest.raises(ConfigurationError):
        net(Tensor(np.ones((4, tiny_config.F + 1, tiny_config.S))), x2)
    with pytest.raises(ConfigurationError):
        net(x1, Tensor(np.ones((3, tiny_config.C, tiny_config.T))))


def test_build_is_deterministic(tiny_config, rng):
    x1, x2 = _inputs(tiny_config, rng)
    a = build(tiny_config, seed=5)(x1, x2, training=False).data
    b = build(tiny_config, seed=5)(x1, x2, training=False).data
    c = build(tiny_config, seed=6)(x1, x2, training=False).data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_eval_mode_leaves_buffers_alone(tiny_config, rng):
    net = build(tiny_config)
    x1, x2 = _inputs(tiny_config, rng)
    before = net.state_dict()[1]
    first = net(x1, x2, training=False).data
    second = net(x1, x2, training=False).data
    np.testing.assert_array_equal(first, second)
    for name, value in net.state_dict()[1].items():
        np.testing.assert_array_equal(value, before[name])
    net(x1, x2, training=True)
    changed = net.state_dict()[1]
    assert any(not np.array_equal(changed[name], before[name]) for name in before)


def test_all_identity_network_keeps_only_aggregators(tiny_config, rng):
    cfg = tiny_config.with_identity([BlockPosition.LOW, BlockPosition.TEMPORAL, BlockPosition.HIGH])
    net = build(cfg)
    F, Fc, C, Fy = cfg.F, cfg.Fc, cfg.C, cfg.Fy
    agg_low = (F * F + F) + (F * Fc + Fc)
    agg_high = ((Fc + C) ** 2 + Fc + C) + ((Fc + C) * Fy + Fy)
    assert net.param_count() == agg_low + agg_high
    assert net(*_inputs(cfg, rng)).shape == (4, Fy, cfg.T)


def test_validation_reports_fields():
    with pytest.raises(ConfigurationError, match="F"):
        validate_net_config({"F": 0})
    with pytest.raises(ConfigurationError, match="agg_low"):
        build({"Fc": 4, "agg_low": {"out_features": 3}})


def test_gabor_is_not_a_temporal_kind():
    with pytest.raises(ValidationError):
        DelayNetConfig(temporal_kind="gabor")


def test_zero_predictor(rng):
    zero = ZeroPredictor(Fy=2, T=6)
    out = zero(Tensor(rng.normal(size=(3, 4, 10))), Tensor(rng.normal(size=(3, 1, 6))))
    assert out.shape == (3, 2, 6)
    np.testing.assert_array_equal(out.data, 0.0)
    assert zero.eval() is zero


def test_network_gradients(tiny_config, rng):
    net = build(tiny_config, seed=1)
    x1, x2 = _inputs(tiny_config, rng)
    weights = Tensor(rng.normal(size=(4, tiny_config.Fy, tiny_config.T)))
    # subset keeps the finite-difference loop short
    params = [p for name, p in net.named_parameters() if not name.startswith("agg_high")]
    assert grad_check(lambda: (net(x1, x2) * weights).sum(), params) < 1e-3
