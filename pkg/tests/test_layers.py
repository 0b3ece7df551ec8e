import numpy as np
import pytest

from delaynet.autodiff import Tensor, grad_check, parameter
from delaynet.const import FilterFamily, FilterMode, NormKind, TemporalKind
from delaynet.errors import ConfigurationError, StateError
from delaynet.kernels import KernelParams
from delaynet.layers import (
    AffineNorm,
    Aggregator,
    BatchNorm,
    CausalConv,
    FilterBank,
    TemporalAggregator,
    filter_bank_forward,
    make_norm,
    temporal_aggregate,
)
from delaynet.models import AggregatorConfig, FilterBankConfig


def test_identity_bank_passes_input_through(rng):
    x = Tensor(rng.normal(size=(2, 3, 10)))
    bank = FilterBank(FilterBankConfig(family=FilterFamily.IDENTITY), F=3, S=10)
    assert bank(x) is x
    assert bank.out_channels == 3
    assert bank.param_count() == 0


def test_per_cell_affine_neutral_parameters_crop_the_tail(rng):
    F, S, T = 3, 12, 5
    x = rng.normal(size=(4, F, S))
    cfg = FilterBankConfig(family=FilterFamily.AFFINE, mode=FilterMode.PER_CELL, out_time=T, apply_batchnorm=False)
    grid = (F, 1, T)
    params = KernelParams(FilterFamily.AFFINE, {"s": parameter(np.zeros(grid)), "t": parameter(np.zeros(grid))}, grid)
    out = FilterBank(cfg, F, S, params=params)(Tensor(x)).data
    np.testing.assert_allclose(out, x[:, :, S - T:], rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "family, mode, channels, params",
    [
        (FilterFamily.GAUSS, FilterMode.PER_FEATURE, 10, 10 * 2 + 10 * 2),
        (FilterFamily.GABOR, FilterMode.PER_FEATURE, 20, 10 * 2 + 20 * 2),
        (FilterFamily.GAUSS, FilterMode.PER_CELL, 10, 100 * 2 + 100 * 2),
        (FilterFamily.AFFINE, FilterMode.PER_CELL, 10, 100 * 2 + 100 * 2),
    ],
)
def test_bank_channel_and_parameter_counts(family, mode, channels, params, rng):
    F, n, S, T = 5, 2, 20, 10
    cfg = FilterBankConfig(family=family, n_filters=n, mode=mode, out_time=T if mode == FilterMode.PER_CELL else None)
    bank = FilterBank(cfg, F, S, seed=1)
    out = bank(Tensor(rng.normal(size=(3, F, S))))
    assert bank.out_channels == channels
    assert out.shape == (3, channels, T if mode == FilterMode.PER_CELL else S)
    assert bank.param_count() == params


def test_per_feature_channels_are_feature_major(rng):
    F, n, S = 2, 3, 16
    cfg = FilterBankConfig(family=FilterFamily.GAUSS, n_filters=n, apply_batchnorm=False)
    bank = FilterBank(cfg, F, S, seed=2)
    x = np.zeros((1, F, S))
    x[0, 1, 8] = 1.0
    out = bank(Tensor(x)).data
    assert np.all(out[0, :n] == 0.0)
    assert np.all(out[0, n:].max(axis=1) > 0.0)


def test_gabor_bank_blocks(rng):
    cfg = FilterBankConfig(family=FilterFamily.GABOR, n_filters=2, apply_batchnorm=False)
    out = FilterBank(cfg, 2, 16, seed=4)(Tensor(rng.normal(size=(2, 2, 16)))).data
    assert np.all(out[:, :4] > 0.0)
    assert np.all(np.abs(out[:, 4:]) <= np.pi)


def test_bank_configuration_errors():
    with pytest.raises(ConfigurationError):
        FilterBank(FilterBankConfig(family=FilterFamily.GAUSS, mode=FilterMode.PER_CELL), 2, 10)
    with pytest.raises(ConfigurationError):
        FilterBank(FilterBankConfig(family=FilterFamily.GAUSS, kernel_support=4), 2, 10)
    with pytest.raises(ConfigurationError):
        FilterBank(FilterBankConfig(family=FilterFamily.GAUSS), 2, 10)(Tensor(np.ones((1, 3, 10))))


def test_bank_gradients(rng):
    cfg = FilterBankConfig(family=FilterFamily.LOGNORMAL, n_filters=2, mode=FilterMode.PER_CELL, out_time=4, apply_batchnorm=False)
    bank = FilterBank(cfg, 2, 10, seed=6)
    x = Tensor(rng.normal(size=(2, 2, 10)))
    w = Tensor(rng.normal(size=(2, 4, 4)))
    assert grad_check(lambda: (bank(x) * w).sum(), bank.parameters()) < 1e-4


def test_batchnorm_normalizes_in_training(rng):
    bn = BatchNorm((3,), (0, 2))
    x = Tensor(rng.normal(3.0, 2.0, size=(8, 3, 10)))
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-3)


def test_batchnorm_running_statistics(rng):
    bn = BatchNorm((2,), (0, 2), momentum=0.1)
    x = rng.normal(1.0, 3.0, size=(6, 2, 5))
    bn(Tensor(x))
    n = 6 * 5
    np.testing.assert_allclose(bn.buffer("running_mean"), 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(bn.buffer("running_var"), 0.9 + 0.1 * x.var(axis=(0, 2)) * n / (n - 1))

    bn.eval()
    out = bn(Tensor(x)).data
    expected = (x - bn.buffer("running_mean")[None, :, None]) / np.sqrt(bn.buffer("running_var")[None, :, None] + bn.eps)
    np.testing.assert_allclose(out, expected)


@pytest.mark.parametrize("stat_shape, axes", [((3,), (0, 2)), ((3, 10), (0,))])
def test_batchnorm_running_statistics_converge_to_the_batch(stat_shape, axes, rng):
    bn = BatchNorm(stat_shape, axes, momentum=0.1)
    x = rng.normal(2.0, 0.5, size=(40, 3, 10))
    for _ in range(250):
        train_out = bn(Tensor(x)).data
    n = int(np.prod([x.shape[a] for a in axes]))
    mean = x.mean(axis=axes).reshape(stat_shape)
    unbiased = x.var(axis=axes).reshape(stat_shape) * n / (n - 1)
    np.testing.assert_allclose(bn.buffer("running_mean"), mean, rtol=1e-8)
    np.testing.assert_allclose(bn.buffer("running_var"), unbiased, rtol=1e-8)

    bn.eval()
    eval_out = bn(Tensor(x)).data
    np.testing.assert_allclose(eval_out * np.sqrt(n / (n - 1)), train_out, atol=1e-4)


def test_batchnorm_needs_two_values_per_statistic():
    bn = BatchNorm((2, 4), (0,))
    with pytest.raises(ConfigurationError):
        bn(Tensor(np.ones((1, 2, 4))))
    bn.eval()
    assert bn(Tensor(np.ones((1, 2, 4)))).shape == (1, 2, 4)


def test_batchnorm_gradients(rng):
    bn = BatchNorm((2,), (0, 2))
    x = parameter(rng.normal(size=(4, 2, 3)))
    w = Tensor(rng.normal(size=(4, 2, 3)))
    assert grad_check(lambda: (bn(x) * w).sum(), [x] + bn.parameters()) < 1e-4


def test_affine_norm_starts_as_identity(rng):
    norm = make_norm(NormKind.AFFINE, (3,), (0, 2))
    assert isinstance(norm, AffineNorm)
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(norm(Tensor(x)).data, x)
    assert norm.param_count() == 6


def test_state_dict_returns_copies():
    bn = BatchNorm((2,), (0, 2))
    params, buffers = bn.state_dict()
    params["gamma"][:] = 7.0
    buffers["running_mean"][:] = 7.0
    np.testing.assert_array_equal(bn.gamma.data, 1.0)
    np.testing.assert_array_equal(bn.buffer("running_mean"), 0.0)


def test_load_state_dict_round_trip_and_mismatch(rng):
    a = CausalConv(3, 3, seed=1)
    b = CausalConv(3, 3, seed=2)
    b.load_state_dict(*a.state_dict())
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    with pytest.raises(StateError):
        b.load_state_dict({"other": np.zeros(1)})
    with pytest.raises(StateError):
        b.load_state_dict({"weight": np.zeros((1, 1, 1))})


def test_causal_conv_module_ignores_future(rng):
    conv = CausalConv(2, 3, kernel_size=4, seed=0)
    x = rng.normal(size=(1, 2, 10))
    perturbed = x.copy()
    perturbed[:, :, 6:] = 0.0
    a, b = conv(Tensor(x)).data, conv(Tensor(perturbed)).data
    assert a.shape == (1, 3, 10)
    np.testing.assert_allclose(a[:, :, :6], b[:, :, :6], atol=1e-12)


def test_aggregator_acts_per_time_step(rng):
    agg = Aggregator(AggregatorConfig(n_intermediate=1, expansion=1.5), in_features=4, out_features=3, seed=0)
    assert agg.widths == [4, 6, 3]
    x = rng.normal(size=(2, 4, 7))
    out = agg(Tensor(x)).data
    assert out.shape == (2, 3, 7)
    changed = x.copy()
    changed[:, :, 3] += 1.0
    out2 = agg(Tensor(changed)).data
    np.testing.assert_allclose(np.delete(out, 3, axis=2), np.delete(out2, 3, axis=2), atol=1e-12)
    with pytest.raises(ConfigurationError):
        agg(Tensor(np.ones((1, 5, 7))))


def test_aggregator_without_hidden_layers():
    agg = Aggregator(AggregatorConfig(n_intermediate=0), in_features=4, out_features=2)
    assert agg.widths == [4, 2]
    assert agg.param_count() == 4 * 2 + 2


@pytest.mark.parametrize("kind", list(TemporalKind))
def test_temporal_aggregator_shapes(kind, rng):
    agg = TemporalAggregator(kind, channels=3, S=12, T=5, seed=0)
    out = agg(Tensor(rng.normal(size=(4, 3, 12))))
    assert out.shape == (4, 3, 5)


def test_temporal_aggregator_rejects_bad_settings():
    with pytest.raises(ConfigurationError):
        TemporalAggregator(TemporalKind.IDENTITY, channels=2, S=5, T=8)
    with pytest.raises(ConfigurationError):
        TemporalAggregator("gabor", channels=2, S=12, T=5)
    with pytest.raises(ConfigurationError):
        temporal_aggregate("spline", None, Tensor(np.ones((1, 2, 5))), 3)


def test_functional_temporal_identity_crops(rng):
    x = rng.normal(size=(2, 3, 9))
    np.testing.assert_array_equal(temporal_aggregate(TemporalKind.IDENTITY, None, Tensor(x), 4).data, x[:, :, 5:])


def test_functional_bank_keeps_statistics_only_with_an_instance(rng):
    F, S = 2, 9
    cfg = FilterBankConfig(family=FilterFamily.GAUSS, n_filters=2)
    x = Tensor(rng.normal(1.0, 2.0, size=(6, F, S)))
    bank = FilterBank(cfg, F, S, seed=4)

    stateless = filter_bank_forward(cfg, bank.params, x).data
    np.testing.assert_array_equal(bank.norm.buffer("running_mean"), np.zeros(F * 2))

    kept = filter_bank_forward(cfg, None, x, bank=bank).data
    np.testing.assert_allclose(kept, stateless, rtol=0, atol=1e-12)
    first = bank.norm.buffer("running_mean").copy()
    assert not np.allclose(first, 0.0)
    filter_bank_forward(cfg, bank.params, x, bank=bank)
    np.testing.assert_allclose(bank.norm.buffer("running_mean"), 1.9 * first)

    with pytest.raises(ConfigurationError):
        filter_bank_forward(cfg.model_copy(update={"n_filters": 3}), None, x, bank=bank)
    other = FilterBank(cfg, F, S, seed=5)
    with pytest.raises(ConfigurationError):
        filter_bank_forward(cfg, other.params, x, bank=bank)
