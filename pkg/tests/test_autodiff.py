import numpy as np
import pytest

from delaynet.autodiff import (
    Tensor,
    conv1d,
    conv1d_depthwise,
    einsum,
    elementwise,
    grad_check,
    interp1d,
    matmul,
    no_grad,
    parameter,
)
from delaynet.const import Padding
from delaynet.errors import ConfigurationError, NumericError, StateError


def test_product_rule_gradients():
    a = parameter([1.0, 2.0, 3.0])
    b = parameter([4.0, 5.0, 6.0])
    loss = (a * b + a / b).sum()
    loss.backward()
    np.testing.assert_allclose(a.grad, b.data + 1.0 / b.data)
    np.testing.assert_allclose(b.grad, a.data - a.data / b.data**2)


def test_shared_subexpression_accumulates():
    x = parameter(3.0)
    y = x * x
    loss = y + y
    loss.backward()
    assert x.grad == pytest.approx(12.0)


def test_elementwise_grad_check(rng):
    x = parameter(rng.uniform(0.5, 2.0, size=(3, 4)))
    y = parameter(rng.normal(size=(3, 4)))

    def f():
        out = x.log() + x.sqrt() + elementwise("sigmoid", y) + elementwise("sin", y) * elementwise("cos", x)
        out = out + elementwise("atan2", y, x) + elementwise("leaky_relu", y) + (y.square() + 1.0).exp() * 0.01
        return out.sum()

    assert grad_check(f, [x, y]) < 1e-5


def test_matmul_and_einsum_gradients(rng):
    a = parameter(rng.normal(size=(3, 4)))
    b = parameter(rng.normal(size=(4, 2)))
    c = parameter(rng.normal(size=(2, 3, 5)))
    d = parameter(rng.normal(size=(3, 5)))
    assert grad_check(lambda: matmul(a, b).square().sum(), [a, b]) < 1e-6
    assert grad_check(lambda: einsum("bcs,cs->bc", c, d).square().sum(), [c, d]) < 1e-6


def test_einsum_rejects_private_summation():
    with pytest.raises(ConfigurationError):
        einsum("ij,k->k", Tensor(np.ones((2, 2))), Tensor(np.ones(3)))


def test_backward_twice_raises():
    x = parameter(2.0)
    loss = x * x
    loss.backward()
    with pytest.raises(StateError):
        loss.backward()


def test_retain_graph_allows_second_backward():
    x = parameter(2.0)
    loss = x * x
    loss.backward(retain_graph=True)
    loss.backward()
    assert x.grad == pytest.approx(8.0)


def test_backward_needs_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(ConfigurationError):
        (x * 2.0).backward()


def test_shape_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_nan_reports_op_kind():
    with pytest.raises(NumericError) as info:
        elementwise("sqrt", Tensor([1.0, -1.0]))
    assert info.value.op_kind == "sqrt"
    assert info.value.index == (1,)


def test_no_grad_builds_no_graph():
    x = parameter([1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad
    assert y.is_leaf


def test_long_chain_does_not_recurse():
    x = parameter(1.0)
    y = x
    for _ in range(5000):
        y = y + 1.0
    y.backward()
    assert x.grad == pytest.approx(1.0)


def test_depthwise_conv_matches_loop(rng):
    x = rng.normal(size=(2, 3, 10))
    k = rng.normal(size=(3, 5))
    out = conv1d_depthwise(Tensor(x), Tensor(k), Padding.SAME_ZERO).data
    expected = np.zeros_like(x)
    for b in range(2):
        for c in range(3):
            for t in range(10):
                for j in range(5):
                    u = t + j - 2
                    if 0 <= u < 10:
                        expected[b, c, t] += x[b, c, u] * k[c, j]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_depthwise_conv_gradients(rng):
    x = parameter(rng.normal(size=(2, 2, 8)))
    k = parameter(rng.normal(size=(2, 3)))
    assert grad_check(lambda: conv1d_depthwise(x, k).square().sum(), [x, k]) < 1e-6


def test_conv_rejects_oversized_kernel():
    with pytest.raises(ConfigurationError):
        conv1d_depthwise(Tensor(np.ones((1, 1, 3))), Tensor(np.ones((1, 7))))


def test_causal_conv_ignores_future(rng):
    w = Tensor(rng.normal(size=(2, 3, 4)))
    for _ in range(100):
        x = rng.normal(size=(1, 3, 12))
        t = int(rng.integers(0, 11))
        perturbed = x.copy()
        perturbed[:, :, t + 1:] += rng.normal(size=perturbed[:, :, t + 1:].shape)
        a = conv1d(Tensor(x), w).data
        b = conv1d(Tensor(perturbed), w).data
        np.testing.assert_allclose(a[:, :, :t + 1], b[:, :, :t + 1], atol=1e-12)


def test_interp1d_reads_integers_exactly_and_zero_outside(rng):
    values = rng.normal(size=(2, 1, 6))
    coords = np.array([[0.0, 2.0, 5.0, -1.5, 6.5]])
    out = interp1d(Tensor(values), Tensor(coords)).data
    np.testing.assert_array_equal(out[:, 0, :3], values[:, 0, [0, 2, 5]])
    np.testing.assert_array_equal(out[:, 0, 3:], 0.0)


def test_interp1d_gradients(rng):
    values = parameter(rng.normal(size=(2, 2, 7)))
    coords = parameter(rng.uniform(0.2, 5.8, size=(2, 4)))
    assert grad_check(lambda: interp1d(values, coords).square().sum(), [values, coords]) < 1e-5


def test_grad_check_rejects_bad_step():
    x = parameter(1.0)
    with pytest.raises(ConfigurationError):
        grad_check(lambda: x * x, [x], h=1e-2)


def test_grad_check_flags_wrong_gradient():
    x = parameter([0.3, 0.7])

    def f():
        # detach() hides one factor from the graph
        return (x * x.detach()).sum()

    assert grad_check(f, [x]) > 0.1
