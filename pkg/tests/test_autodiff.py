"""Reverse-mode autodiff checked against central finite differences."""

import numpy as np
import pytest

from myofiber.seqmodel.autodiff import Tensor, masked_softmax, softmax

RNG = np.random.default_rng(123)
H = 1e-6


def _num_grad(fn, x, h=H):
    """Central-difference gradient of a scalar-valued fn at array x."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def _check(build, shape, atol=1e-7):
    """build maps a param Tensor to a scalar Tensor; compare both gradients."""
    x0 = RNG.normal(size=shape)

    def numeric(arr):
        return float(build(Tensor(arr.copy())).data)

    p = Tensor.param(x0.copy())
    out = build(p)
    out.backward()
    num = _num_grad(numeric, x0.copy())
    np.testing.assert_allclose(p.grad, num, atol=atol)


def test_arithmetic_gradients():
    y = Tensor(RNG.normal(size=(3, 4)))
    _check(lambda x: (x + y).sum(), (3, 4))
    _check(lambda x: (x * y).sum(), (3, 4))
    _check(lambda x: (x - y).sum(), (3, 4))
    _check(lambda x: (x / (y * y + 1.0)).sum(), (3, 4))
    _check(lambda x: (x**3).sum(), (3, 4))
    _check(lambda x: (-x).sum(), (3, 4))
    _check(lambda x: (2.0 - x).sum(), (3, 4))
    _check(lambda x: (1.0 / (x * x + 2.0)).sum(), (3, 4))


def test_broadcasting_gradients():
    y = Tensor(RNG.normal(size=(4,)))
    _check(lambda x: (x + y).sum(), (3, 4))  # row broadcast
    _check(lambda x: (x * y).sum(), (3, 4))
    col = Tensor(RNG.normal(size=(3, 1)))
    _check(lambda x: (x * col).sum(), (3, 4))
    _check(lambda x: (x + Tensor(2.5)).sum(), (2, 3, 4))  # scalar broadcast
    # gradient of the broadcast side sums correctly
    b = Tensor.param(RNG.normal(size=(4,)))
    out = (Tensor(np.ones((5, 4))) * b).sum()
    out.backward()
    np.testing.assert_allclose(b.grad, 5.0 * np.ones(4))


def test_matmul_gradients():
    y = Tensor(RNG.normal(size=(4, 5)))
    _check(lambda x: (x @ y).sum(), (3, 4))
    x2 = Tensor(RNG.normal(size=(3, 4)))
    _check(lambda w: (x2 @ w).sum(), (4, 5))
    # batched 4-D matmul as used by multi-head attention
    k = Tensor(RNG.normal(size=(2, 3, 6, 5)))
    _check(lambda q: (q @ k).sum(), (2, 3, 4, 6))
    _check(lambda q: ((q @ k) * (q @ k)).sum(), (2, 3, 4, 6))


def test_activation_gradients():
    _check(lambda x: x.exp().sum(), (3, 4))
    _check(lambda x: (x * x + 1.0).log().sum(), (3, 4))
    _check(lambda x: (x * x + 1.0).sqrt().sum(), (3, 4))
    _check(lambda x: x.tanh().sum(), (3, 4))
    _check(lambda x: x.sigmoid().sum(), (3, 4))
    _check(lambda x: (x + 0.05).relu().sum(), (3, 4), atol=1e-6)


def test_reduction_and_shape_gradients():
    _check(lambda x: x.sum(axis=1).sum(), (3, 4))
    _check(lambda x: (x.sum(axis=0, keepdims=True) ** 2).sum(), (3, 4))
    _check(lambda x: (x.mean(axis=-1, keepdims=True) ** 2).sum(), (3, 4))
    _check(lambda x: (x.reshape(12) ** 2).sum(), (3, 4))
    w = Tensor(RNG.normal(size=(3, 2)))
    _check(lambda x: (x.transpose(1, 0) @ w).sum(), (3, 4))
    _check(lambda x: (x[:, 1:3] ** 2).sum(), (3, 4))
    _check(lambda x: (x[1] ** 2).sum(), (3, 4))


def test_concat_gradient():
    y = Tensor(RNG.normal(size=(3, 2)))
    _check(lambda x: (Tensor.concat([x, y], axis=1) ** 2).sum(), (3, 4))


def test_grad_accumulates_over_reuse():
    p = Tensor.param(np.array([2.0]))
    out = (p * p + p * 3.0).sum()
    out.backward()
    np.testing.assert_allclose(p.grad, [7.0])  # 2x + 3 at x=2


def test_backward_requires_scalar():
    p = Tensor.param(np.ones((2, 2)))
    with pytest.raises(ValueError, match="scalar"):
        (p * 2.0).backward()


def test_softmax_rows_normalized():
    x = Tensor(RNG.normal(size=(4, 6)) * 10)
    s = softmax(x)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    w = Tensor(RNG.normal(size=(4, 6)))
    _check(lambda t: (softmax(t) * w).sum(), (4, 6))


def test_masked_softmax_exact_zero_on_invalid():
    x = Tensor(RNG.normal(size=(2, 5)) * 50)
    valid = np.array([[True, True, False, True, False],
                      [False, True, True, True, True]])
    s = masked_softmax(x, valid)
    assert np.all(s.data[~valid] == 0.0)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_all_invalid_row_is_zero():
    x = Tensor(np.ones((1, 4)))
    s = masked_softmax(x, np.zeros((1, 4), dtype=bool))
    np.testing.assert_array_equal(s.data, 0.0)


def test_masked_softmax_gradient_ignores_invalid_logits():
    valid = np.array([[True, True, False, True]])
    weights = RNG.normal(size=(1, 4))

    def loss(arr):
        return float((masked_softmax(Tensor(arr.copy()), valid) * Tensor(weights)).sum().data)

    x0 = RNG.normal(size=(1, 4))
    p = Tensor.param(x0.copy())
    (masked_softmax(p, valid) * Tensor(weights)).sum().backward()
    np.testing.assert_allclose(p.grad, _num_grad(loss, x0.copy()), atol=1e-7)
    assert p.grad[0, 2] == pytest.approx(0.0, abs=1e-12)
