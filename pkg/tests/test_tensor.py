"""Autodiff engine checks: hand examples, finite-difference oracle, graph rules."""

import math

import numpy as np
import pytest

from chemssm import tensor as T
from chemssm.tensor import NumericsError, Tensor, backward_grad

from helpers import check_gradients, finite_difference_grad, relative_error


def test_forward_hand_values():
    x = Tensor(3.0)
    assert (x * x).item() == 9.0
    assert abs(T.softplus(Tensor(0.0)).item() - math.log(2.0)) < 1e-12
    assert T.silu(Tensor(0.0)).item() == 0.0
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.reciprocal(Tensor(4.0)).item() == 0.25


def test_backward_hand_values():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    y.backward()
    assert x.grad == 6.0

    z = Tensor(0.0, requires_grad=True)
    T.silu(z).backward()
    assert abs(z.grad - 0.5) < 1e-12


def test_matmul_hand_chain_rule():
    # y = sum(A @ W); dy/dA = ones @ W.T, dy/dW = A.T @ ones
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    w = np.array([[5.0, 6.0], [7.0, 8.0]])
    ta = Tensor(a, requires_grad=True)
    tw = Tensor(w, requires_grad=True)
    out = T.matmul(ta, tw).sum()
    out.backward()
    ones = np.ones((2, 2))
    assert np.array_equal(ta.grad, ones @ w.T)
    assert np.array_equal(tw.grad, a.T @ ones)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    cases = {
        "add": lambda a, b: (a + b).sum(),
        "sub": lambda a, b: (a - b).sum(),
        "mul": lambda a, b: (a * b * a).sum(),
        "div": lambda a, b: (a / (b * b + 2.0)).sum(),
        "exp": lambda a, b: (T.exp(a) * b).sum(),
        "softplus": lambda a, b: (T.softplus(a) * b).mean(),
        "sigmoid": lambda a, b: (T.sigmoid(a * b)).sum(),
        "silu": lambda a, b: (T.silu(a + b)).sum(),
        "mean": lambda a, b: (a * b).mean(axis=1).sum(),
    }
    for name, fn in cases.items():
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
        err = check_gradients(fn, arrays)
        assert err < 1e-6, f"{name}: rel err {err}"


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(12)
    arrays = [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))]
    err = check_gradients(lambda a, w: T.matmul(a, w).sum(), arrays)
    assert err < 1e-6


def test_reduction_and_slicing_gradients():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(3, 5))

    err = check_gradients(lambda a: T.narrow(a, 1, 1, 3).sum(), [x])
    assert err < 1e-6

    err = check_gradients(
        lambda a, b: T.concat([a, b], axis=1).mean(), [x, rng.normal(size=(3, 2))]
    )
    assert err < 1e-6

    err = check_gradients(lambda a: a.sum(axis=0, keepdims=True).mean(), [x])
    assert err < 1e-6


def test_conv_and_norm_gradients():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 6, 3))
    kern = rng.normal(size=(4, 3))
    bias = rng.normal(size=(3,))
    w = rng.normal(size=(3,)) + 1.5

    err = check_gradients(
        lambda a, k, b: T.causal_conv1d(a, k, b).sum(), [x, kern, bias]
    )
    assert err < 1e-6

    err = check_gradients(lambda a, ww: (T.rms_norm(a, ww) * a).sum(), [x, w])
    assert err < 1e-5

    err = check_gradients(lambda a, ww: (T.layer_norm(a, ww) * a).sum(), [x, w])
    assert err < 1e-5


def test_causal_conv_is_causal():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(1, 8, 2))
    kern = rng.normal(size=(4, 2))
    base = T.causal_conv1d(Tensor(x), Tensor(kern)).numpy()
    x2 = x.copy()
    x2[0, 5, :] += 10.0
    bumped = T.causal_conv1d(Tensor(x2), Tensor(kern)).numpy()
    assert np.array_equal(base[:, :5, :], bumped[:, :5, :])
    assert not np.array_equal(base[:, 5:, :], bumped[:, 5:, :])


def test_suffix_broadcasting():
    a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    out = (a * b).sum()
    out.backward()
    assert a.grad.shape == (2, 3, 4)
    assert b.grad.shape == (4,)
    assert np.array_equal(b.grad, np.full(4, 6.0))  # summed over 2*3 leading entries

    with pytest.raises(ValueError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        T.mul(Tensor(np.ones((4, 3))), Tensor(np.ones((4,))))  # not a suffix


def test_backward_is_linear_in_output_grad():
    # grad of (f + g) equals grad f + grad g to machine precision
    rng = np.random.default_rng(16)
    x = rng.normal(size=(4, 4))

    def grad_of(fn):
        t = Tensor(x, requires_grad=True)
        return backward_grad(fn(t), [t])[0]

    gf = grad_of(lambda t: T.exp(t).sum())
    gg = grad_of(lambda t: (t * t).sum())
    gsum = grad_of(lambda t: T.exp(t).sum() + (t * t).sum())
    assert np.max(np.abs(gsum - (gf + gg))) < 1e-12


def test_fanout_accumulation():
    x = Tensor(2.0, requires_grad=True)
    y = x * x + x * 3.0  # dy/dx = 2x + 3 = 7
    y.backward()
    assert x.grad == 7.0


def test_backward_determinism():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(5, 5))

    def run():
        t = Tensor(x, requires_grad=True)
        out = (T.silu(T.matmul(t, t.detach())) * t).mean()
        return backward_grad(out, [t])[0]

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)


def test_non_finite_detection():
    with np.errstate(over="ignore", divide="ignore"):
        with pytest.raises(NumericsError):
            T.exp(Tensor(1000.0))
        with pytest.raises(NumericsError):
            T.reciprocal(Tensor(0.0))


def test_no_grad_suppresses_graph():
    x = Tensor(1.0, requires_grad=True)
    with T.no_grad():
        y = x * x
    assert not y.requires_grad
    assert y._backward is None


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * x).backward()


def test_finite_difference_oracle_self_check():
    # The oracle itself on a known derivative: d/dx sin(x) = cos(x)
    x = np.array([0.3, -1.2])
    g = finite_difference_grad(lambda a: float(np.sin(a).sum()), [x], 0)
    assert relative_error(g, np.cos(x)) < 1e-9
