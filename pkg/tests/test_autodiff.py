import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp as sp_logsumexp, ndtr

from smmkit import autodiff as ad


def numeric_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def check(build, x, rtol=1e-6):
    v = ad.Var(x)
    ad.backward(build(v))
    expect = numeric_grad(lambda y: float(build(ad.Var(y)).value), x)
    np.testing.assert_allclose(v.grad, expect, rtol=rtol, atol=1e-8)


def test_doc_example():
    x = ad.Var(np.array([1.0, 2.0]))
    ad.backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


@pytest.mark.parametrize("build", [
    lambda v: (v * 3.0 + 1.0).sum(),
    lambda v: (2.0 - v / (v + 5.0)).sum(),
    lambda v: (1.0 / (v + 4.0)).sum(),
    lambda v: ad.exp(v).sum(),
    lambda v: ad.log(v + 4.0).sum(),
    lambda v: ad.square(v).sum(),
    lambda v: ad.normal_cdf(v).sum(),
    lambda v: ad.logsumexp(v, axis=0).sum(),
    lambda v: v[1:].sum() * v[0],
    lambda v: (v.reshape(3, 1) * v.reshape(1, 3)).sum(),
    lambda v: ad.concat([v, ad.square(v)]).sum(),
    lambda v: ((-v) - 1.0).sum() * (v.sum(keepdims=True) * 1.0).sum(),
])
def test_elementary_gradients(build):
    check(build, np.array([0.3, -1.2, 2.0]))


def test_matmul_gradient():
    A = np.arange(6.0).reshape(2, 3) / 7
    check(lambda v: (v @ A.T).sum() * 0.5 + ad.square(v).sum(), np.array([0.2, -0.4, 1.1]))


def test_gauss_logpdf_gradient():
    x = np.array([[0.3, -0.7], [1.5, 0.2]])
    mean, std = np.array([0.1, 0.4]), np.array([0.8, 1.7])
    check(lambda v: ad.gauss_logpdf(v, mean, std).sum(), x)
    check(lambda v: ad.gauss_logpdf(x, v, std).sum(), mean)
    check(lambda v: ad.gauss_logpdf(x, mean, v).sum(), std)


def test_gauss_logpdf_value():
    from scipy.stats import norm
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(ad.gauss_logpdf(x, 0.5, 1.3).value, norm.logpdf(x, 0.5, 1.3), rtol=1e-14)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=6))
def test_logsumexp_value(vals):
    x = np.array(vals)
    assert ad.logsumexp(ad.Var(x), axis=0).value == pytest.approx(sp_logsumexp(x), rel=1e-12, abs=1e-12)


def test_logsumexp_all_neg_inf():
    with np.errstate(divide="ignore"):
        out = ad.logsumexp(ad.Var(np.array([-np.inf, -np.inf])), axis=0)
    assert out.value == -np.inf


def test_normal_cdf_value():
    x = np.array([-5.0, 0.0, 2.0])
    np.testing.assert_array_equal(ad.normal_cdf(ad.Var(x)).value, ndtr(x))


def test_external_node():
    x = ad.Var(np.array([[1.0, 2.0], [3.0, 4.0]]))
    vals = (x.value ** 2).sum(1)
    out = ad.external(vals, x, 2 * x.value)
    ad.backward((out * np.array([1.0, -1.0])).sum())
    np.testing.assert_array_equal(x.grad, [[2.0, 4.0], [-6.0, -8.0]])


def test_shared_subexpression_accumulates():
    x = ad.Var(np.array([2.0]))
    y = x * x
    ad.backward((y + y * x).sum())
    np.testing.assert_allclose(x.grad, [2 * 2 + 3 * 2 ** 2])


def test_constants_get_no_gradient():
    x, c = ad.Var(np.array([1.0])), ad.const(np.array([5.0]))
    ad.backward((x * c).sum())
    assert c.grad is None and x.grad[0] == 5.0


def test_broadcast_gradient_shape():
    a = ad.Var(np.ones((3, 1)))
    b = ad.Var(np.ones(4))
    ad.backward((a * b).sum())
    assert a.grad.shape == (3, 1) and b.grad.shape == (4,)
    np.testing.assert_array_equal(a.grad, 4.0)
    np.testing.assert_array_equal(b.grad, 3.0)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.Var(np.ones(2)))


def test_numpy_left_operand_defers_to_var():
    x = ad.Var(np.array([1.0, 2.0]))
    out = np.array([3.0, 4.0]) * x
    assert isinstance(out, ad.Var)


def test_deep_chain_no_recursion_limit():
    x = ad.Var(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = y * 1.0
    ad.backward(y.sum())
    assert x.grad[0] == 1.0
