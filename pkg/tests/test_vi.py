import numpy as np
import pytest

from conftest import random_smm, ring_model
from smmkit.exceptions import GradientAtZeroError, InputError, TrainingAbortedError
from smmkit.mixture import AdditiveMixture, ComplexSmm
from smmkit.rng import RngState
from smmkit.samplers import rejection_sample_exact_n
from smmkit.targets import Target, make_catalog_target, smm_target
from smmkit.vi import (
    AdamState,
    ParamVector,
    TrainConfig,
    adam_step,
    delta_vi_objective,
    grad_log_q,
    init_params,
    rloo_gradient,
    selbo,
    train,
)


def fd(fn, theta, h=1e-6):
    out = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# -- parameter container ----------------------------------------------------------

def test_param_roundtrip(gen):
    m = random_smm(gen, 3, 2)
    p = ParamVector.from_model(m)
    back = p.to_model()
    np.testing.assert_allclose(back.stddevs, m.stddevs, rtol=1e-14)
    np.testing.assert_array_equal(back.weights, m.weights)
    assert p.with_flat(p.flat()).flat().tobytes() == p.flat().tobytes()


def test_weight_mask():
    p = init_params("squared", 2, 3, 0)
    mask = p.weight_mask()
    assert mask.sum() == 4 and mask.size == 2 * 3 * 2 + 4 and np.all(mask[-4:])
    g = init_params("gmm", 2, 3, 0)
    assert g.weight_mask().sum() == 2 and g.kind == "gmm"


def test_init_ranges():
    p = init_params("squared", 50, 2, 1)
    assert np.all(np.abs(p.means) <= 1.0)
    s = np.exp(p.log_stddevs)
    assert np.all((s >= 1.0) & (s <= 3.0))
    assert np.all((p.weights_re >= 0) & (p.weights_re <= 1))
    assert init_params("squared", 3, 2, 7).flat().tobytes() == init_params("squared", 3, 2, 7).flat().tobytes()


# -- gradients --------------------------------------------------------------------

def test_grad_log_q_finite_differences(gen):
    for _ in range(15):
        m = random_smm(gen, 3, 2)
        x = gen.normal(0, 1, 2)
        p = ParamVector.from_model(m)
        g = grad_log_q(m, x).flat()
        num = fd(lambda th: float(p.with_flat(th).to_model().log_density(x)), p.flat(), h=1e-5)
        assert rel_err(g, num) < 1e-6


def test_grad_log_q_gmm():
    g = np.random.default_rng(0)
    mix = AdditiveMixture([0.3, 0.7], g.normal(size=(2, 2)), g.uniform(0.5, 2, (2, 2)))
    p = ParamVector.from_model(mix)
    x = np.array([0.2, -0.3])
    num = fd(lambda th: float(p.with_flat(th).to_model().log_density(x)), p.flat())
    assert rel_err(grad_log_q(mix, x).flat(), num) < 1e-5


def test_grad_log_q_weighted_sum(gen):
    m = random_smm(gen, 2, 2)
    X = gen.normal(size=(3, 2))
    w = np.array([0.5, -1.0, 2.0])
    total = sum(wi * grad_log_q(m, x).flat() for wi, x in zip(w, X))
    np.testing.assert_allclose(grad_log_q(m, X, w).flat(), total, rtol=1e-12, atol=1e-14)


def test_grad_log_q_at_zero():
    m = ComplexSmm([1.0, -1.0], [[0.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(GradientAtZeroError):
        grad_log_q(m, [0.5])


def test_delta_vi_finite_differences(gen):
    target = make_catalog_target("ring")
    for _ in range(8):
        m = random_smm(gen, 2, 2)
        p = ParamVector.from_model(m)
        z = gen.standard_normal((3, 20, 2))
        val, g = delta_vi_objective(m, target, 60, z=z)
        num = fd(lambda th: delta_vi_objective(p.with_flat(th), target, 60, z=z)[0], p.flat())
        assert rel_err(g.flat(), num) < 1e-5


def test_selbo_finite_differences():
    g = np.random.default_rng(1)
    target = make_catalog_target("gmm3")
    mix = AdditiveMixture([0.4, 0.6], g.normal(size=(2, 2)), g.uniform(0.5, 2, (2, 2)))
    p = ParamVector.from_model(mix)
    z = g.standard_normal((2, 30, 2))
    _, grad = selbo(mix, target, 60, z=z)
    num = fd(lambda th: selbo(p.with_flat(th), target, 60, z=z)[0], p.flat())
    assert rel_err(grad.flat(), num) < 1e-5


def test_delta_vi_unbiased_for_rkl():
    # target equal to the model: reverse KL is zero up to the target's log normalizer
    m = ring_model()
    t = smm_target("self", m)
    vals = [delta_vi_objective(m, t, 3000, RngState(s))[0] for s in range(5)]
    np.testing.assert_allclose(vals, -t.exact_log_Z, atol=1e-10)


def test_delta_vi_budget_too_small():
    with pytest.raises(InputError):
        delta_vi_objective(ring_model(), make_catalog_target("ring"), 2, RngState(0))


def test_rloo_invariant_to_log_constant():
    m = random_smm(np.random.default_rng(3), 2, 2)
    t = make_catalog_target("ring")
    X = rejection_sample_exact_n(m, 500, 10 ** 6, RngState(0)).points
    l1, g1 = rloo_gradient(m, t, X)
    l2, g2 = rloo_gradient(m, t.scaled(37.5), X)
    assert l2 == pytest.approx(l1 - 37.5, rel=1e-12)
    np.testing.assert_allclose(g2.flat(), g1.flat(), rtol=1e-9, atol=1e-12)


def test_rloo_matches_explicit_formula():
    m = random_smm(np.random.default_rng(4), 2, 2)
    t = make_catalog_target("ring")
    X = rejection_sample_exact_n(m, 20, 10 ** 5, RngState(1)).points
    ell = m.log_density(X) - t.log_prob(X)
    S = len(ell)
    c = ell - (ell.sum() - ell) / (S - 1)
    expect = sum(ci / S * grad_log_q(m, x).flat() for ci, x in zip(c, X))
    _, g = rloo_gradient(m, t, X)
    np.testing.assert_allclose(g.flat(), expect, rtol=1e-8, atol=1e-12)


def test_rloo_bitwise_invariant_for_exact_shift():
    def dyadic(X):
        return np.round(-0.05 * np.sum(X * X, axis=1) * 2 ** 20) / 2 ** 20

    m = random_smm(np.random.default_rng(5), 2, 2)
    X = rejection_sample_exact_n(m, 300, 10 ** 6, RngState(3)).points
    g0 = rloo_gradient(m, Target("a", 2, dyadic), X)[1].flat()
    g1 = rloo_gradient(m, Target("b", 2, lambda X: dyadic(X) + 8.0), X)[1].flat()
    assert g0.tobytes() == g1.tobytes()


def test_rloo_expectation_matches_rkl_derivative():
    # 1D: reverse KL by quadrature, differentiated numerically with common grids
    xs = np.linspace(-15, 15, 6001)
    t = Target("n", 1, lambda X: -0.5 * ((X[:, 0] - 0.5) / 1.3) ** 2, lambda X: -(X - 0.5) / 1.3 ** 2)
    m = ComplexSmm([1.0, -0.3 + 0.2j], [[0.0], [0.4]], [[1.0], [0.7]])
    p = ParamVector.from_model(m)

    def rkl(theta):
        q = p.with_flat(theta).to_model()
        lq = q.log_density(xs[:, None])
        return np.trapezoid(np.exp(lq) * (lq - t.log_prob(xs[:, None])), xs)

    exact = fd(rkl, p.flat(), h=1e-5)
    grads = np.array([rloo_gradient(m, t, rejection_sample_exact_n(m, 500, 10 ** 6, RngState(s)))[1].flat()
                      for s in range(200)])
    mean, se = grads.mean(0), grads.std(0, ddof=1) / np.sqrt(len(grads))
    assert np.all(np.abs(mean - exact) < 4 * se + 1e-6)


def test_selbo_equals_delta_vi_for_positive_model():
    m = ComplexSmm([1.0, 0.5], [[0.0, 0.5], [1.0, -0.5]], [[1.0, 0.8], [0.6, 1.2]])
    sm = m.expansion
    assert not sm.has_negatives
    gmm = AdditiveMixture(sm.q_plus.coeffs, sm.q_plus.means, sm.q_plus.stddevs)
    t = make_catalog_target("gmm3")
    z = np.random.default_rng(0).standard_normal((sm.n_components, 40, 2))
    a, _ = delta_vi_objective(m, t, 0, z=z)
    b, _ = selbo(gmm, t, 0, z=z)
    assert a == pytest.approx(b, abs=1e-12)


def test_rloo_needs_two_samples():
    with pytest.raises(InputError):
        rloo_gradient(ring_model(), make_catalog_target("ring"), np.zeros((1, 2)))


def test_rloo_zero_at_optimum():
    m = ring_model()
    t = make_catalog_target("ring")
    X = rejection_sample_exact_n(m, 200, 10 ** 6, RngState(2)).points
    _, g = rloo_gradient(m, t, X)
    assert np.max(np.abs(g.flat())) < 1e-9


# -- Adam ---------------------------------------------------------------------------

def test_adam_first_step_is_lr_sign():
    p = init_params("squared", 2, 2, 0)
    g = p.with_flat(np.linspace(-1, 1, p.flat().size) + 0.01)
    state = AdamState.zeros(p.flat().size)
    new = adam_step(p, g, state, lr=0.1)
    np.testing.assert_allclose(p.flat() - new.flat(), 0.1 * np.sign(g.flat()), rtol=1e-6)


def test_adam_weight_decay_only_on_weights():
    p = init_params("squared", 2, 2, 0)
    zero = p.zeros_like()
    new = adam_step(p, zero, AdamState.zeros(p.flat().size), lr=0.1, weight_decay=0.5)
    mask = p.weight_mask()
    np.testing.assert_array_equal(new.flat()[~mask], p.flat()[~mask])
    np.testing.assert_allclose(new.flat()[mask], p.flat()[mask] * (1 - 0.05))


def test_adam_rejects_nonfinite():
    p = init_params("squared", 2, 2, 0)
    bad = p.with_flat(np.full(p.flat().size, np.nan))
    state = AdamState.zeros(p.flat().size)
    assert adam_step(p, bad, state, 0.1) is p
    assert state.n_rejected == 1 and state.t == 0


def test_adam_converges_on_quadratic():
    p = ParamVector(np.array([[3.0]]), np.array([[0.0]]), np.array([1.0]), np.array([-2.0]))
    state = AdamState.zeros(4)
    for _ in range(5000):
        p = adam_step(p, p.with_flat(2 * p.flat()), state, 0.01)
    assert np.max(np.abs(p.flat())) < 1e-4


def test_adam_constant_gradient_limit():
    p = init_params("squared", 1, 1, 0)
    g = p.with_flat(np.array([0.3, -2.0, 5.0, -1e-3]))
    state = AdamState.zeros(4)
    start = p.flat()
    for _ in range(200):
        p = adam_step(p, g, state, 0.01)
    np.testing.assert_allclose(p.flat() - start, -np.sign(g.flat()) * 0.01 * 200, rtol=1e-4)


# -- training -----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(objective="nope")
    with pytest.raises(ValueError):
        TrainConfig(S=1)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_kind_mismatch():
    with pytest.raises(ValueError):
        train(init_params("gmm", 2, 2, 0), make_catalog_target("ring"), TrainConfig(max_steps=1))


def flat_target(dim):
    return Target("flat", dim, lambda X: np.zeros(len(X)), lambda X: np.zeros_like(X))


def test_patience_stops_at_self_target():
    # the target equals the model: every step sees the same loss, -log Z
    m = ComplexSmm([1.0, 0.4j], [[0.0], [1.0]], [[1.0], [0.5]])
    t = smm_target("self", m)
    r = train(m, t, TrainConfig(objective="rloo_rejection", S=50, max_steps=100, patience=1, reselect_reps=1))
    assert r.stopped_at <= 2
    r = train(m, t, TrainConfig(objective="rloo_rejection", S=200, max_steps=100, patience=20, reselect_reps=1))
    # Adam normalises the near-zero gradient, so parameters drift by about lr per step
    assert r.stopped_at < 100
    np.testing.assert_allclose(r.losses[:5], -t.exact_log_Z, atol=1e-3)


def test_training_improves_ring():
    t = make_catalog_target("ring")
    cfg = TrainConfig(objective="rloo_rejection", S=1000, max_steps=60, patience=None, reselect_reps=2, seed=3)
    r = train(init_params("squared", 2, 2, 3), t, cfg)
    assert r.losses[-10:].mean() < r.losses[:5].mean()
    assert len(r.trace) == 60 and r.stopped_at == 60
    assert r.selected_step in [row[0] for row in r.trace]


@pytest.mark.parametrize("objective,kind", [
    ("delta_vi", "squared"), ("rloo_arits", "squared"), ("selbo_gmm", "gmm"), ("rloo_rejection", "squared"),
])
def test_training_deterministic(objective, kind):
    t = make_catalog_target("gmm3")
    cfg = TrainConfig(objective=objective, S=200, max_steps=5, patience=None, reselect_reps=1, seed=9)
    a = train(init_params(kind, 2, 2, 1), t, cfg)
    b = train(init_params(kind, 2, 2, 1), t, cfg)
    assert a.params.flat().tobytes() == b.params.flat().tobytes()
    assert a.losses.tobytes() == b.losses.tobytes()


def test_three_failures_abort():
    def boom(X):
        return np.full(len(X), np.nan)
    t = Target("nan", 1, boom, lambda X: np.zeros_like(X))
    with pytest.raises(TrainingAbortedError):
        train(ComplexSmm([1.0], [[0.0]], [[1.0]]), t, TrainConfig(S=20, max_steps=10))


def test_single_failure_rolled_back():
    calls = {"n": 0}

    def flaky(X):
        calls["n"] += 1
        return np.full(len(X), np.nan) if calls["n"] == 2 else -0.5 * X[:, 0] ** 2

    t = Target("flaky", 1, flaky, lambda X: -X)
    r = train(ComplexSmm([1.0], [[0.5]], [[1.0]]), t,
              TrainConfig(S=20, max_steps=5, patience=None, reselect_reps=1))
    assert (2, "rollback") in r.flags
    assert len(r.trace) == 4
