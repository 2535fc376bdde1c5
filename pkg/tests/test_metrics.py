import math

import numpy as np
import pytest

from conftest import ring_model
from smmkit.exceptions import UnsupportedTargetError
from smmkit.metrics import estimate_elbo, estimate_fkl, estimate_rkl, sample_model
from smmkit.mixture import AdditiveMixture, ComplexSmm
from smmkit.rng import RngState
from smmkit.targets import Target, gmm_target, make_blr_target, make_catalog_target


def test_self_divergences_zero():
    t = make_catalog_target("ring")
    m = t.model
    assert estimate_fkl(t, m, 1000, 3, RngState(0)).value == pytest.approx(0.0, abs=1e-12)
    assert estimate_rkl(t, m, 1000, 3, RngState(0)).value == pytest.approx(0.0, abs=1e-12)
    elbo = estimate_elbo(t, m, 1000, 3, RngState(0))
    assert elbo.value == pytest.approx(t.exact_log_Z, abs=1e-10)


def test_gaussian_kl_closed_form():
    # KL(N(0, 1) || N(1, 2^2)) = log 2 + (1 + 1) / 8 - 1/2
    p = gmm_target("p", AdditiveMixture([1.0], [[0.0]], [[1.0]]))
    q = AdditiveMixture([1.0], [[1.0]], [[2.0]])
    expect = math.log(2.0) + 2 / 8 - 0.5
    rep = estimate_fkl(p, q, 20_000, 10, RngState(1))
    assert abs(rep.value - expect) < 4 * rep.stderr + 1e-3
    # reverse direction: KL(N(1, 4) || N(0, 1)) = -log 2 + (4 + 1) / 2 - 1/2
    rev = estimate_rkl(p, q, 20_000, 10, RngState(2))
    assert abs(rev.value - (-math.log(2.0) + 2.0)) < 4 * rev.stderr + 1e-2
    assert rev.sanity_ok


def test_rkl_sanity_flag():
    p = gmm_target("p", AdditiveMixture([1.0], [[0.0]], [[1.0]]))
    rep = estimate_rkl(p, AdditiveMixture([1.0], [[0.0]], [[1.0]]), 100, 5, RngState(0))
    assert rep.sanity_ok and rep.stderr == 0.0


def test_metric_requirements():
    t = make_blr_target(np.zeros((0, 2)), [])
    with pytest.raises(UnsupportedTargetError):
        estimate_fkl(t, ring_model(), 10, 2, RngState(0))
    with pytest.raises(UnsupportedTargetError):
        estimate_rkl(t, ring_model(), 10, 2, RngState(0))
    assert np.isfinite(estimate_elbo(t, ring_model(), 50, 2, RngState(0)).value)


def test_fkl_infinite_terms_counted():
    # target samples half on the exact zero of q, half away from it
    def sampler(S, gen):
        return np.where(np.arange(S)[:, None] % 2 == 0, 0.5, 2.0)

    t = Target("pts", 1, lambda X: np.zeros(len(X)), None, 0.0, sampler)
    q = ComplexSmm([1.0, -1.0], [[0.0], [1.0]], [[1.0], [1.0]])
    with np.errstate(divide="ignore"):
        rep = estimate_fkl(t, q, 200, 2, RngState(0))
    assert rep.n_infinite > 0 and np.isfinite(rep.value)


def test_sample_model_routes():
    m = ring_model()
    assert sample_model(m, 50, RngState(0)).shape == (50, 2)
    assert sample_model(m, 20, RngState(0), route="arits").shape == (20, 2)
    assert sample_model(AdditiveMixture([1.0], [[0.0]], [[1.0]]), 7, RngState(0)).shape == (7, 1)
    with pytest.raises(ValueError):
        sample_model(m, 5, RngState(0), route="bogus")


def test_report_row():
    rep = estimate_rkl(make_catalog_target("ring"), ring_model(), 100, 2, RngState(0))
    row = rep.as_row()
    assert row["metric"] == "rkl" and row["S"] == 100 and row["reps"] == 2


def test_metrics_reproducible():
    t = make_catalog_target("ring")
    q = ComplexSmm([1.0, -0.4], np.zeros((2, 2)), [[3.0, 3.0], [2.1, 2.1]])
    a = estimate_fkl(t, q, 500, 3, RngState(5)).value
    b = estimate_fkl(t, q, 500, 3, RngState(5)).value
    assert a == b
