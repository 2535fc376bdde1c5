import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from smmkit.mixture import AdditiveMixture, ComplexSmm
from smmkit.variational import GaussianMixtureVI, SquaredMixtureVI


def test_doctest_example():
    vi = SquaredMixtureVI(n_components=2, max_steps=10, S=200, random_state=0)
    assert vi.fit("ring").score_samples([[0.0, 0.0]]).shape == (1,)


def test_fitted_attributes():
    vi = SquaredMixtureVI(max_steps=8, S=300, random_state=1).fit("ring")
    assert isinstance(vi.model_, ComplexSmm)
    assert vi.n_features_in_ == 2 and vi.n_iter_ == 8 and vi.loss_trace_.shape == (8,)
    X = vi.sample(20, random_state=0)
    assert X.shape == (20, 2)
    assert vi.score(X) == pytest.approx(np.mean(vi.score_samples(X)))


def test_gmm_estimator():
    vi = GaussianMixtureVI(n_components=3, max_steps=5, S=300, random_state=0).fit("gmm3")
    assert isinstance(vi.model_, AdditiveMixture) and vi.model_.n_components == 3


def test_params_and_clone():
    vi = SquaredMixtureVI(n_components=3, learning_rate=0.05)
    params = vi.get_params()
    assert params["n_components"] == 3 and params["learning_rate"] == 0.05
    assert clone(vi).get_params() == params


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SquaredMixtureVI().score_samples([[0.0, 0.0]])


def test_bad_inputs():
    with pytest.raises(TypeError):
        SquaredMixtureVI(max_steps=1).fit(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        SquaredMixtureVI(objective="selbo_gmm", max_steps=1).fit("ring")


def test_reproducible():
    a = SquaredMixtureVI(max_steps=5, S=200, random_state=4).fit("ring")
    b = SquaredMixtureVI(max_steps=5, S=200, random_state=4).fit("ring")
    assert a.params_.flat().tobytes() == b.params_.flat().tobytes()
