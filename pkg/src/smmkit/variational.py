"""scikit-learn style estimators wrapping :func:`smmkit.vi.train`.

Unlike density estimators fit to data, these are fit to a target density:
``fit`` takes a :class:`~smmkit.targets.Target` (or a catalog name).

>>> vi = SquaredMixtureVI(n_components=2, max_steps=10, S=200, random_state=0)
>>> vi.fit("ring").score_samples([[0.0, 0.0]]).shape
(1,)
"""

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .rng import RngState
from .metrics import sample_model
from .targets import Target, make_catalog_target
from .vi import TrainConfig, init_params, train

__all__ = ["SquaredMixtureVI", "GaussianMixtureVI"]


class _MixtureVI(DensityMixin, BaseEstimator):
    _kind = None

    def _objective(self):
        raise NotImplementedError

    def fit(self, target, y=None):
        """Fit the mixture to ``target`` by minimizing the reverse KL."""
        if isinstance(target, str):
            target = make_catalog_target(target)
        if not isinstance(target, Target):
            raise TypeError("fit expects a Target or a catalog target name")
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = TrainConfig(objective=self._objective(), S=self.S, lr=self.learning_rate,
                          weight_decay=self.weight_decay, max_steps=self.max_steps,
                          patience=self.patience, seed=seed)
        state = RngState(seed)
        params = init_params(self._kind, self.n_components, target.dim, state.child(0).generator(),
                             self.mean_init_range, self.std_init_range)
        result = train(params, target, cfg, state.child(1))
        self.model_ = result.model
        self.params_ = result.params
        self.loss_trace_ = result.losses
        self.n_iter_ = result.stopped_at
        self.n_features_in_ = target.dim
        return self

    def score_samples(self, X):
        """Log-density of the fitted model at each row of ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.log_density(X)

    def score(self, X, y=None):
        """Mean log-density of ``X``."""
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        return sample_model(self.model_, n_samples, RngState(0 if random_state is None else random_state))


class SquaredMixtureVI(_MixtureVI):
    """Squared mixture with complex weights fit by variational inference.

    Parameters
    ----------
    n_components : int
    objective : {"rloo_rejection", "rloo_arits", "delta_vi"}
    S : int
        Samples per optimization step.
    """

    _kind = "squared"

    def __init__(self, n_components=2, objective="rloo_rejection", S=10_000, learning_rate=0.01,
                 weight_decay=0.0, max_steps=5000, patience=500, mean_init_range=(-1.0, 1.0),
                 std_init_range=(1.0, 3.0), random_state=None):
        self.n_components = n_components
        self.objective = objective
        self.S = S
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_steps = max_steps
        self.patience = patience
        self.mean_init_range = mean_init_range
        self.std_init_range = std_init_range
        self.random_state = random_state

    def _objective(self):
        if self.objective == "selbo_gmm":
            raise ValueError("selbo_gmm is the Gaussian-mixture objective; use GaussianMixtureVI")
        return self.objective


class GaussianMixtureVI(_MixtureVI):
    """Additive Gaussian mixture fit with the stratified reparameterized objective."""

    _kind = "gmm"

    def __init__(self, n_components=2, S=10_000, learning_rate=0.01, weight_decay=0.0, max_steps=5000,
                 patience=500, mean_init_range=(-1.0, 1.0), std_init_range=(1.0, 3.0), random_state=None):
        self.n_components = n_components
        self.S = S
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_steps = max_steps
        self.patience = patience
        self.mean_init_range = mean_init_range
        self.std_init_range = std_init_range
        self.random_state = random_state

    def _objective(self):
        return "selbo_gmm"
