"""Target densities: synthetic benchmarks, Bayesian logistic regression and
random integration instances with closed-form expectations."""

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import log_expit

from .exceptions import InputError, InvalidModelError, UnsupportedTargetError
from .mixture import AdditiveMixture, ComplexSmm, _component_logpdf, log_pairwise_mass
from .rng import as_generator
from .samplers import ancestral_sample, rejection_sample_exact_n
from .special import LOG_2PI, signed_logsumexp, standard_normal

__all__ = [
    "Target",
    "Rq1Instance",
    "CATALOG",
    "make_catalog_target",
    "make_blr_target",
    "load_blr_csv",
    "make_rq1_instance",
    "perturb_proposal",
    "smm_target",
    "gmm_target",
    "smm_grad_log_unnormalized",
]

FUNNEL_LOG_OFFSET = 1e-6


@dataclass(frozen=True)
class Target:
    """Unnormalized log-density ``log p~`` with its input gradient.

    ``exact_log_Z`` (``log int p~``) and ``sampler(S, gen) -> (S, D)`` are
    present when known; ``model`` holds the underlying mixture for mixture
    targets.
    """

    name: str
    dim: int
    log_prob: Callable
    grad_log_prob: Optional[Callable] = None
    exact_log_Z: Optional[float] = None
    sampler: Optional[Callable] = None
    model: object = None

    def log_density(self, X):
        """Normalized log-density; needs ``exact_log_Z``."""
        if self.exact_log_Z is None:
            raise UnsupportedTargetError(f"target {self.name!r} has no known normalizer")
        return self.log_prob(X) - self.exact_log_Z

    def sample(self, S, rng):
        if self.sampler is None:
            raise UnsupportedTargetError(f"target {self.name!r} has no exact sampler")
        return self.sampler(S, as_generator(rng))

    def scaled(self, log_c):
        """The same target with ``p~`` multiplied by ``exp(log_c)``."""
        lp = self.log_prob
        return Target(
            self.name, self.dim, lambda X: lp(X) + log_c, self.grad_log_prob,
            None if self.exact_log_Z is None else self.exact_log_Z + log_c, self.sampler, self.model,
        )


def _points(X, dim):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}, got shape {X.shape}")
    return X


# -- squared mixture targets --------------------------------------------------

def smm_grad_log_unnormalized(model, X):
    """Input gradient of ``log((sum a_k q_k)^2 + (sum b_k q_k)^2)``."""
    X = _points(X, model.dim)
    lq = _component_logpdf(X, model.means, model.stddevs)
    e = np.exp(lq - lq.max(axis=1, keepdims=True))
    a, b = model.weights.real, model.weights.imag
    re, im = e @ a, e @ b
    # d q_k / dx = -q_k (x - mu_k) / sigma_k^2
    dq = -e[:, :, None] * (X[:, None, :] - model.means[None]) / model.stddevs[None] ** 2
    d_re = np.einsum("skd,k->sd", dq, a)
    d_im = np.einsum("skd,k->sd", dq, b)
    return 2.0 * (re[:, None] * d_re + im[:, None] * d_im) / (re * re + im * im)[:, None]


def smm_target(name, model: ComplexSmm):
    """Target ``p~ = |sum alpha_k q_k|^2`` with ``Z`` from the pairwise expansion."""
    def sampler(S, gen):
        return rejection_sample_exact_n(model, S, 1000 * S + 1000, gen).points

    return Target(
        name, model.dim,
        lambda X: model.log_unnormalized(_points(X, model.dim)),
        lambda X: smm_grad_log_unnormalized(model, X),
        float(model.log_Z), sampler, model,
    )


def _isotropic_smm(weights, sigmas, dim):
    means = np.zeros((len(weights), dim))
    stds = np.repeat(np.asarray(sigmas, float)[:, None], dim, axis=1)
    return ComplexSmm(np.asarray(weights, float), means, stds)


# -- Gaussian mixture targets -------------------------------------------------

def gmm_grad_log_density(mix, X):
    X = _points(X, mix.dim)
    with np.errstate(divide="ignore"):
        lp = _component_logpdf(X, mix.means, mix.stddevs) + np.log(mix.coeffs)
    resp = np.exp(lp - lp.max(axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    score = -(X[:, None, :] - mix.means[None]) / mix.stddevs[None] ** 2
    return np.einsum("sk,skd->sd", resp, score)


def gmm_target(name, mix: AdditiveMixture):
    return Target(
        name, mix.dim,
        lambda X: mix.log_density(_points(X, mix.dim)),
        lambda X: gmm_grad_log_density(mix, X),
        0.0, lambda S, gen: ancestral_sample(mix, S, gen).points, mix,
    )


# -- funnels ------------------------------------------------------------------

def _funnel(name, dim, sigma, exponent_scale, offset):
    """``N(x1; 0, sigma^2) prod_i N(x_i; 0, v)`` with variance ``v = exp(exponent_scale * x1)``."""

    def log_prob(X):
        X = _points(X, dim)
        x1, rest = X[:, 0], X[:, 1:]
        log_v = exponent_scale * x1
        out = -0.5 * (x1 / sigma) ** 2 - math.log(sigma) - 0.5 * LOG_2PI
        out = out - 0.5 * (dim - 1) * (LOG_2PI + log_v) - 0.5 * np.sum(rest * rest, axis=1) * np.exp(-log_v)
        return out + offset

    def grad(X):
        X = _points(X, dim)
        x1, rest = X[:, 0], X[:, 1:]
        inv_v = np.exp(-exponent_scale * x1)
        g = np.empty_like(X)
        g[:, 0] = -x1 / sigma ** 2 - 0.5 * (dim - 1) * exponent_scale \
            + 0.5 * exponent_scale * np.sum(rest * rest, axis=1) * inv_v
        g[:, 1:] = -rest * inv_v[:, None]
        return g

    def sampler(S, gen):
        z = standard_normal(gen, (S, dim))
        x1 = sigma * z[:, 0]
        rest = z[:, 1:] * np.exp(0.5 * exponent_scale * x1)[:, None]
        return np.column_stack([x1, rest])

    return Target(name, dim, log_prob, grad, offset, sampler)


# -- catalog ------------------------------------------------------------------

def _gmm3():
    means = [[-1.0, 1.0], [1.1, 1.1], [-1.0, -1.0]]
    stds = np.sqrt([[0.5, 0.5], [1.0, 1.0], [1.0, 1.0]])
    return gmm_target("gmm3", AdditiveMixture([0.4, 0.3, 0.3], means, stds))


def _gmm4():
    narrow = math.sqrt(0.15 ** 0.9)
    means = [[0.0, 2.0], [-2.0, 0.0], [2.0, 0.0], [0.0, -2.0]]
    stds = [[narrow, 1.0], [1.0, narrow], [1.0, narrow], [narrow, 1.0]]
    return gmm_target("gmm4", AdditiveMixture([0.25] * 4, means, stds))


CATALOG = {
    "gmm3": _gmm3,
    "gmm4": _gmm4,
    "funnel2": lambda: _funnel("funnel2", 2, 1.2, 0.5, FUNNEL_LOG_OFFSET),
    "funnel10": lambda: _funnel("funnel10", 10, 3.0, 1.0, 0.0),
    "ring": lambda: smm_target("ring", _isotropic_smm([1.0, -0.46], [3.0, 2.0], 2)),
    "deep_ring": lambda: smm_target("deep_ring", _isotropic_smm([0.16, -0.36], [0.6, 1.0], 2)),
    "hollow16": lambda: smm_target("hollow16", _isotropic_smm([1.0, -0.3], [7.0, 6.0], 16)),
    "hollow32": lambda: smm_target("hollow32", _isotropic_smm([1.0, -0.11], [7.0, 6.0], 32)),
    "hollow64": lambda: smm_target("hollow64", _isotropic_smm([1.0, -0.074], [7.0, 6.5], 64)),
}


def make_catalog_target(name) -> Target:
    try:
        return CATALOG[name]()
    except KeyError:
        raise UnsupportedTargetError(f"unknown target {name!r}; choose from {sorted(CATALOG)}") from None


# -- Bayesian logistic regression -------------------------------------------

def make_blr_target(Z, y, name="blr") -> Target:
    """Posterior over regression weights with a standard normal prior.

    ``Z`` is the (N, D) covariate matrix and ``y`` the labels in {0, 1}.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if Z.size == 0:
        Z = Z.reshape(0, Z.shape[-1])
    if Z.shape[0] != y.shape[0]:
        raise InputError(f"{Z.shape[0]} covariate rows but {y.shape[0]} labels")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("labels must be 0 or 1")
    if not np.all(np.isfinite(Z)):
        raise InputError("covariates must be finite")
    dim = Z.shape[1]
    sign = 2.0 * y - 1.0

    def log_prob(X):
        X = _points(X, dim)
        # y log s(t) + (1 - y) log(1 - s(t)) = log s((2y - 1) t)
        lik = log_expit((X @ Z.T) * sign).sum(axis=1)
        return lik - 0.5 * np.sum(X * X, axis=1) - 0.5 * dim * LOG_2PI

    def grad(X):
        X = _points(X, dim)
        t = (X @ Z.T) * sign
        # d/dt log s(t) = s(-t)
        return (np.exp(log_expit(-t)) * sign) @ Z - X

    return Target(name, dim, log_prob, grad)


def load_blr_csv(path, add_bias=False):
    """Read a CSV with a header and a ``y`` column; the rest are covariates."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if "y" not in header:
            raise InputError(f"{path}: no 'y' column in header")
        iy = header.index("y")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric field") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    y = data[:, iy]
    Z = np.delete(data, iy, axis=1)
    if add_bias:
        Z = np.column_stack([np.ones(len(Z)), Z])
    return make_blr_target(Z, y, name=f"blr:{path}")


# -- random integration instances ----------------------------------------

@dataclass(frozen=True)
class Rq1Instance:
    """Squared-mixture proposal, positive Gaussian-mixture integrand and ``E_q[f]``."""

    proposal: ComplexSmm
    f_weights: np.ndarray
    f_means: np.ndarray
    f_stddevs: np.ndarray
    exact_expectation: float

    def log_f(self, X):
        X = np.atleast_2d(X)
        # expanded quadratic form: three matmuls instead of an (S, M, D) temporary
        prec = self.f_stddevs ** -2.0
        const = (-0.5 * np.sum(self.f_means ** 2 * prec, axis=1) - np.sum(np.log(self.f_stddevs), axis=1)
                 - 0.5 * X.shape[1] * LOG_2PI + np.log(self.f_weights))
        lw = -0.5 * (X * X) @ prec.T + X @ (self.f_means * prec).T + const
        m = lw.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(lw - m).sum(axis=1, keepdims=True)))[:, 0]

    def log_integrand(self, X):
        """``log(f q)``: the quantity weighted by ``1 / q`` in importance sampling."""
        return self.log_f(X) + self.proposal.log_density(X)


def expectation_of_gmm(model, weights, means, stddevs):
    """Closed-form ``E_q[sum_m weights_m N(x; means_m, stddevs_m^2)]`` for a squared model."""
    sm = model.expansion
    lc = log_pairwise_mass(sm.means[:, None, :], sm.stddevs[:, None, :], means[None], stddevs[None])
    log_terms = sm.log_abs_weights[:, None] - sm.log_Z + lc + np.log(weights)[None]
    signs = np.broadcast_to(sm.signs[:, None], log_terms.shape)
    out, sign = signed_logsumexp(log_terms.ravel(), signs.ravel())
    return float(sign * np.exp(out))


def make_rq1_instance(D, K, rng, n_f=100, max_tries=10_000) -> Rq1Instance:
    """Random proposal (redrawn until its expansion has a negative term) and integrand."""
    if D < 1 or K < 2:
        raise InputError("need D >= 1 and K >= 2")
    gen = as_generator(rng)
    for _ in range(max_tries):
        means = gen.uniform(-0.5, 0.5, (K, D))
        stds = gen.uniform(2.0, 3.0, (K, D))
        w = gen.uniform(-1.0, 1.0, K)
        try:
            model = ComplexSmm(w, means, stds)
        except InvalidModelError:
            continue
        if model.expansion.has_negatives:
            break
    else:
        raise InvalidModelError(f"no proposal with a negative term after {max_tries} draws")
    f_means = gen.standard_normal((n_f, D))
    f_stds = gen.uniform(1.0, 2.0, (n_f, D))
    f_w = gen.uniform(1e4, 1e5, n_f)
    return Rq1Instance(model, f_w, f_means, f_stds, expectation_of_gmm(model, f_w, f_means, f_stds))


def perturb_proposal(target, scale=0.01, rng=None) -> ComplexSmm:
    """Squared-mixture target with stddevs multiplied by ``exp(scale * N(0, 1))``."""
    model = target.model if isinstance(target, Target) else target
    if not isinstance(model, ComplexSmm):
        raise UnsupportedTargetError("perturbation needs a squared-mixture target")
    gen = as_generator(rng)
    noise = standard_normal(gen, model.stddevs.shape)
    return ComplexSmm(model.weights, model.means, model.stddevs * np.exp(scale * noise))
