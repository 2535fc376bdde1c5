"""Squared subtractive mixtures over diagonal Gaussians.

A :class:`ComplexSmm` with weights ``alpha_k = a_k + i b_k`` defines the
density

    q(x) = |sum_k alpha_k N(x; mu_k, sigma_k^2)|^2 / Z
         = ((sum_k a_k q_k(x))^2 + (sum_k b_k q_k(x))^2) / Z.

Expanding the square gives one Gaussian per unordered component pair with a
signed coefficient (:func:`expand`), which splits into an additive positive
part and an additive negative part. All evaluation happens in log space.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DegenerateConditioningError,
    DimensionError,
    InputError,
    InvalidModelError,
)
from .special import gauss_logpdf, gaussian_cdf, signed_logsumexp

__all__ = [
    "GaussianComponent",
    "AdditiveMixture",
    "SignedComponent",
    "SignedMixture",
    "ComplexSmm",
    "pairwise_mass",
    "log_pairwise_mass",
    "product_gaussian",
    "expand",
    "log_density",
    "marginal_evidence",
    "conditional_cdf",
    "gaussian_cdf",
]

# Rows per evaluation chunk; keeps S x K x D temporaries bounded.
_CHUNK_ELEMENTS = 2_000_000
# Expanded pairs with |w| below this are dropped.
_MIN_WEIGHT = 1e-300


def _as_points(X, dim):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {np.shape(X)}")
    if not np.all(np.isfinite(X)):
        raise InputError("evaluation points must be finite")
    return X, single


def _chunks(n_rows, width):
    step = max(1, _CHUNK_ELEMENTS // max(width, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _component_logpdf(X, means, stds):
    """log N(x_s; mu_k, diag(sigma_k^2)) as an (S, K) array."""
    out = np.empty((X.shape[0], means.shape[0]))
    for sl in _chunks(X.shape[0], means.size):
        out[sl] = gauss_logpdf(X[sl, None, :], means[None], stds[None]).sum(axis=-1)
    return out


def _check_params(means, stds):
    means = np.array(means, dtype=float, ndmin=2)
    stds = np.array(stds, dtype=float, ndmin=2)
    if means.shape != stds.shape:
        raise InvalidModelError(f"means {means.shape} and stddevs {stds.shape} differ in shape")
    if means.shape[0] < 1 or means.shape[1] < 1:
        raise InvalidModelError("need at least one component of dimension >= 1")
    if not np.all(np.isfinite(means)):
        raise InvalidModelError("component means must be finite")
    if not (np.all(np.isfinite(stds)) and np.all(stds > 0)):
        raise InvalidModelError("component stddevs must be finite and strictly positive")
    means.setflags(write=False)
    stds.setflags(write=False)
    return means, stds


@dataclass(frozen=True)
class GaussianComponent:
    """Diagonal Gaussian ``N(mean, diag(stddev**2))``."""

    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean, std = _check_params(self.mean, self.stddev)
        object.__setattr__(self, "mean", mean[0])
        object.__setattr__(self, "stddev", std[0])

    @property
    def dim(self):
        return self.mean.shape[0]

    def log_pdf(self, X):
        X, single = _as_points(X, self.dim)
        out = gauss_logpdf(X, self.mean, self.stddev).sum(axis=-1)
        return float(out[0]) if single else out


def log_pairwise_mass(mean1, std1, mean2, std2):
    """log of the integral of a product of two diagonal Gaussians.

    Broadcasts over leading axes; the last axis is the dimension.
    """
    var = np.asarray(std1) ** 2 + np.asarray(std2) ** 2
    return gauss_logpdf(np.asarray(mean1), np.asarray(mean2), np.sqrt(var)).sum(axis=-1)


def pairwise_mass(c1, c2):
    """Integral of ``N(x; mu1, s1^2) * N(x; mu2, s2^2)`` over R^D."""
    if c1.dim != c2.dim:
        raise DimensionError(f"components have dimensions {c1.dim} and {c2.dim}")
    return float(np.exp(log_pairwise_mass(c1.mean, c1.stddev, c2.mean, c2.stddev)))


def product_gaussian(mean1, std1, mean2, std2):
    """Mean and stddev of the normalized product of two diagonal Gaussians."""
    p1 = 1.0 / np.square(std1)
    p2 = 1.0 / np.square(std2)
    var = 1.0 / (p1 + p2)
    return var * (mean1 * p1 + mean2 * p2), np.sqrt(var)


class AdditiveMixture:
    """Classical mixture with convex coefficients over diagonal Gaussians."""

    def __init__(self, coeffs, means, stddevs):
        self.means, self.stddevs = _check_params(means, stddevs)
        coeffs = np.array(coeffs, dtype=float, ndmin=1)
        if coeffs.shape != (self.means.shape[0],):
            raise InvalidModelError(f"expected {self.means.shape[0]} coefficients, got {coeffs.shape}")
        if np.any(coeffs < 0) or abs(coeffs.sum() - 1.0) > 1e-12:
            raise InvalidModelError("mixture coefficients must be nonnegative and sum to 1")
        coeffs.setflags(write=False)
        self.coeffs = coeffs

    @classmethod
    def from_components(cls, coeffs, components):
        return cls(
            coeffs,
            [c.mean for c in components],
            [c.stddev for c in components],
        )

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def components(self):
        return [GaussianComponent(m, s) for m, s in zip(self.means, self.stddevs)]

    def log_density(self, X):
        X, single = _as_points(X, self.dim)
        with np.errstate(divide="ignore"):
            lw = np.log(self.coeffs)
        lq = _component_logpdf(X, self.means, self.stddevs) + lw
        out, _ = signed_logsumexp(lq, 1.0, axis=1)
        return float(out[0]) if single else out

    def to_dict(self):
        return {
            "schema_version": 1,
            "kind": "additive",
            "dim": self.dim,
            "coeffs": self.coeffs.tolist(),
            "means": self.means.tolist(),
            "stddevs": self.stddevs.tolist(),
        }

    def __repr__(self):
        return f"AdditiveMixture(K={self.n_components}, D={self.dim})"


@dataclass(frozen=True)
class SignedComponent:
    """One expanded pair term: ``weight * N(x; gaussian)`` from components ``pair``."""

    weight: float
    gaussian: GaussianComponent
    pair: tuple = field(default=(0, 0))


class SignedMixture:
    """Difference-of-mixtures form ``q = (Z+ q+ - Z- q-) / Z``.

    Holds every expanded pair as a normalized Gaussian with a signed
    coefficient. Coefficients are stored as log-magnitudes plus signs so that
    high-dimensional models with tiny pairwise masses keep full precision.
    """

    def __init__(self, log_abs_weights, signs, means, stddevs, pairs=None):
        self.means, self.stddevs = _check_params(means, stddevs)
        self.log_abs_weights = np.array(log_abs_weights, dtype=float, ndmin=1)
        self.signs = np.sign(np.array(signs, dtype=float, ndmin=1))
        n = self.means.shape[0]
        if self.log_abs_weights.shape != (n,) or self.signs.shape != (n,):
            raise InvalidModelError("one weight and sign per component required")
        if np.any(self.signs == 0) or not np.all(np.isfinite(self.log_abs_weights)):
            raise InvalidModelError("expanded weights must be finite and nonzero")
        self.pairs = [tuple(p) for p in pairs] if pairs is not None else [(i, i) for i in range(n)]
        for arr in (self.log_abs_weights, self.signs):
            arr.setflags(write=False)

        pos = self.signs > 0
        self._pos_idx = np.flatnonzero(pos)
        self._neg_idx = np.flatnonzero(~pos)
        self.log_Z_plus = _log_sum(self.log_abs_weights[pos])
        self.log_Z_minus = _log_sum(self.log_abs_weights[~pos])
        self.log_Z, sign = signed_logsumexp(self.log_abs_weights, self.signs)
        self.log_Z = float(self.log_Z)
        if sign <= 0 or not np.isfinite(self.log_Z):
            raise InvalidModelError(
                "expanded mixture has non-positive total mass; the density cannot be normalized"
            )

    # -- masses -----------------------------------------------------------
    @property
    def Z_plus(self):
        return float(np.exp(self.log_Z_plus))

    @property
    def Z_minus(self):
        return float(np.exp(self.log_Z_minus))

    @property
    def Z(self):
        return float(np.exp(self.log_Z))

    @property
    def acceptance_rate(self):
        """Expected rejection-sampling acceptance probability ``Z / Z+``."""
        return float(np.exp(self.log_Z - self.log_Z_plus))

    @property
    def weights(self):
        """Signed expanded coefficients ``w_kj``."""
        return self.signs * np.exp(self.log_abs_weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def has_negatives(self):
        return self._neg_idx.size > 0

    def _signed(self, idx):
        return [
            SignedComponent(
                float(np.exp(self.log_abs_weights[i])),
                GaussianComponent(self.means[i], self.stddevs[i]),
                self.pairs[i],
            )
            for i in idx
        ]

    @property
    def positives(self):
        return self._signed(self._pos_idx)

    @property
    def negatives(self):
        """Negative terms, stored with their absolute weights."""
        return self._signed(self._neg_idx)

    def _part(self, idx, log_total):
        if idx.size == 0:
            return None
        coeffs = np.exp(self.log_abs_weights[idx] - log_total)
        coeffs = coeffs / coeffs.sum()
        return AdditiveMixture(coeffs, self.means[idx], self.stddevs[idx])

    @property
    def q_plus(self):
        return self._part(self._pos_idx, self.log_Z_plus)

    @property
    def q_minus(self):
        return self._part(self._neg_idx, self.log_Z_minus)

    # -- evaluation -------------------------------------------------------
    def component_logpdf(self, X):
        return _component_logpdf(X, self.means, self.stddevs)

    def log_density(self, X):
        """log q(x) from the expanded signed sum (independent of the squared form)."""
        X, single = _as_points(X, self.dim)
        lq = self.component_logpdf(X) + self.log_abs_weights
        out, _ = signed_logsumexp(lq, self.signs, axis=1)
        out = out - self.log_Z
        return float(out[0]) if single else out

    def log_unnormalized_plus(self, X):
        """log of ``Z+ q+(x)``, the positive part before normalization."""
        X, _ = _as_points(X, self.dim)
        idx = self._pos_idx
        lq = _component_logpdf(X, self.means[idx], self.stddevs[idx]) + self.log_abs_weights[idx]
        out, _ = signed_logsumexp(lq, 1.0, axis=1)
        return out

    def log_prefix_weights(self, X, d):
        """(S, P) log-magnitudes of ``(w_p / Z) * prod_{i<d} N(x_i; m_pi, s_pi)``."""
        X = np.asarray(X, dtype=float)
        lw = np.broadcast_to(self.log_abs_weights - self.log_Z, (X.shape[0], self.n_components))
        if d == 0:
            return np.array(lw)
        return lw + gauss_logpdf(X[:, None, :d], self.means[None, :, :d], self.stddevs[None, :, :d]).sum(-1)

    def conditional_cdf_batch(self, log_prefix, t, d):
        """Vectorized ``q(x_d <= t | x_<d)`` given precomputed prefix weights.

        Returns ``(cdf, log_evidence)``; the CDF is clamped to [0, 1].
        """
        shift = np.max(log_prefix, axis=1, keepdims=True)
        scaled = self.signs * np.exp(log_prefix - shift)
        evidence = scaled.sum(axis=1)
        z = (np.asarray(t, dtype=float)[..., None] - self.means[:, d]) / self.stddevs[:, d]
        num = (scaled * gaussian_cdf(z)).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cdf = np.clip(num / evidence, 0.0, 1.0)
            log_ev = np.log(evidence) + shift[:, 0]
        return cdf, log_ev

    def to_signed_terms(self):
        return self.positives + self.negatives

    def __repr__(self):
        return (
            f"SignedMixture(D={self.dim}, P+={self._pos_idx.size}, P-={self._neg_idx.size}, "
            f"Z={self.Z:.6g}, Z+={self.Z_plus:.6g}, Z-={self.Z_minus:.6g})"
        )


def _log_sum(log_vals):
    if log_vals.size == 0:
        return -np.inf
    m = np.max(log_vals)
    return float(m + np.log(np.sum(np.exp(log_vals - m))))


def _expand_arrays(weights, means, stds):
    K = means.shape[0]
    ks, js = np.triu_indices(K)
    coef = np.real(weights[ks] * np.conj(weights[js])) * np.where(ks == js, 1.0, 2.0)
    log_c = log_pairwise_mass(means[ks], stds[ks], means[js], stds[js])
    with np.errstate(divide="ignore"):
        log_w = np.log(np.abs(coef)) + log_c
    keep = (coef != 0) & (log_w > np.log(_MIN_WEIGHT))
    m, s = product_gaussian(means[ks], stds[ks], means[js], stds[js])
    pairs = list(zip(ks[keep].tolist(), js[keep].tolist()))
    return log_w[keep], np.sign(coef[keep]), m[keep], s[keep], pairs


class ComplexSmm:
    """Squared mixture with complex (or real) weights over diagonal Gaussians.

    Parameters
    ----------
    weights : array_like of shape (K,)
        Complex or real mixture weights ``alpha_k``.
    means : array_like of shape (K, D)
    stddevs : array_like of shape (K, D)
        Strictly positive per-dimension standard deviations.

    The expansion and the normalizer are computed once at construction;
    instances are immutable afterwards.
    """

    def __init__(self, weights, means, stddevs):
        self.means, self.stddevs = _check_params(means, stddevs)
        w = np.array(weights, dtype=complex, ndmin=1)
        if w.shape != (self.means.shape[0],):
            raise InvalidModelError(f"expected {self.means.shape[0]} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidModelError("mixture weights must be finite")
        w.setflags(write=False)
        self.weights = w
        try:
            self.expansion = SignedMixture(*_expand_arrays(w, self.means, self.stddevs))
        except InvalidModelError as err:
            raise InvalidModelError(f"squared model cannot be normalized: {err}") from None
        self.log_Z = self.expansion.log_Z

    @classmethod
    def from_components(cls, weights, components):
        return cls(weights, [c.mean for c in components], [c.stddev for c in components])

    @classmethod
    def from_parts(cls, weights_re, weights_im, means, stddevs):
        im = np.zeros(len(weights_re)) if weights_im is None else np.asarray(weights_im, float)
        return cls(np.asarray(weights_re, float) + 1j * im, means, stddevs)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def weights_re(self):
        return self.weights.real.copy()

    @property
    def weights_im(self):
        return self.weights.imag.copy()

    @property
    def Z(self):
        return float(np.exp(self.log_Z))

    @property
    def components(self):
        return [GaussianComponent(m, s) for m, s in zip(self.means, self.stddevs)]

    def log_unnormalized(self, X):
        """log of ``(sum a_k q_k)^2 + (sum b_k q_k)^2`` (the density times Z)."""
        X, single = _as_points(X, self.dim)
        lq = _component_logpdf(X, self.means, self.stddevs)
        shift = lq.max(axis=1)
        e = np.exp(lq - shift[:, None])
        re = e @ self.weights.real
        im = e @ self.weights.imag
        with np.errstate(divide="ignore"):
            out = 2.0 * shift + np.log(re * re + im * im)
        return float(out[0]) if single else out

    def log_density(self, X):
        out = self.log_unnormalized(X)
        return out - self.log_Z

    def density(self, X):
        return np.exp(self.log_density(X))

    def to_dict(self):
        return {
            "schema_version": 1,
            "kind": "squared",
            "dim": self.dim,
            "weights_re": self.weights.real.tolist(),
            "weights_im": self.weights.imag.tolist(),
            "means": self.means.tolist(),
            "stddevs": self.stddevs.tolist(),
        }

    def __repr__(self):
        return f"ComplexSmm(K={self.n_components}, D={self.dim}, Z={self.Z:.6g})"


def expand(model):
    """Pairwise signed expansion of a squared model (cached at construction)."""
    return model.expansion


def log_density(model, x):
    return model.log_density(x)


def _as_signed(sm):
    return sm.expansion if isinstance(sm, ComplexSmm) else sm


def marginal_evidence(sm, x_prefix):
    """Joint density of the first ``len(x_prefix)`` coordinates (1 for an empty prefix)."""
    sm = _as_signed(sm)
    x_prefix = np.atleast_1d(np.asarray(x_prefix, dtype=float))
    d = x_prefix.shape[0]
    if d > sm.dim:
        raise InputError(f"prefix of length {d} exceeds model dimension {sm.dim}")
    if d == 0:
        return 1.0
    lw = sm.log_prefix_weights(x_prefix[None, :], d)
    out, sign = signed_logsumexp(lw, sm.signs, axis=1)
    return float(sign[0] * np.exp(out[0]))


def conditional_cdf(sm, x_prefix, t):
    """``q(x_d <= t | x_<d = x_prefix)`` with ``d = len(x_prefix) + 1``."""
    sm = _as_signed(sm)
    x_prefix = np.atleast_1d(np.asarray(x_prefix, dtype=float))
    d = x_prefix.shape[0]
    if d >= sm.dim:
        raise InputError(f"prefix of length {d} leaves no dimension to condition on (D={sm.dim})")
    lw = sm.log_prefix_weights(x_prefix[None, :], d)
    cdf, log_ev = sm.conditional_cdf_batch(lw, np.array([t]), d)
    if not np.isfinite(log_ev[0]):
        raise DegenerateConditioningError(f"zero marginal evidence at prefix {x_prefix.tolist()}")
    return float(cdf[0])
