"""Gaussian special functions and signed log-domain accumulation."""

import numpy as np
from scipy import special as _sp

from .rng import open_uniform

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative size below which a negative residual of a signed sum is treated as
# cancellation noise and clamped to zero.
CANCELLATION_TOL = 1e-12


def gaussian_cdf(z):
    """Standard normal CDF.

    Backed by ``scipy.special.ndtr`` (erfc-based, ~1e-16 relative error).
    Positive arguments are reflected so that ``Phi(-z) + Phi(z) == 1`` holds
    exactly in floating point.
    """
    z = np.asarray(z, dtype=float)
    neg = _sp.ndtr(-np.abs(z))
    out = np.where(z > 0, 1.0 - neg, neg)
    return out if out.ndim else float(out)


def gaussian_ppf(u):
    """Inverse standard normal CDF."""
    out = _sp.ndtri(np.asarray(u, dtype=float))
    return out if np.ndim(out) else float(out)


def standard_normal(gen, size):
    """Standard normal draws by inverse transform of open-interval uniforms.

    Each output consumes exactly one 64-bit word, so the draw at position i
    does not depend on how the batch is shaped or split.
    """
    return _sp.ndtri(open_uniform(gen, size))


def gauss_logpdf(x, mean, std):
    """Elementwise log N(x; mean, std**2)."""
    r = (x - mean) / std
    return -0.5 * r * r - np.log(std) - 0.5 * LOG_2PI


def signed_logsumexp(log_abs, signs, axis=-1):
    """Log-magnitude and sign of ``sum(signs * exp(log_abs))`` along ``axis``.

    Terms are shifted by their maximum before summation. Negative totals whose
    magnitude is below ``CANCELLATION_TOL`` times the positive part are
    clamped to zero (log -inf, sign 0).
    """
    log_abs = np.asarray(log_abs, dtype=float)
    signs = np.asarray(signs, dtype=float)
    signs, log_abs = np.broadcast_arrays(signs, log_abs)
    shift = np.max(np.where(signs != 0, log_abs, -np.inf), axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    scaled = np.exp(log_abs - shift)
    pos = np.sum(np.where(signs > 0, scaled, 0.0), axis=axis)
    neg = np.sum(np.where(signs < 0, scaled, 0.0), axis=axis)
    total = pos - neg
    total = np.where((total < 0) & (-total <= CANCELLATION_TOL * pos), 0.0, total)
    with np.errstate(divide="ignore"):
        out = np.log(np.abs(total)) + np.squeeze(shift, axis=axis)
    return out, np.sign(total)
