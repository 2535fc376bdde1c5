"""Sample-based divergences between a model and a target."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import UnsupportedTargetError
from .mixture import AdditiveMixture
from .rng import as_generator
from .samplers import ARITS_BOUNDS, ancestral_sample, arits_sample, rejection_sample_exact_n

logger = logging.getLogger(__name__)

__all__ = ["MetricReport", "sample_model", "estimate_fkl", "estimate_rkl", "estimate_elbo"]


@dataclass
class MetricReport:
    metric: str
    value: float
    S: int
    reps: int
    stddev: float
    n_infinite: int = 0
    sanity_ok: bool = True

    @property
    def stderr(self):
        return self.stddev / math.sqrt(self.reps) if self.reps > 1 else 0.0

    def as_row(self):
        return {"metric": self.metric, "value": self.value, "S": self.S, "reps": self.reps,
                "stddev": self.stddev, "flags": self.n_infinite}


def sample_model(model, S, rng, route="rejection", max_proposals_factor=1000):
    """Exact samples from a Gaussian mixture (ancestral) or a squared mixture
    (rejection with exactly ``S`` acceptances, or ARITS)."""
    gen = as_generator(rng)
    if isinstance(model, AdditiveMixture):
        return ancestral_sample(model, S, gen).points
    if route == "arits":
        return arits_sample(model, S, *ARITS_BOUNDS, rng=gen).points
    if route != "rejection":
        raise ValueError(f"unknown sampling route {route!r}")
    return rejection_sample_exact_n(model, S, max_proposals_factor * S + 1000, gen).points


def _report(name, per_rep, S, n_inf):
    per_rep = np.asarray(per_rep)
    reps = per_rep.size
    std = float(np.std(per_rep, ddof=1)) if reps > 1 else 0.0
    return MetricReport(name, float(np.mean(per_rep)), S, reps, std, n_inf)


def _finite_mean(vals):
    ok = np.isfinite(vals)
    return float(np.mean(vals[ok])), int((~ok).sum())


def estimate_fkl(target, model, S=10_000, reps=10, rng=None):
    """Forward KL ``E_p[log p - log q]`` with samples from the target.

    Points where ``q`` underflows give infinite terms; they are counted in
    ``n_infinite`` and excluded from the mean.
    """
    if target.sampler is None or target.exact_log_Z is None:
        raise UnsupportedTargetError("forward KL needs a target with an exact sampler and normalizer")
    gen = as_generator(rng)
    vals, n_inf = [], 0
    for _ in range(reps):
        X = target.sample(S, gen)
        m, k = _finite_mean(target.log_density(X) - model.log_density(X))
        vals.append(m)
        n_inf += k
    if n_inf:
        logger.warning("estimate_fkl: %d infinite log-ratio terms", n_inf)
    return _report("fkl", vals, S, n_inf)


def estimate_rkl(target, model, S=10_000, reps=10, rng=None, route="rejection"):
    """Reverse KL ``E_q[log q - log p]`` with samples from the model."""
    if target.exact_log_Z is None:
        raise UnsupportedTargetError("reverse KL needs a target with a known normalizer (exact_log_Z)")
    gen = as_generator(rng)
    vals, n_inf = [], 0
    for _ in range(reps):
        X = sample_model(model, S, gen, route)
        m, k = _finite_mean(model.log_density(X) - target.log_density(X))
        vals.append(m)
        n_inf += k
    rep = _report("rkl", vals, S, n_inf)
    rep.sanity_ok = rep.value >= -3.0 * rep.stderr
    return rep


def estimate_elbo(target, model, S=10_000, reps=10, rng=None, route="rejection"):
    """``-E_q[log q - log p~]`` with samples from the model."""
    gen = as_generator(rng)
    vals, n_inf = [], 0
    for _ in range(reps):
        X = sample_model(model, S, gen, route)
        m, k = _finite_mean(-(model.log_density(X) - target.log_prob(X)))
        vals.append(m)
        n_inf += k
    return _report("elbo", vals, S, n_inf)
