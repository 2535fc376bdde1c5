"""Monte-Carlo and importance-sampling estimators over squared mixtures.

Integrands are callables mapping an (S, D) array to log-magnitudes, or to a
``(log_abs, sign)`` pair when the integrand can be negative. Working in log
space keeps ``f(x) p(x) / q(x)`` finite for high-dimensional targets whose
densities under- or overflow.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import BudgetTooSmallError, NoAcceptanceError, SmmError, UnboundedWeightError
from .mixture import ComplexSmm
from .rng import RngState, as_generator
from .samplers import SampleBatch, ancestral_sample, rejection_sample, stratified_allocation
from .special import LOG_2PI, standard_normal

logger = logging.getLogger(__name__)

__all__ = [
    "Estimate",
    "SafeProposalSpec",
    "ReplicationStats",
    "log_error",
    "uis",
    "delta_is",
    "safe_delta_is",
    "gamma_factor",
    "rejection_mc",
    "replicate",
]

# log of the smallest positive normal double; floor for log|I_hat - I|
LOG_ERROR_FLOOR = -745.0
DEFAULT_BATCH = 5000


@dataclass
class Estimate:
    """Result of one Monte-Carlo estimate.

    ``budget`` records the sample split actually used (``S_plus``,
    ``S_minus``, ``S_safe``, ``proposals``, ``acceptances`` as applicable);
    ``n_infinite`` counts samples whose importance weight was unbounded.
    Those samples contribute zero to ``value``.
    """

    value: float
    budget: dict = field(default_factory=dict)
    strata_values: Optional[dict] = None
    n_infinite: int = 0

    @property
    def flagged(self):
        return self.n_infinite > 0

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class SafeProposalSpec:
    """Isotropic Gaussian mixed into the proposal with weight ``beta``."""

    beta: float
    safe_stddev: float
    safe_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.safe_stddev > 0:
            raise ValueError("safe_stddev must be positive")

    def mean(self, dim):
        return np.zeros(dim) if self.safe_mean is None else np.broadcast_to(self.safe_mean, (dim,))

    def log_density(self, X):
        X = np.asarray(X, dtype=float)
        r = (X - self.mean(X.shape[1])) / self.safe_stddev
        return -0.5 * np.sum(r * r, axis=1) - X.shape[1] * (np.log(self.safe_stddev) + 0.5 * LOG_2PI)


def _signed_eval(fn, X):
    out = fn(X)
    if isinstance(out, tuple):
        log_abs, sign = out
        return np.asarray(log_abs, float), np.asarray(sign, float)
    out = np.asarray(out, float)
    return out, np.where(np.isneginf(out), 0.0, 1.0)


def _weighted_terms(log_integrand, log_q, X):
    """Signed ratios ``f p / q`` and the count of unbounded ones."""
    log_f, sign = _signed_eval(log_integrand, X)
    bad = (sign != 0) & np.isneginf(log_q)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.where(sign == 0, 0.0, sign * np.exp(log_f - log_q))
    ratio = np.where(bad, 0.0, ratio)
    return ratio, int(bad.sum())


def _model_log_density(model):
    return model.log_density


def _signed(model):
    return model.expansion if isinstance(model, ComplexSmm) else model


def uis(log_integrand: Callable, samples, proposal_log_density: Callable, strict: bool = True) -> Estimate:
    """Unnormalized IS: the average of ``f p~ / q`` over proposal samples.

    Raises :class:`UnboundedWeightError` when a sample has ``q = 0`` but a
    nonzero integrand, unless ``strict`` is False (then the sample is counted
    in ``n_infinite`` and contributes zero).
    """
    X = samples.points if isinstance(samples, SampleBatch) else np.asarray(samples, float)
    if X.shape[0] == 0:
        raise NoAcceptanceError("no samples to average")
    ratio, n_inf = _weighted_terms(log_integrand, proposal_log_density(X), X)
    if n_inf and strict:
        raise UnboundedWeightError(f"{n_inf} samples hit a proposal zero with nonzero integrand")
    return Estimate(math.fsum(ratio) / X.shape[0], {"S": X.shape[0]}, n_infinite=n_inf)


def _delta_split(sm, S):
    zp, zm = sm.Z_plus, sm.Z_minus if sm.has_negatives else 0.0
    s_plus = int(math.floor(zp / (zp + zm) * S))
    s_minus = int(math.floor(zm / (zp + zm) * S))
    s_plus += S - s_plus - s_minus
    if zm > 0 and s_minus == 0:
        raise BudgetTooSmallError(f"budget S={S} leaves no samples for the negative part")
    return s_plus, s_minus


def _part_mean(part, n, log_integrand, log_q, gen, stratify, batch_size):
    """Mean of ``f p~ / q`` over ``n`` draws from an additive part."""
    if n == 0:
        return 0.0, 0
    if stratify:
        alloc = stratified_allocation(part.coeffs, n)
    else:
        alloc = None
    total, n_inf = [], 0
    if alloc is None:
        for start in range(0, n, batch_size):
            X = ancestral_sample(part, min(batch_size, n - start), gen).points
            r, k = _weighted_terms(log_integrand, log_q(X), X)
            total.append(math.fsum(r))
            n_inf += k
    else:
        for comp, count in enumerate(alloc):
            for start in range(0, int(count), batch_size):
                m = min(batch_size, int(count) - start)
                z = standard_normal(gen, (m, part.dim))
                X = part.means[comp] + part.stddevs[comp] * z
                r, k = _weighted_terms(log_integrand, log_q(X), X)
                total.append(math.fsum(r))
                n_inf += k
    return math.fsum(total) / n, n_inf


def delta_is(model, log_integrand: Callable, S: int, rng, stratify: bool = True,
             batch_size: int = DEFAULT_BATCH, proposal_log_density: Optional[Callable] = None) -> Estimate:
    """Difference-of-mixtures IS estimate of ``int f p~``.

    Draws ``S+`` samples from q+ and ``S-`` from q- (budget split in proportion
    to ``Z+`` and ``Z-``, remainder to ``S+``) and returns
    ``(Z+/Z) mean_+[f p~ / q] - (Z-/Z) mean_-[f p~ / q]``.

    ``proposal_log_density`` overrides the weight denominator (used by the
    safe variant); by default it is the squared model's own density.
    """
    sm = _signed(model)
    gen = as_generator(rng)
    log_q = proposal_log_density or _model_log_density(model)
    s_plus, s_minus = _delta_split(sm, S)
    mean_p, inf_p = _part_mean(sm.q_plus, s_plus, log_integrand, log_q, gen, stratify, batch_size)
    mean_m, inf_m = _part_mean(sm.q_minus, s_minus, log_integrand, log_q, gen, stratify, batch_size)
    c_plus = float(np.exp(sm.log_Z_plus - sm.log_Z))
    c_minus = float(np.exp(sm.log_Z_minus - sm.log_Z)) if s_minus else 0.0
    value = c_plus * mean_p - c_minus * mean_m
    n_inf = inf_p + inf_m
    if n_inf:
        logger.warning("delta_is: %d samples with unbounded importance weight", n_inf)
    return Estimate(
        value,
        {"S_plus": s_plus, "S_minus": s_minus},
        strata_values={"plus": mean_p, "minus": mean_m},
        n_infinite=n_inf,
    )


def safe_delta_is(model, safe: SafeProposalSpec, log_integrand: Callable, S: int, rng,
                  stratify: bool = True, batch_size: int = DEFAULT_BATCH) -> Estimate:
    """ΔIS under the mixed proposal ``(1 - beta) q + beta q_safe``.

    ``floor((1 - beta) S)`` samples go to the difference-of-mixtures part and
    ``floor(beta S)`` to the safe component; every weight uses the mixed
    density in its denominator. ``beta = 0`` reproduces :func:`delta_is`.
    """
    gen = as_generator(rng)
    beta = safe.beta
    if beta == 0.0:
        est = delta_is(model, log_integrand, S, gen, stratify, batch_size)
        est.budget["S_safe"] = 0
        return est
    s_delta = int(math.floor((1.0 - beta) * S))
    s_safe = int(math.floor(beta * S))
    if s_safe == 0:
        raise BudgetTooSmallError(f"budget S={S} leaves no samples for the safe component (beta={beta})")
    log_smm = _model_log_density(model)
    log_1mb, log_b = math.log1p(-beta), math.log(beta)

    def log_mix(X):
        return np.logaddexp(log_1mb + log_smm(X), log_b + safe.log_density(X))

    inner = delta_is(model, log_integrand, s_delta, gen, stratify, batch_size, proposal_log_density=log_mix)
    dim = _signed(model).dim
    parts, n_inf = [], 0
    for start in range(0, s_safe, batch_size):
        m = min(batch_size, s_safe - start)
        X = safe.mean(dim) + safe.safe_stddev * standard_normal(gen, (m, dim))
        r, k = _weighted_terms(log_integrand, log_mix(X), X)
        parts.append(math.fsum(r))
        n_inf += k
    safe_mean = math.fsum(parts) / s_safe
    budget = dict(inner.budget, S_safe=s_safe)
    strata = dict(inner.strata_values, safe=safe_mean)
    return Estimate((1.0 - beta) * inner.value + beta * safe_mean, budget, strata, inner.n_infinite + n_inf)


# Above this many proposals (and S * a >= _ASYMPTOTIC_MIN_MEAN) gamma uses
# 1/(S a) * (1 + (1 - a)/(S a)) instead of summing the truncated binomial.
_ASYMPTOTIC_S = 10 ** 6
_ASYMPTOTIC_MIN_MEAN = 1e4


def gamma_factor(S: int, a: float) -> float:
    """``E[1/K]`` for ``K ~ Binomial(S, a)`` conditioned on ``K >= 1``.

    The variance of a fixed-budget rejection estimator is ``Var_q[h]`` times
    this factor. Terms are summed in log space over the window carrying
    non-negligible binomial mass, with compensated summation.
    """
    S = int(S)
    if S < 1:
        raise ValueError("S must be >= 1")
    if not 0.0 < a <= 1.0:
        raise ValueError(f"acceptance probability must lie in (0, 1], got {a}")
    if a == 1.0:
        return 1.0 / S
    mean = S * a
    if S > _ASYMPTOTIC_S and mean >= _ASYMPTOTIC_MIN_MEAN:
        return (1.0 + (1.0 - a) / mean) / mean
    sd = math.sqrt(mean * (1.0 - a))
    lo = max(1, int(mean - 40.0 * sd - 40))
    hi = min(S, int(mean + 40.0 * sd + 40))
    k = np.arange(lo, hi + 1, dtype=float)
    log_pmf = (gammaln(S + 1.0) - gammaln(k + 1.0) - gammaln(S - k + 1.0)
               + k * math.log(a) + (S - k) * math.log1p(-a))
    num = math.fsum(np.exp(log_pmf - np.log(k)))
    log_p0 = S * math.log1p(-a)
    denom = -math.expm1(log_p0)
    return min(1.0, max(1.0 / S, num / denom))


def rejection_mc(model, h: Callable, S: int, rng, batch_size: int = DEFAULT_BATCH) -> Estimate:
    """Plain average of ``h`` over the accepted samples of ``S`` rejection proposals."""
    gen = as_generator(rng)
    sums, n_acc = [], 0
    for start in range(0, S, batch_size):
        batch = rejection_sample(model, min(batch_size, S - start), gen)
        if len(batch):
            sums.append(math.fsum(np.asarray(h(batch.points), float)))
            n_acc += len(batch)
    if n_acc == 0:
        raise NoAcceptanceError(f"no proposal accepted out of {S}")
    return Estimate(math.fsum(sums) / n_acc, {"proposals": S, "acceptances": n_acc})


def log_error(estimate, truth):
    """``log|I_hat - I| - log I``, floored at ``LOG_ERROR_FLOOR - log I``."""
    diff = abs(float(estimate) - truth)
    log_diff = math.log(diff) if diff > 0 else LOG_ERROR_FLOOR
    return max(log_diff, LOG_ERROR_FLOOR) - math.log(truth)


@dataclass
class ReplicationStats:
    values: np.ndarray
    mean: float
    std: float
    errors: Optional[np.ndarray] = None
    error_mean: Optional[float] = None
    error_std: Optional[float] = None
    n_failed: int = 0
    n_flagged: int = 0

    def as_row(self):
        return {
            "R": int(self.values.size + self.n_failed),
            "mean": self.mean,
            "stddev": self.std,
            "error_mean": self.error_mean,
            "error_std": self.error_std,
            "flags": self.n_flagged,
            "failed": self.n_failed,
        }


def replicate(estimator: Callable, R: int, rng, truth: Optional[float] = None, n_jobs: int = 1) -> ReplicationStats:
    """Run ``estimator(generator)`` ``R`` times on independent child streams.

    Replications raising a :class:`SmmError` (e.g. no acceptances) are
    counted in ``n_failed`` and excluded. Aggregation is in replication order,
    so results do not depend on ``n_jobs``.
    """
    if R < 2:
        raise ValueError("need R >= 2 replications")
    base = rng if isinstance(rng, RngState) else RngState(int(as_generator(rng).integers(2 ** 63)))

    def run(r):
        try:
            return estimator(base.child(r).generator())
        except SmmError as err:
            logger.debug("replication %d failed: %s", r, err)
            return None

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, range(R)))
    else:
        results = [run(r) for r in range(R)]
    ok = [res for res in results if res is not None]
    values = np.array([float(res) for res in ok])
    flagged = sum(1 for res in ok if isinstance(res, Estimate) and res.flagged)
    mean = math.fsum(values) / values.size if values.size else float("nan")
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    stats = ReplicationStats(values, mean, std, n_failed=R - len(ok), n_flagged=flagged)
    if truth is not None and values.size:
        errs = np.array([log_error(v, truth) for v in values])
        stats.errors = errs
        stats.error_mean = float(np.mean(errs))
        stats.error_std = float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0
    return stats
