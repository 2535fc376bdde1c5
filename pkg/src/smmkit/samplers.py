"""Samplers for additive mixtures and squared subtractive mixtures."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import (
    BoundsTooTightError,
    DegenerateConditioningError,
    InsufficientAcceptanceError,
)
from .mixture import AdditiveMixture, ComplexSmm
from .rng import as_generator, open_uniform
from .special import gaussian_cdf, standard_normal

__all__ = [
    "SampleBatch",
    "stratified_allocation",
    "ancestral_sample",
    "stratified_sample",
    "arits_sample",
    "arits_transform",
    "rejection_sample",
    "rejection_sample_exact_n",
]

ARITS_BOUNDS = (-100.0, 100.0)
ARITS_TRAIN_BOUNDS = (-50.0, 50.0)
ARITS_EPS = 1e-6
_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class SampleBatch:
    """Sampled points plus their provenance.

    ``component`` holds the mixture component of each row for ancestral and
    stratified draws. Rejection batches record ``n_proposed``; ``allocation``
    is the per-component count of a stratified batch.
    """

    points: np.ndarray
    component: Optional[np.ndarray] = None
    n_proposed: Optional[int] = None
    allocation: Optional[np.ndarray] = None

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_accepted(self):
        return self.points.shape[0]


def _signed(model):
    return model.expansion if isinstance(model, ComplexSmm) else model


def _draw_from_components(mix, comp, gen):
    z = standard_normal(gen, (comp.shape[0], mix.dim))
    return mix.means[comp] + mix.stddevs[comp] * z


def ancestral_sample(mix: AdditiveMixture, S: int, rng) -> SampleBatch:
    """i.i.d. draws: a component from Categorical(coeffs), then its Gaussian."""
    gen = as_generator(rng)
    u = open_uniform(gen, S)
    cdf = np.cumsum(mix.coeffs)
    comp = np.minimum(np.searchsorted(cdf, u, side="right"), mix.n_components - 1)
    # rounding in the cumulative sum must not land on a zero-mass component
    comp = np.where(mix.coeffs[comp] > 0, comp, np.argmax(mix.coeffs))
    return SampleBatch(_draw_from_components(mix, comp, gen), component=comp)


def stratified_allocation(coeffs, S):
    """``floor(coeff_k * S)`` per component, remainder handed out one each in
    descending-coefficient order (ties by index)."""
    coeffs = np.asarray(coeffs, dtype=float)
    alloc = np.floor(coeffs * S).astype(np.int64)
    rem = int(S - alloc.sum())
    if rem > 0:
        order = np.argsort(-coeffs, kind="stable")
        alloc[order[:rem]] += 1
    return alloc


def stratified_sample(mix: AdditiveMixture, S: int, rng) -> SampleBatch:
    """Per-component fixed-count draws, grouped by component."""
    gen = as_generator(rng)
    alloc = stratified_allocation(mix.coeffs, S)
    comp = np.repeat(np.arange(mix.n_components), alloc)
    return SampleBatch(_draw_from_components(mix, comp, gen), component=comp, allocation=alloc)


def arits_transform(model, U, L=ARITS_BOUNDS[0], B=ARITS_BOUNDS[1], eps=ARITS_EPS):
    """Map uniforms ``U`` (S, D) to samples by sequential conditional-CDF inversion.

    Each coordinate is found by bisection on ``[L, B]`` until the bracket is
    no wider than ``eps``; the bracket midpoint is returned.
    """
    sm = _signed(model)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    S, D = U.shape
    X = np.zeros((S, D))
    signs = sm.signs
    for d in range(D):
        lw = sm.log_prefix_weights(X, d)
        shift = lw.max(axis=1, keepdims=True)
        scaled = signs * np.exp(lw - shift)
        evidence = scaled.sum(axis=1)
        if np.any(~(evidence > 0)):
            raise DegenerateConditioningError(f"zero marginal evidence while sampling dimension {d}")
        m_d = sm.means[:, d]
        s_d = sm.stddevs[:, d]

        def cdf(t):
            c = (scaled * gaussian_cdf((t[:, None] - m_d) / s_d)).sum(axis=1) / evidence
            return np.clip(c, 0.0, 1.0)

        lo = np.full(S, float(L))
        hi = np.full(S, float(B))
        c_lo, c_hi = cdf(lo), cdf(hi)
        if S and (c_lo.max() > _BOUND_TOL or c_hi.min() < 1.0 - _BOUND_TOL):
            raise BoundsTooTightError(d, float(c_lo.max()), float(c_hi.min()))
        u = U[:, d]
        width = float(B) - float(L)
        while width > eps:
            mid = lo + (hi - lo) / 2
            above = cdf(mid) > u
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            width /= 2
        X[:, d] = lo + (hi - lo) / 2
    return X


def arits_sample(model, S: int, L=ARITS_BOUNDS[0], B=ARITS_BOUNDS[1], eps=ARITS_EPS, rng=None) -> SampleBatch:
    """Exact (up to ``eps``) i.i.d. samples from a squared mixture."""
    if not L < B:
        raise ValueError(f"need L < B, got L={L}, B={B}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    sm = _signed(model)
    gen = as_generator(rng)
    U = open_uniform(gen, (S, sm.dim))
    return SampleBatch(arits_transform(sm, U, L, B, eps))


def log_acceptance_ratio(model, X):
    """log of ``q(x) / (M q+(x))`` with ``M = Z+ / Z``; always <= 0 up to rounding."""
    sm = _signed(model)
    log_q = model.log_density(X) if isinstance(model, ComplexSmm) else sm.log_density(X)
    return np.minimum(log_q + sm.log_Z - sm.log_unnormalized_plus(X), 0.0)


def rejection_sample(model, S: int, rng) -> SampleBatch:
    """Fixed-budget rejection: ``S`` proposals from q+, returns the accepted ones."""
    sm = _signed(model)
    gen = as_generator(rng)
    prop = ancestral_sample(sm.q_plus, S, gen)
    u = open_uniform(gen, S)
    if not sm.has_negatives:
        keep = np.ones(S, dtype=bool)
    else:
        keep = np.log(u) <= log_acceptance_ratio(model, prop.points)
    return SampleBatch(prop.points[keep], component=prop.component[keep], n_proposed=S)


def rejection_sample_exact_n(model, N: int, max_proposals: int, rng, round_size=None) -> SampleBatch:
    """Rejection rounds until ``N`` acceptances; the first ``N`` are returned.

    Each round proposes ``round_size`` points (default ``N``) without exceeding
    ``max_proposals`` in total.
    """
    gen = as_generator(rng)
    round_size = int(round_size or N)
    kept, comps, n_acc, n_prop = [], [], 0, 0
    while n_acc < N:
        budget = min(round_size, max_proposals - n_prop)
        if budget <= 0:
            raise InsufficientAcceptanceError(n_acc, N, n_prop)
        batch = rejection_sample(model, budget, gen)
        n_prop += budget
        kept.append(batch.points)
        comps.append(batch.component)
        n_acc += len(batch)
    points = np.concatenate(kept)[:N]
    return SampleBatch(points, component=np.concatenate(comps)[:N], n_proposed=n_prop)
