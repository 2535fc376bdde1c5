"""Black-box variational inference for squared mixtures and Gaussian-mixture baselines.

Two gradient estimators are provided:

* the stratified reparameterized objective (:func:`delta_vi_objective`), whose
  strata are the signed pairwise components of the squared model, and
* the score-function estimator with a leave-one-out baseline
  (:func:`rloo_gradient`) driven by exact samples of the model.

Gradients come from the tape in :mod:`smmkit.autodiff`.
"""

import heapq
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .exceptions import (
    GradientAtZeroError,
    InputError,
    InsufficientAcceptanceError,
    SmmError,
    TrainingAbortedError,
    UnsupportedTargetError,
)
from .mixture import AdditiveMixture, ComplexSmm
from .rng import as_generator
from .samplers import ARITS_EPS, ARITS_TRAIN_BOUNDS, arits_sample, rejection_sample_exact_n
from .special import standard_normal

logger = logging.getLogger(__name__)

__all__ = [
    "ParamVector",
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "init_params",
    "grad_log_q",
    "log_q_graph",
    "rloo_gradient",
    "delta_vi_objective",
    "selbo",
    "adam_step",
    "train",
]

OBJECTIVES = ("delta_vi", "rloo_rejection", "rloo_arits", "selbo_gmm")


@dataclass
class ParamVector:
    """Unconstrained parameters of a squared mixture (``kind="squared"``) or a GMM.

    A GMM carries ``logits`` mapped to the simplex by softmax instead of
    ``weights_re``/``weights_im``. The same container is used for gradients.
    """

    means: np.ndarray
    log_stddevs: np.ndarray
    weights_re: Optional[np.ndarray] = None
    weights_im: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None

    @property
    def kind(self):
        return "gmm" if self.logits is not None else "squared"

    @property
    def shape(self):
        return self.means.shape

    def _fields(self):
        if self.kind == "gmm":
            return ("means", "log_stddevs", "logits")
        return ("means", "log_stddevs", "weights_re", "weights_im")

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, f)) for f in self._fields()])

    def with_flat(self, vec):
        """Copy with values taken from a flat vector laid out as :meth:`flat`."""
        vec = np.asarray(vec, dtype=float)
        out, pos = {}, 0
        for f in self._fields():
            arr = getattr(self, f)
            out[f] = vec[pos:pos + arr.size].reshape(arr.shape).copy()
            pos += arr.size
        return replace(self, **out)

    def weight_mask(self):
        """Flat boolean mask of the mixture-weight entries (weight decay applies there)."""
        return np.concatenate([
            np.full(getattr(self, f).size, f in ("weights_re", "weights_im", "logits"))
            for f in self._fields()
        ])

    def zeros_like(self):
        return self.with_flat(np.zeros(self.flat().size))

    def to_model(self):
        stds = np.exp(self.log_stddevs)
        if self.kind == "gmm":
            z = self.logits - self.logits.max()
            pi = np.exp(z) / np.exp(z).sum()
            return AdditiveMixture(pi, self.means, stds)
        return ComplexSmm(self.weights_re + 1j * self.weights_im, self.means, stds)

    @classmethod
    def from_model(cls, model):
        if isinstance(model, AdditiveMixture):
            with np.errstate(divide="ignore"):
                logits = np.log(model.coeffs)
            return cls(model.means.copy(), np.log(model.stddevs), logits=logits)
        return cls(model.means.copy(), np.log(model.stddevs), model.weights_re, model.weights_im)


def init_params(kind, K, D, rng, mean_range=(-1.0, 1.0), std_range=(1.0, 3.0)):
    """Random initialization: uniform means and stddevs; real weights Unif(0, 1)
    and imaginary weights N(0, 1) for squared models, uniform logits for GMMs."""
    gen = as_generator(rng)
    means = gen.uniform(*mean_range, size=(K, D))
    log_std = np.log(gen.uniform(*std_range, size=(K, D)))
    if kind == "gmm":
        return ParamVector(means, log_std, logits=np.zeros(K))
    return ParamVector(means, log_std, gen.uniform(0.0, 1.0, K), gen.standard_normal(K))


def _leaves(params):
    return {f: ad.Var(getattr(params, f)) for f in params._fields()}


def _grad_from(params, leaves):
    return replace(params, **{
        f: np.zeros_like(getattr(params, f)) if v.grad is None else v.grad for f, v in leaves.items()
    })


# -- graph builders ---------------------------------------------------------

def _component_logpdf_graph(P, X):
    S, D = X.shape
    sig = ad.exp(P["log_stddevs"])
    return ad.gauss_logpdf(X.reshape(S, 1, D), P["means"], sig).sum(axis=2)


def _pair_terms(P):
    """Pairwise signed coefficients, log-masses and product Gaussians as graph nodes."""
    K = P["means"].shape[0]
    ks, js = np.triu_indices(K)
    mult = np.where(ks == js, 1.0, 2.0)
    a, b = P["weights_re"], P["weights_im"]
    coef = (a[ks] * a[js] + b[ks] * b[js]) * mult
    mu, log_sig = P["means"], P["log_stddevs"]
    var_k, var_j = ad.exp(log_sig[ks] * 2.0), ad.exp(log_sig[js] * 2.0)
    sum_var = var_k + var_j
    log_c = ad.gauss_logpdf(mu[ks], mu[js], ad.exp(ad.log(sum_var) * 0.5)).sum(axis=1)
    # product Gaussian: s^2 = vk vj / (vk + vj), m = (mu_k vj + mu_j vk) / (vk + vj)
    s2 = var_k * var_j / sum_var
    m = (mu[ks] * var_j + mu[js] * var_k) / sum_var
    return coef, log_c, m, ad.exp(ad.log(s2) * 0.5)


def _log_Z_graph(coef, log_c):
    shift = float(np.max(log_c.value))
    return ad.log((coef * ad.exp(log_c - shift)).sum()) + shift


def log_q_graph(P, X, log_Z=None):
    """log density of the model described by leaf dict ``P`` at rows of ``X``."""
    X = ad.const(X)
    lq = _component_logpdf_graph(P, X)
    if "logits" in P:
        log_pi = P["logits"] - ad.logsumexp(P["logits"], axis=0)
        return ad.logsumexp(lq + log_pi, axis=1)
    shift = np.max(lq.value, axis=1, keepdims=True)
    e = ad.exp(lq - shift)
    re = (e * P["weights_re"]).sum(axis=1)
    im = (e * P["weights_im"]).sum(axis=1)
    if log_Z is None:
        coef, log_c, _, _ = _pair_terms(P)
        log_Z = _log_Z_graph(coef, log_c)
    return ad.log(ad.square(re) + ad.square(im)) + (2.0 * shift[:, 0]) - log_Z


def _target_graph(target, X):
    """log p~ at the rows of ``X``, differentiable in ``X`` through the target's input gradient."""
    value = target.log_prob(X.value)
    if not X.requires_grad:
        return ad.const(value)
    grad_fn = getattr(target, "grad_log_prob", None)
    if grad_fn is None:
        raise UnsupportedTargetError(f"target {getattr(target, 'name', target)!r} has no input gradient")
    return ad.external(value, X, grad_fn(X.value))


# -- public gradient operations ---------------------------------------------

def _as_params(model):
    return model if isinstance(model, ParamVector) else ParamVector.from_model(model)


def grad_log_q(model, x, weights=None):
    """Gradient of ``sum_s weights_s log q(x_s)`` (one point: of ``log q(x)``).

    Returns a :class:`ParamVector` holding derivatives for every parameter.
    """
    params = _as_params(model)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    P = _leaves(params)
    with np.errstate(divide="ignore"):
        lq = log_q_graph(P, X)
    if not np.all(np.isfinite(lq.value)):
        raise GradientAtZeroError("log density is -inf at an evaluation point")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, float)
    ad.backward((lq * w).sum())
    return _grad_from(params, P)


def rloo_gradient(model, target, samples):
    """Score-function gradient of the reverse KL with a leave-one-out baseline.

    ``(1/S) sum_s [l_s - mean_{t != s} l_t] grad log q(x_s)`` with
    ``l = log q - log p~``. Returns ``(mean l, gradient)``.
    """
    params = _as_params(model)
    X = samples.points if hasattr(samples, "points") else np.asarray(samples, float)
    S = X.shape[0]
    if S < 2:
        raise InputError("the leave-one-out baseline needs at least 2 samples")
    P = _leaves(params)
    lq = log_q_graph(P, X)
    log_p = np.asarray(target.log_prob(X), float)
    ell = lq.value - log_p
    # gaps of log q and log p~ taken separately: a constant offset in log p~ cancels
    # exactly whenever the offset values themselves are exact
    centered = (lq.value - lq.value[0]) - (log_p - log_p[0])
    c = centered - (centered.sum() - centered) / (S - 1)
    ad.backward((lq * (c / S)).sum())
    return float(ell.mean()), _grad_from(params, P)


def _draw_z(gen, n_strata, n, dim):
    return standard_normal(gen, (n_strata * n, dim)).reshape(n_strata, n, dim)


def delta_vi_objective(model, target, S, rng=None, z=None):
    """Stratified reparameterized reverse-KL objective and its gradient.

    Strata are the expanded pairwise components of the squared model; each gets
    ``floor(S / n_pairs)`` draws ``x = m + s * z``. The value is
    ``sum_p (w_p / Z) mean_p[log q(x) - log p~(x)]`` and the gradient flows
    through the coefficients ``w_p / Z``, the sample paths and ``log q``.

    ``z`` of shape ``(n_pairs, n, D)`` freezes the randomness.
    Returns ``(value, gradient)``.
    """
    params = _as_params(model)
    if params.kind == "gmm":
        return selbo(params, target, S, rng, z)
    kept = np.array([i for i, (k, j) in enumerate(_pair_list(params.means.shape[0]))
                     if _coef_value(params, k, j) != 0.0])
    n_pairs = kept.size
    if z is None:
        n = S // n_pairs
        if n < 1:
            raise InputError(f"S={S} is smaller than the number of strata ({n_pairs})")
        z = _draw_z(as_generator(rng), n_pairs, n, params.means.shape[1])
    z = np.asarray(z, float)
    n = z.shape[1]
    P = _leaves(params)
    coef, log_c, m, s = _pair_terms(P)
    log_Z = _log_Z_graph(coef, log_c)
    w_over_Z = coef * ad.exp(log_c - log_Z)
    rows = np.repeat(kept, n)
    X = m[rows] + s[rows] * z.reshape(-1, z.shape[2])
    ell = log_q_graph(P, X, log_Z) - _target_graph(target, X)
    value = (ell * w_over_Z[rows]).sum() / n
    ad.backward(value)
    return float(value.value), _grad_from(params, P)


def selbo(model, target, S, rng=None, z=None):
    """Stratified objective for a Gaussian mixture: ``sum_k pi_k mean_k[log q - log p~]``
    with ``floor(S / K)`` reparameterized draws per component."""
    params = _as_params(model)
    K, D = params.means.shape
    if z is None:
        n = S // K
        if n < 1:
            raise InputError(f"S={S} is smaller than the number of strata ({K})")
        z = _draw_z(as_generator(rng), K, n, D)
    z = np.asarray(z, float)
    n = z.shape[1]
    P = _leaves(params)
    pi = ad.exp(P["logits"] - ad.logsumexp(P["logits"], axis=0))
    rows = np.repeat(np.arange(K), n)
    X = P["means"][rows] + ad.exp(P["log_stddevs"])[rows] * z.reshape(-1, D)
    ell = log_q_graph(P, X) - _target_graph(target, X)
    value = (ell * pi[rows]).sum() / n
    ad.backward(value)
    return float(value.value), _grad_from(params, P)


def _pair_list(K):
    return list(zip(*np.triu_indices(K)))


def _coef_value(params, k, j):
    return params.weights_re[k] * params.weights_re[j] + params.weights_im[k] * params.weights_im[j]


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    n_rejected: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grad, state, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with decoupled weight decay on the mixture weights only.

    A non-finite gradient leaves the parameters and moments unchanged and
    increments ``state.n_rejected``. Returns the new :class:`ParamVector`
    (``state`` is updated in place).
    """
    theta = params.flat()
    g = grad.flat()
    if not np.all(np.isfinite(g)):
        state.n_rejected += 1
        logger.warning("adam_step: non-finite gradient, step rejected")
        return params
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    step = lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        step = step + lr * weight_decay * theta * params.weight_mask()
    return params.with_flat(theta - step)


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    """Training hyperparameters. ``S`` is the number of samples per step."""

    objective: str = "rloo_rejection"
    S: int = 10_000
    lr: float = 0.01
    weight_decay: float = 0.0
    max_steps: int = 5000
    patience: Optional[int] = 500
    checkpoints: int = 5
    reselect_reps: int = 5
    seed: int = 0
    max_proposals_factor: int = 200
    arits_bounds: tuple = ARITS_TRAIN_BOUNDS

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.S < 2:
            raise ValueError("S must be at least 2")
        if self.max_steps < 1 or self.checkpoints < 1 or self.reselect_reps < 1:
            raise ValueError("max_steps, checkpoints and reselect_reps must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        self.arits_bounds = tuple(self.arits_bounds)

    def to_dict(self):
        d = dict(self.__dict__)
        d["arits_bounds"] = list(self.arits_bounds)
        return d


@dataclass
class TrainResult:
    params: ParamVector
    trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    stopped_at: int = 0
    selected_step: int = 0

    @property
    def model(self):
        return self.params.to_model()

    @property
    def losses(self):
        return np.array([row[1] for row in self.trace])


def _objective_step(params, target, cfg, gen):
    if cfg.objective in ("delta_vi", "selbo_gmm"):
        return delta_vi_objective(params, target, cfg.S, gen)
    model = params.to_model()
    if cfg.objective == "rloo_rejection":
        batch = rejection_sample_exact_n(model, cfg.S, cfg.max_proposals_factor * cfg.S, gen)
    else:
        lo, hi = cfg.arits_bounds
        batch = arits_sample(model, cfg.S, lo, hi, ARITS_EPS, gen)
    return rloo_gradient(params, target, batch)


def _check_kind(params, cfg):
    if (cfg.objective == "selbo_gmm") != (params.kind == "gmm"):
        raise ValueError(f"objective {cfg.objective!r} does not match a {params.kind} model")


def train(model, target, cfg: TrainConfig, rng=None, clock=time.perf_counter) -> TrainResult:
    """Optimize ``model`` towards ``target`` with Adam.

    Stops after ``cfg.max_steps`` or when the loss has not improved for
    ``cfg.patience`` steps. The ``cfg.checkpoints`` lowest-loss parameter sets
    are kept; the returned one has the lowest mean loss over
    ``cfg.reselect_reps`` fresh re-estimates. Failed steps (non-finite loss or
    gradient, sampling failures) are rolled back and flagged; three in a row
    abort with :class:`TrainingAbortedError`.
    """
    params = _as_params(model)
    _check_kind(params, cfg)
    gen = as_generator(cfg.seed if rng is None else rng)
    state = AdamState.zeros(params.flat().size)
    result = TrainResult(params)
    heap = []  # (-loss, step, params): a max-heap of the best checkpoints
    best, since_best, failures = math.inf, 0, 0
    t0 = clock()
    step = 0
    for step in range(1, cfg.max_steps + 1):
        try:
            loss, grad = _objective_step(params, target, cfg, gen)
        except (InsufficientAcceptanceError, SmmError, FloatingPointError) as err:
            loss, grad = math.nan, None
            result.flags.append((step, f"objective failed: {err}"))
        if grad is None or not math.isfinite(loss) or not np.all(np.isfinite(grad.flat())):
            failures += 1
            result.flags.append((step, "rollback"))
            if failures >= 3:
                raise TrainingAbortedError(f"three consecutive failed steps ending at step {step}")
            continue
        failures = 0
        result.trace.append((step, loss, clock() - t0))
        entry = (-loss, step, params)
        if len(heap) < cfg.checkpoints:
            heapq.heappush(heap, entry)
        elif loss < -heap[0][0]:
            heapq.heapreplace(heap, entry)
        if loss < best:
            best, since_best = loss, 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
        try:
            new = adam_step(params, grad, state, cfg.lr, cfg.weight_decay)
            new.to_model()
        except SmmError as err:
            result.flags.append((step, f"invalid update rolled back: {err}"))
            continue
        params = new
    result.stopped_at = step
    if not heap:
        raise TrainingAbortedError("no successful training step")
    result.params, result.selected_step = _reselect(heap, target, cfg, gen)
    return result


def _reselect(heap, target, cfg, gen):
    best = None
    for _, step, params in sorted(heap, key=lambda e: e[1]):
        vals = []
        for _ in range(cfg.reselect_reps):
            try:
                vals.append(_objective_step(params, target, cfg, gen)[0])
            except SmmError:
                vals.append(math.inf)
        score = float(np.mean(vals))
        if best is None or score < best[0]:
            best = (score, step, params)
    return best[2], best[1]
