"""Experiment harnesses: estimator scaling on random instances, the safe-component
grid study, and normalizing-constant estimation with given proposals.

Every result row carries the seed of the stream that produced it; rerunning a
row with that seed reproduces it (apart from the ``time_s`` column).
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .estimators import (
    DEFAULT_BATCH,
    SafeProposalSpec,
    delta_is,
    log_error,
    rejection_mc,
    replicate,
    safe_delta_is,
    uis,
)
from .exceptions import SmmError
from .mixture import AdditiveMixture
from .rng import RngState
from .samplers import arits_sample, ancestral_sample, rejection_sample_exact_n
from .targets import make_catalog_target, make_rq1_instance, perturb_proposal

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentSpec",
    "RESULT_COLUMNS",
    "SAFE_BETAS",
    "SAFE_SIGMAS",
    "run_rq1",
    "run_safe_study",
    "run_nc_estimation",
    "run_spec",
]

RESULT_COLUMNS = ["experiment", "method", "D", "K", "S", "seed", "error", "time_s", "flags"]
SAFE_BETAS = tuple(round(0.1 * i, 1) for i in range(10))
SAFE_SIGMAS = (3.0, 5.0, 7.0, 9.0)


@dataclass
class ExperimentSpec:
    experiment: str
    params: dict = field(default_factory=dict)
    budgets: list = field(default_factory=list)
    reps: int = 30
    seed: int = 0
    output: str = "results"

    def __post_init__(self):
        if self.experiment not in ("rq1", "safe_study", "nc_estimation"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ValueError("budgets must be strictly increasing")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    @classmethod
    def from_dict(cls, doc):
        known = {"experiment", "params", "budgets", "reps", "seed", "output"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**doc)


def _base(rng):
    return rng if isinstance(rng, RngState) else RngState(int(rng))


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _batched_mean(sampler, h, S, batch_size=DEFAULT_BATCH):
    parts, n = [], 0
    for start in range(0, S, batch_size):
        X = sampler(min(batch_size, S - start))
        parts.append(math.fsum(h(X)))
        n += X.shape[0]
    return math.fsum(parts) / n


# -- estimator scaling --------------------------------------------------------

def run_rq1(D, K, budgets, n_instances, rng, reps=1, arits_budget=None, warmup=True):
    """Log-error and wallclock of ΔIS, rejection MC and ARITS MC on random instances.

    ΔIS and rejection run at every budget; ARITS at ``arits_budget`` (default:
    the smallest budget). ``reps`` independent estimates are made per cell.
    """
    base = _base(rng)
    budgets = sorted(budgets)
    arits_budget = budgets[0] if arits_budget is None else arits_budget
    rows = []
    for i in range(n_instances):
        inst_state = base.child(i)
        inst = make_rq1_instance(D, K, inst_state.generator())
        truth = inst.exact_expectation
        f = lambda X: np.exp(inst.log_f(X))
        cells = [("delta_is", S) for S in budgets] + [("rejection", S) for S in budgets]
        cells.append(("arits", arits_budget))
        if warmup:
            _run_rq1_cell(inst, "rejection", 100, f, RngState(0).generator())
            _run_rq1_cell(inst, "arits", 10, f, RngState(0).generator())
        for c, (method, S) in enumerate(cells):
            for r in range(reps):
                state = inst_state.child(1 + c * reps + r)
                try:
                    value, secs = _timed(lambda: _run_rq1_cell(inst, method, S, f, state.generator()))
                    err, flag = log_error(value, truth), 0
                except SmmError as exc:
                    logger.warning("rq1 cell %s S=%d failed: %s", method, S, exc)
                    err, secs, flag = math.nan, math.nan, 1
                rows.append({"experiment": "rq1", "method": method, "D": D, "K": K, "S": S,
                             "seed": state.seed, "instance": i, "rep": r, "error": err,
                             "time_s": secs, "flags": flag})
    return rows


def _run_rq1_cell(inst, method, S, f, gen):
    q = inst.proposal
    if method == "delta_is":
        return delta_is(q, inst.log_integrand, S, gen).value
    if method == "rejection":
        return rejection_mc(q, f, S, gen).value
    if method == "arits":
        return _batched_mean(lambda n: arits_sample(q, n, rng=gen).points, f, S)
    raise ValueError(f"unknown method {method!r}")


def summarize(rows, keys=("method", "S")):
    """Mean and stddev of ``error`` and ``time_s`` grouped by ``keys``."""
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, grp in groups.items():
        err = np.array([r["error"] for r in grp], float)
        secs = np.array([r["time_s"] for r in grp], float)
        ok = np.isfinite(err)
        out.append(dict(zip(keys, key), n=len(grp), failed=int((~ok).sum()),
                        error_mean=float(np.mean(err[ok])) if ok.any() else math.nan,
                        error_std=float(np.std(err[ok], ddof=1)) if ok.sum() > 1 else 0.0,
                        time_mean=float(np.nanmean(secs)) if ok.any() else math.nan))
    return out


# -- safe component study ------------------------------------------------------

def run_safe_study(target_name, beta_grid=SAFE_BETAS, sigma_grid=SAFE_SIGMAS, S=10_000, reps=30,
                   rng=0, noise_scale=0.01):
    """Grid over (beta, sigma_safe) of safe ΔIS for ``int p = 1`` under a noised proposal.

    Every cell uses the same replication streams, so the ``beta = 0`` cells
    equal plain ΔIS. The cell with the smallest empirical variance is marked
    ``selected``.
    """
    base = _base(rng)
    target = make_catalog_target(target_name)
    proposal = perturb_proposal(target, noise_scale, base.child(0).generator())
    log_p = target.log_density
    rep_state = base.child(1)
    rows = []
    for beta in beta_grid:
        for sigma in sigma_grid:
            spec = SafeProposalSpec(beta, sigma)
            stats = replicate(lambda g: safe_delta_is(proposal, spec, log_p, S, g), reps, rep_state, truth=1.0)
            row = {"experiment": "safe_study", "method": "safe_delta_is", "target": target_name,
                   "beta": beta, "sigma_safe": sigma, "S": S, "seed": rep_state.seed}
            row.update(stats.as_row())
            row["variance"] = stats.std ** 2
            rows.append(row)
    finite = [r for r in rows if math.isfinite(r["variance"])]
    best = min(finite, key=lambda r: r["variance"]) if finite else None
    for r in rows:
        r["selected"] = int(r is best)
    return rows


# -- normalizing constants ------------------------------------------------------

def select_safe(proposal, log_integrand, S, reps, rng, beta_grid=SAFE_BETAS, sigma_grid=SAFE_SIGMAS):
    """(beta, sigma) with the smallest empirical estimator variance."""
    best = None
    for beta in beta_grid:
        for sigma in sigma_grid if beta > 0 else sigma_grid[:1]:
            spec = SafeProposalSpec(beta, sigma)
            stats = replicate(lambda g: safe_delta_is(proposal, spec, log_integrand, S, g), reps, rng)
            if stats.values.size > 1 and (best is None or stats.std < best[0]):
                best = (stats.std, spec)
    return best[1] if best else SafeProposalSpec(0.0, sigma_grid[0])


def run_nc_estimation(target_name, proposal, S=10_000, reps=30, rng=0, gmm_proposal=None,
                      log_c=0.0, safe_grid=False, arits_max_dim=32, methods=None):
    """Estimate ``c * int p~`` with several importance-sampling schemes.

    ``proposal`` is a squared mixture; ``gmm_proposal`` an optional additive
    mixture baseline. ``log_c`` scales the target so the truth is known.
    Returns one row per (method, replication).
    """
    base = _base(rng)
    target = make_catalog_target(target_name) if isinstance(target_name, str) else target_name
    if target.exact_log_Z is None:
        raise ValueError("normalizing-constant study needs a target with a known normalizer")
    log_p = lambda X: target.log_prob(X) + log_c
    truth = math.exp(target.exact_log_Z + log_c)
    q = proposal

    def uis_with(sampler, dens):
        return lambda g: uis(log_p, sampler(g), dens, strict=False)

    runners = {
        "uis_rejection": uis_with(lambda g: rejection_sample_exact_n(q, S, 1000 * S, g), q.log_density),
        "delta_is": lambda g: delta_is(q, log_p, S, g),
    }
    if q.dim <= arits_max_dim:
        runners["uis_arits"] = uis_with(lambda g: arits_sample(q, S, rng=g), q.log_density)
    if safe_grid:
        spec = select_safe(q, log_p, S, reps, base.child(99))
        runners["safe_delta_is"] = lambda g: safe_delta_is(q, spec, log_p, S, g)
    if gmm_proposal is not None:
        runners["gmm_uis"] = uis_with(lambda g: ancestral_sample(gmm_proposal, S, g), gmm_proposal.log_density)
    if methods is not None:
        runners = {k: v for k, v in runners.items() if k in methods}
    rows = []
    for m_idx, (name, run) in enumerate(runners.items()):
        for r in range(reps):
            state = base.child(1000 * (m_idx + 1) + r)
            try:
                est, secs = _timed(lambda: run(state.generator()))
                err, flag = log_error(est.value, truth), est.n_infinite
            except SmmError as exc:
                logger.warning("nc cell %s failed: %s", name, exc)
                err, secs, flag = math.nan, math.nan, 1
            rows.append({"experiment": "nc_estimation", "method": name, "D": target.dim,
                         "K": getattr(q, "n_components", None), "S": S, "seed": state.seed,
                         "error": err, "time_s": secs, "flags": flag})
    return rows


# -- spec-driven entry point ----------------------------------------------------

def run_spec(spec, out_dir=None):
    """Run an :class:`ExperimentSpec` (or dict); write ``results.csv`` and ``summary.json``.

    Returns ``(rows, summary)``.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    p = dict(spec.params)
    if spec.experiment == "rq1":
        rows = run_rq1(p.get("D", 16), p.get("K", 2), spec.budgets or [10 ** 3, 10 ** 4],
                       p.get("n_instances", 5), RngState(spec.seed), reps=spec.reps,
                       arits_budget=p.get("arits_budget"), warmup=p.get("warmup", True))
        columns = RESULT_COLUMNS + ["instance", "rep"]
        summary = summarize(rows)
    elif spec.experiment == "safe_study":
        rows = run_safe_study(p.get("target", "deep_ring"), p.get("beta_grid", SAFE_BETAS),
                              p.get("sigma_grid", SAFE_SIGMAS), (spec.budgets or [10 ** 4])[-1],
                              spec.reps, RngState(spec.seed), p.get("noise_scale", 0.01))
        columns = ["experiment", "method", "target", "beta", "sigma_safe", "S", "seed", "R", "mean",
                   "stddev", "variance", "error_mean", "error_std", "flags", "failed", "selected"]
        summary = [r for r in rows if r["selected"]]
    else:
        proposal = io.load_model(p["proposal"])
        gmm = io.load_model(p["gmm_proposal"]) if p.get("gmm_proposal") else None
        if gmm is not None and not isinstance(gmm, AdditiveMixture):
            raise ValueError("gmm_proposal must be an additive model file")
        rows = run_nc_estimation(p.get("target", "ring"), proposal, (spec.budgets or [10 ** 4])[-1],
                                 spec.reps, RngState(spec.seed), gmm, p.get("log_c", 0.0),
                                 p.get("safe_grid", False))
        columns = RESULT_COLUMNS
        summary = summarize(rows, keys=("method",))
    if out_dir is not None:
        out = Path(out_dir)
        io.write_csv(out / "results.csv", rows, columns)
        io.write_json(out / "summary.json", {"schema_version": io.SCHEMA_VERSION,
                                             "spec": spec.__dict__, "summary": summary})
    return rows, summary
