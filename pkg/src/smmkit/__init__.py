"""Sampling, importance sampling and variational inference with squared
subtractive mixtures of diagonal Gaussians."""

from .estimators import (
    Estimate,
    SafeProposalSpec,
    delta_is,
    gamma_factor,
    rejection_mc,
    replicate,
    safe_delta_is,
    uis,
)
from .exceptions import SmmError
from .metrics import MetricReport, estimate_elbo, estimate_fkl, estimate_rkl
from .mixture import (
    AdditiveMixture,
    ComplexSmm,
    GaussianComponent,
    SignedComponent,
    SignedMixture,
    conditional_cdf,
    expand,
    log_density,
    marginal_evidence,
    pairwise_mass,
)
from .rng import RngState
from .samplers import (
    SampleBatch,
    ancestral_sample,
    arits_sample,
    rejection_sample,
    rejection_sample_exact_n,
    stratified_sample,
)
from .special import gaussian_cdf
from .targets import Target, make_blr_target, make_catalog_target, make_rq1_instance, perturb_proposal
from .variational import GaussianMixtureVI, SquaredMixtureVI
from .vi import ParamVector, TrainConfig, adam_step, delta_vi_objective, grad_log_q, rloo_gradient, train

__version__ = "0.1.0"

__all__ = [
    "AdditiveMixture", "ComplexSmm", "GaussianComponent", "SignedComponent", "SignedMixture",
    "conditional_cdf", "expand", "log_density", "marginal_evidence", "pairwise_mass", "gaussian_cdf",
    "RngState", "SampleBatch", "ancestral_sample", "stratified_sample", "arits_sample",
    "rejection_sample", "rejection_sample_exact_n",
    "Estimate", "SafeProposalSpec", "uis", "delta_is", "safe_delta_is", "gamma_factor",
    "rejection_mc", "replicate",
    "Target", "make_catalog_target", "make_blr_target", "make_rq1_instance", "perturb_proposal",
    "MetricReport", "estimate_fkl", "estimate_rkl", "estimate_elbo",
    "ParamVector", "TrainConfig", "grad_log_q", "rloo_gradient", "delta_vi_objective", "adam_step",
    "train", "SquaredMixtureVI", "GaussianMixtureVI", "SmmError",
]
