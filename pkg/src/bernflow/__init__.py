"""Variational inference with Bernstein-polynomial normalizing flows."""

from .bernstein import SandwichFlow, sandwich_forward, sandwich_inverse
from .diagnostics import PsisReport, kl_via_evidence, kl_vs_analytic, psis_khat
from .maf import MultivariateBernsteinFlow, mv_forward
from .models import ProbabilisticModel
from .vi import FitResult, TrainConfig, make_family, sample_posterior, train

__version__ = "0.1.0"

__all__ = [
    "FitResult", "MultivariateBernsteinFlow", "ProbabilisticModel", "PsisReport", "SandwichFlow",
    "TrainConfig", "kl_via_evidence", "kl_vs_analytic", "make_family", "mv_forward", "psis_khat",
    "sample_posterior", "sandwich_forward", "sandwich_inverse", "train",
]
