"""Approximation-quality diagnostics: PSIS k-hat, sample KL estimates, 1-d evidence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp, roots_legendre

from .datasets import Dataset
from .vi import SampleBank, sample_posterior

K_INF = math.inf


class DegenerateTailError(ValueError):
    pass


class IntervalError(ValueError):
    pass


def verdict(k_hat: float) -> str:
    if k_hat < 0.5:
        return "close"
    if k_hat < 0.7:
        return "useful"
    return "poor"


@dataclass(frozen=True)
class PsisReport:
    k_hat: float
    tail_count: int
    S: int
    verdict: str
    sigma_hat: float = math.nan

    def as_dict(self) -> dict:
        k = self.k_hat if math.isfinite(self.k_hat) else "inf"
        return {"k_hat": k, "tail_count": self.tail_count, "S": self.S, "verdict": self.verdict}


def importance_ratios(bank: SampleBank, model, data: Dataset | None = None) -> np.ndarray:
    """log r_s = log p(D | theta_s) + log p(theta_s) - log q(theta_s)."""
    lj = np.asarray(model.log_joint(bank.theta, data))
    return lj - bank.log_q


def tail_size(S: int) -> int:
    return int(min(math.ceil(0.2 * S), math.ceil(3 * math.sqrt(S))))


def gpd_fit_zhang_stephens(x: np.ndarray, prior_weight: float = 10.0, prior_k: float = 0.5):
    """Generalized Pareto fit to positive exceedances ``x``.

    Profile-likelihood estimate of Zhang & Stephens (2009) with the weakly
    informative prior used by PSIS: the k estimate is shrunk towards 0.5
    with ``prior_weight`` pseudo-observations.  Returns (k, sigma).
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (3.0 * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    ll = n * (np.log(-b / k) - k - 1.0)
    w = 1.0 / np.exp(ll - ll[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w = w / w.sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_weight * prior_k) / (n + prior_weight)
    return k_post, sigma


def fit_gpd_tail(log_ratios) -> tuple[float, float, int]:
    """Fit a generalized Pareto to the right tail of exp(log_ratios).

    Returns (k_hat, sigma_hat, tail_count).
    """
    lr = np.asarray(log_ratios, dtype=float)
    S = len(lr)
    if S < 100:
        raise ValueError(f"need at least 100 ratios, got {S}")
    if not np.all(np.isfinite(lr)):
        raise ValueError("log ratios must be finite")
    M = tail_size(S)
    srt = np.sort(lr)
    tail, cut = srt[S - M:], srt[S - M - 1]
    top = srt[-1]
    x = np.exp(tail - top) - np.exp(cut - top)
    x = x[x > 0]
    if len(np.unique(x)) < 5:
        raise DegenerateTailError("fewer than 5 distinct values in the tail")
    k, sigma = gpd_fit_zhang_stephens(x)
    return float(k), float(sigma), M


def psis_khat(family, model, data: Dataset | None = None, S_diag: int = 5000,
              rng: np.random.Generator | None = None) -> PsisReport:
    rng = np.random.default_rng(0) if rng is None else rng
    bank = sample_posterior(family, S_diag, rng)
    return psis_report(importance_ratios(bank, model, data))


def psis_report(log_ratios) -> PsisReport:
    """k-hat with the divergence convention: k > 10 or a failed fit reports +inf.

    Constant ratios still raise DegenerateTailError.
    """
    S = len(log_ratios)
    lr = np.asarray(log_ratios, dtype=float)
    if not np.all(np.isfinite(lr)):
        return PsisReport(K_INF, tail_size(S), S, "poor")
    try:
        k, sigma, M = fit_gpd_tail(lr)
    except (FloatingPointError, ZeroDivisionError):
        return PsisReport(K_INF, tail_size(S), S, "poor")
    except DegenerateTailError:
        # distinct log ratios that all underflow next to the largest one:
        # the tail is dominated by a single draw, i.e. the fit diverges
        if len(np.unique(np.sort(lr)[S - tail_size(S):])) >= 5:
            return PsisReport(K_INF, tail_size(S), S, "poor")
        raise
    if not math.isfinite(k) or k > 10:
        return PsisReport(K_INF, M, S, "poor")
    return PsisReport(k, M, S, verdict(k), sigma)


# ---------------------------------------------------------------------------
# KL estimates

@dataclass(frozen=True)
class KLEstimate:
    value: float
    se: float

    def __iter__(self):
        return iter((self.value, self.se))


def _mc(terms) -> KLEstimate:
    terms = np.asarray(terms, dtype=float)
    return KLEstimate(float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(len(terms))))


def kl_vs_analytic(family, analytic_log_pdf, S: int, rng: np.random.Generator) -> KLEstimate:
    """(1/S) sum log q(theta_s) - log p(theta_s | D), theta_s ~ q."""
    bank = sample_posterior(family, S, rng)
    return _mc(bank.log_q - np.asarray(analytic_log_pdf(bank.theta)))


def kl_via_evidence(family, model, data: Dataset | None, log_Z: float, S: int,
                    rng: np.random.Generator) -> KLEstimate:
    """KL(q || posterior) using the joint density and a known log evidence."""
    bank = sample_posterior(family, S, rng)
    return _mc(-importance_ratios(bank, model, data) + log_Z)


# ---------------------------------------------------------------------------
# one-dimensional quadrature

@lru_cache(maxsize=8)
def _legendre(n: int):
    return roots_legendre(n)


def gauss_legendre(lo: float, hi: float, nodes: int):
    x, w = _legendre(nodes)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def log_evidence_quadrature_1d(model, lo: float, hi: float, nodes: int = 2048,
                               data: Dataset | None = None, mass_tol: float = 1e-10) -> float:
    """log of the integral of p(D | theta) p(theta) over [lo, hi] (unconstrained theta)."""
    if model.p != 1:
        raise ValueError("quadrature evidence needs a one-parameter model")
    x, w = gauss_legendre(lo, hi, nodes)
    lj = np.asarray(model.log_joint(x[:, None], data))
    log_z = float(logsumexp(lj + np.log(w)))
    ends = np.asarray(model.log_joint(np.array([[lo], [hi]]), data))
    if np.any(ends - log_z + np.log(hi - lo) > np.log(mass_tol)):
        raise IntervalError(f"[{lo}, {hi}] leaves non-negligible posterior mass at the endpoints")
    return log_z
