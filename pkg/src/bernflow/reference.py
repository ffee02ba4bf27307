"""Reference posteriors: conjugate Beta, dense 1-d grids, and adaptive random-walk Metropolis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .datasets import Dataset
from .diagnostics import gauss_legendre, log_evidence_quadrature_1d


class InitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# conjugate Beta posterior

@dataclass(frozen=True)
class BetaPosterior:
    alpha: float
    beta: float

    @property
    def dist(self):
        return stats.beta(self.alpha, self.beta)

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def pdf(self, x):
        return self.dist.pdf(x)

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.beta(self.alpha, self.beta, size=n)


def analytic_beta_posterior(alpha0: float, beta0: float, y) -> BetaPosterior:
    y = np.asarray(y, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("observations must be 0 or 1")
    k = float(y.sum())
    return BetaPosterior(alpha0 + k, beta0 + len(y) - k)


# ---------------------------------------------------------------------------
# 1-d grid posterior

@dataclass(frozen=True)
class GridPosterior:
    x: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    modes: np.ndarray
    log_evidence: float

    def mass(self) -> float:
        return float(np.sum(self.density * self.weights))


def grid_posterior_1d(model, lo: float, hi: float, nodes: int = 2048,
                      data: Dataset | None = None) -> GridPosterior:
    """Posterior density of a one-parameter model on Gauss-Legendre nodes.

    Normalized by the quadrature evidence; the CDF is the running sum of
    node masses and modes are strict interior local maxima of the table.
    """
    log_z = log_evidence_quadrature_1d(model, lo, hi, nodes, data)
    x, w = gauss_legendre(lo, hi, nodes)
    dens = np.exp(np.asarray(model.log_joint(x[:, None], data)) - log_z)
    cdf = np.cumsum(dens * w)
    inner = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])
    return GridPosterior(x, w, dens, cdf, x[1:-1][inner], log_z)


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis

@dataclass
class McmcChain:
    draws: np.ndarray
    log_joint: np.ndarray
    acceptance_rate: float
    n_warmup: int
    n_kept: int
    thinning: int
    seed: int
    chain: int = 0
    scales: np.ndarray = field(default=None)

    def to_csv(self, path, names=None):
        p = self.draws.shape[1]
        names = list(names) if names is not None else [f"theta{j + 1}" for j in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["log_joint"])
            for row, lj in zip(self.draws, self.log_joint):
                w.writerow([repr(float(v)) for v in row] + [repr(float(lj))])


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chain]))


def _initial_state(model, data, rngs, p, init):
    x = np.empty((len(rngs), p))
    lp = np.empty(len(rngs))
    for c, rng in enumerate(rngs):
        for _ in range(10):
            cand = rng.uniform(-2.0, 2.0, size=p) if init is None else np.asarray(init, float)
            val = float(np.asarray(model.log_joint(cand[None], data))[0])
            if np.isfinite(val):
                x[c], lp[c] = cand, val
                break
            if init is not None:
                break
        else:
            raise InitError(f"chain {c}: no finite log density after 10 initial draws")
        if not np.isfinite(lp[c]):
            raise InitError(f"chain {c}: log density is not finite at the given init")
    return x, lp


def rwm_chains(model, data: Dataset | None = None, n_chains: int = 4, n_warmup: int = 5000,
               n_kept: int = 20000, seed: int = 0, thinning: int = 1, init=None,
               target: float | None = None, block: int = 1024) -> list[McmcChain]:
    """Run ``n_chains`` independent adaptive RWM chains, vectorized over chains.

    Each chain draws from its own stream seeded by (seed, chain index).
    During warmup the per-coordinate proposal scale follows a running
    estimate of the marginal sd, multiplied by a global factor that is
    adapted by Robbins-Monro towards the target acceptance rate; both are
    frozen afterwards.
    """
    data = model.dataset if data is None else data
    p = model.p
    if p > 64:
        raise ValueError("random-walk Metropolis is limited to p <= 64")
    target = (0.44 if p == 1 else 0.234) if target is None else target
    rngs = [chain_rng(seed, c) for c in range(n_chains)]
    x, lp = _initial_state(model, data, rngs, p, init)

    C = n_chains
    log_s = np.full(C, math.log(2.38 / math.sqrt(p)))
    mean = x.copy()
    var = np.ones((C, p))
    n_iter = n_warmup + n_kept * thinning
    kept = np.empty((C, n_kept, p))
    kept_lp = np.empty((C, n_kept))
    accepted = np.zeros(C)
    k = 0
    for start in range(0, n_iter, block):
        B = min(block, n_iter - start)
        noise = np.stack([r.standard_normal((B, p)) for r in rngs], axis=1)
        log_u = np.log(np.stack([r.uniform(size=B) for r in rngs], axis=1))
        for i in range(B):
            t = start + i
            warm = t < n_warmup
            scale = np.exp(log_s)[:, None] * np.sqrt(var)
            prop = x + scale * noise[i]
            lp_prop = np.asarray(model.log_joint(prop, data), dtype=float)
            lp_prop = np.where(np.isfinite(lp_prop), lp_prop, -np.inf)
            acc = log_u[i] < lp_prop - lp
            x = np.where(acc[:, None], prop, x)
            lp = np.where(acc, lp_prop, lp)
            if warm:
                gamma = 1.0 / (t + 1) ** 0.6
                log_s += gamma * (acc - target)
                w = 1.0 / (t + 2)
                delta = x - mean
                mean += w * delta
                var = np.maximum((1 - w) * (var + w * delta ** 2), 1e-10)
            else:
                accepted += acc
                j = t - n_warmup
                if j % thinning == thinning - 1:
                    kept[:, k] = x
                    kept_lp[:, k] = lp
                    k += 1
    rate = accepted / max(n_kept * thinning, 1)
    sd = np.exp(log_s)[:, None] * np.sqrt(var)
    return [McmcChain(kept[c], kept_lp[c], float(rate[c]), n_warmup, n_kept, thinning, seed, c, sd[c])
            for c in range(C)]


def rwm_sample(model, data: Dataset | None = None, n_warmup: int = 5000, n_kept: int = 20000,
               seed: int = 0, thinning: int = 1, init=None) -> McmcChain:
    return rwm_chains(model, data, 1, n_warmup, n_kept, seed, thinning, init)[0]


# ---------------------------------------------------------------------------
# convergence diagnostics

def _autocov(x: np.ndarray) -> np.ndarray:
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _ess_1d(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence; chains is (m, n)."""
    m, n = chains.shape
    acov = np.stack([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n + (chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    pairs = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 1 else 1.0
    return float(m * n / tau)


def _split(draws: np.ndarray) -> np.ndarray:
    """(m, n) -> (2m, n // 2) first/second halves of every chain."""
    half = draws.shape[1] // 2
    return np.concatenate([draws[:, :half], draws[:, -half:]], axis=0)


def split_rhat_1d(draws: np.ndarray) -> float:
    s = _split(np.asarray(draws, dtype=float))
    n = s.shape[1]
    w = s.var(axis=1, ddof=1).mean()
    b = n * s.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    return float(math.sqrt(((n - 1) / n * w + b / n) / w))


@dataclass(frozen=True)
class ChainDiagnostics:
    rhat: np.ndarray
    ess: np.ndarray

    def ok(self, threshold: float = 1.01) -> bool:
        return bool(np.all(self.rhat < threshold))


def chain_diagnostics(chains, quantity=None) -> ChainDiagnostics:
    """Split R-hat and ESS per dimension for >= 2 equal-length chains.

    ``quantity`` optionally maps a (n, p) draw matrix to (n, q) derived
    values (useful when the raw parameters are not identified).
    """
    arrs = [np.asarray(c.draws if isinstance(c, McmcChain) else c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise ValueError("need at least two chains")
    if len({a.shape[0] for a in arrs}) != 1:
        raise ValueError("chains must have equal lengths")
    if quantity is not None:
        arrs = [np.asarray(quantity(a), dtype=float) for a in arrs]
    arrs = [a[:, None] if a.ndim == 1 else a for a in arrs]
    stacked = np.stack(arrs)  # (m, n, q)
    q = stacked.shape[2]
    rhat = np.array([split_rhat_1d(stacked[:, :, j]) for j in range(q)])
    ess = np.array([_ess_1d(_split(stacked[:, :, j])) for j in range(q)])
    return ChainDiagnostics(rhat, ess)


def write_chains_csv(chains, path, names=None):
    """All chains in one long CSV with a leading chain column."""
    path = Path(path)
    p = chains[0].draws.shape[1]
    names = list(names) if names is not None else [f"theta{j + 1}" for j in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain"] + names + ["log_joint"])
        for c in chains:
            for row, lj in zip(c.draws, c.log_joint):
                w.writerow([c.chain] + [repr(float(v)) for v in row] + [repr(float(lj))])


def pooled_draws(chains) -> np.ndarray:
    return np.concatenate([c.draws for c in chains], axis=0)


def ks_statistic(samples, cdf) -> float:
    return float(stats.kstest(np.asarray(samples), cdf).statistic)

