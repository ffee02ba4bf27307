"""Stochastic ELBO estimation, RMSprop training, and posterior sampling."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bernstein import SandwichFlow, log_normal_pdf, sandwich_forward
from .datasets import Dataset
from .maf import HIDDEN, MultivariateBernsteinFlow, build_masks, mv_forward
from .models import ProbabilisticModel


class TrainingError(RuntimeError):
    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


# ---------------------------------------------------------------------------
# variational families

class VariationalFamily:
    """A reparameterizable q: theta = transform(z; lambda), z ~ N(0, I_p)."""

    kind = "abstract"

    def __init__(self, p: int, params: ad.ParamVector):
        self.p = p
        self.params = params

    def _transform(self, parts: dict, z):
        raise NotImplementedError

    def transform(self, z, flat=None):
        """Return (theta (S, p), log_det (S,)) for base draws z (S, p)."""
        parts = self.params.unflatten(self.params.values if flat is None else flat)
        return self._transform(parts, z)

    def log_q(self, z, flat=None):
        theta, log_det = self.transform(z, flat)
        return theta, ad.sum(log_normal_pdf(z), axis=-1) - log_det

    def with_values(self, values) -> "VariationalFamily":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = self.params.copy(values)
        return clone

    def describe(self) -> dict:
        return {"kind": self.kind, "p": self.p}


class BernsteinFlow1D(VariationalFamily):
    kind = "bfvi_1d"

    def __init__(self, M: int, flow: SandwichFlow | None = None):
        flow = SandwichFlow.initial(M) if flow is None else flow
        layout = {"raw": (M + 1,), "a_raw": (), "b": (), "alpha_raw": (), "beta": ()}
        pv = ad.ParamVector(layout)
        pv.values = pv.flatten({k: ad.value_of(getattr(flow, k)) for k in layout})
        super().__init__(1, pv)
        self.M = M

    def flow(self, flat=None) -> SandwichFlow:
        parts = self.params.unflatten(self.params.values if flat is None else flat)
        return SandwichFlow(**parts)

    def _transform(self, parts, z):
        out = sandwich_forward(SandwichFlow(**parts), ad.getitem(z, (slice(None), 0)))
        S = ad.value_of(z).shape[0]
        return ad.reshape(out.theta, (S, 1)), out.log_det

    def describe(self):
        return {"kind": self.kind, "p": 1, "M": self.M}


class BernsteinFlowMV(VariationalFamily):
    kind = "bfvi_mv"

    def __init__(self, p: int, M: int, rng: np.random.Generator | None = None, hidden=HIDDEN):
        rng = np.random.default_rng(0) if rng is None else rng
        layout = MultivariateBernsteinFlow.layout(p, M, hidden)
        pv = ad.ParamVector(layout)
        pv.values = pv.flatten(MultivariateBernsteinFlow.initial_params(p, M, rng, hidden))
        super().__init__(p, pv)
        self.M = M
        self.hidden = tuple(hidden)
        self.masks = build_masks(p, hidden, M + 1)

    def flow(self, flat=None) -> MultivariateBernsteinFlow:
        parts = self.params.unflatten(self.params.values if flat is None else flat)
        return MultivariateBernsteinFlow.from_params(self.p, self.M, parts, self.hidden, self.masks)

    def _transform(self, parts, z):
        flow = MultivariateBernsteinFlow.from_params(self.p, self.M, parts, self.hidden, self.masks)
        return mv_forward(flow, z)

    def describe(self):
        return {"kind": self.kind, "p": self.p, "M": self.M, "hidden": list(self.hidden)}


class MeanFieldGaussian(VariationalFamily):
    """q(theta) = prod_j N(theta_j; m_j, exp(r_j)^2)."""

    kind = "mfgauss"

    def __init__(self, p: int, mean=None, log_sd=None):
        pv = ad.ParamVector({"m": (p,), "r": (p,)})
        pv.values = pv.flatten({"m": np.zeros(p) if mean is None else mean,
                                "r": np.zeros(p) if log_sd is None else log_sd})
        super().__init__(p, pv)

    def _transform(self, parts, z):
        theta = parts["m"] + ad.exp(parts["r"]) * z
        S = ad.value_of(z).shape[0]
        return theta, ad.broadcast_to(ad.sum(parts["r"]), (S,))


def mean_field_gaussian_family(p: int) -> MeanFieldGaussian:
    if p < 1:
        raise ValueError("p must be >= 1")
    return MeanFieldGaussian(p)


def make_family(method: str, p: int, M: int = 10, rng=None) -> VariationalFamily:
    """Default family for a method tag: 'bfvi' (1-d sandwich or MAF) or 'mfgauss'."""
    if method == "mfgauss":
        return MeanFieldGaussian(p)
    if method == "bfvi":
        return BernsteinFlow1D(M) if p == 1 else BernsteinFlowMV(p, M, rng)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# ELBO

def draw_base(p: int, S: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((S, p))


def elbo_terms(family, model: ProbabilisticModel, data: Dataset, z, flat=None, lik_scale=1.0):
    """Per-sample (log-likelihood, log q - log prior) for fixed base draws z."""
    theta, log_q = family.log_q(z, flat)
    loglik = model.log_likelihood(theta, data)
    if lik_scale != 1.0:
        loglik = loglik * lik_scale
    return loglik, log_q - model.log_prior(theta)


def elbo_value(family, model, data, z, flat=None, lik_scale=1.0):
    loglik, kl = elbo_terms(family, model, data, z, flat, lik_scale)
    return ad.mean(loglik - kl)


@dataclass(frozen=True)
class ElboEstimate:
    elbo: float
    expected_loglik: float
    kl_term: float


def estimate_elbo(family, model: ProbabilisticModel, data: Dataset | None, S: int,
                  rng: np.random.Generator) -> ElboEstimate:
    data = model.dataset if data is None else data
    z = draw_base(family.p, S, rng)
    loglik, kl = elbo_terms(family, model, data, z)
    loglik, kl = np.asarray(loglik), np.asarray(kl)
    bad = ~np.isfinite(loglik) | ~np.isfinite(kl)
    if bad.any():
        s = int(np.flatnonzero(bad)[0])
        raise TrainingError(f"non-finite ELBO term at sample {s}", sample=s)
    e_ll, kl_term = float(loglik.mean()), float(kl.mean())
    return ElboEstimate(e_ll - kl_term, e_ll, kl_term)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    M: int = 10
    S: int = 10
    epochs: int = 1000
    lr: float = 1e-3
    rms_decay: float = 0.9
    rms_eps: float = 1e-7
    seed: int = 0
    batch_size: int | None = None
    clip_norm: float = 100.0

    def __post_init__(self):
        if self.S < 1 or self.epochs < 1 or self.M < 1:
            raise ValueError("S, epochs and M must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class FitResult:
    family: VariationalFamily
    elbo_trace: np.ndarray
    seed: int
    wall_time: float
    clipped_steps: list = field(default_factory=list)
    failed_step: int | None = None


def rng_streams(seed: int, n: int = 2) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def rmsprop_step(params, g, acc, lr, decay, eps):
    acc = decay * acc + (1.0 - decay) * g * g
    return params - lr * g / np.sqrt(acc + eps), acc


def train(model: ProbabilisticModel, data: Dataset | None, family, config: TrainConfig) -> FitResult:
    """Maximize the ELBO with RMSprop, fresh base draws every step.

    ``family`` is a VariationalFamily instance or a method tag accepted by
    :func:`make_family`.  On a non-finite loss or gradient a TrainingError
    is raised carrying the step; ``err.result`` holds the last finite state.
    """
    data = model.dataset if data is None else data
    init_rng, rng = rng_streams(config.seed)
    if isinstance(family, str):
        family = make_family(family, model.p, config.M, init_rng)
    params = family.params.values.copy()
    acc = np.zeros_like(params)
    trace = np.empty(config.epochs)
    clipped = []
    bs = config.batch_size
    use_batch = bs is not None and bs < data.n
    scale = data.n / bs if use_batch else 1.0
    t0 = time.perf_counter()

    for step in range(config.epochs):
        z = draw_base(family.p, config.S, rng)
        d = data.subset(np.sort(rng.choice(data.n, bs, replace=False))) if use_batch else data

        def objective(flat):
            return ad.neg(elbo_value(family, model, d, z, flat, scale))

        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = ad.value_and_grad(objective, params)
        except (ad.EvaluationError, FloatingPointError) as exc:
            loss, g = np.nan, None
            reason = str(exc)
        else:
            reason = "non-finite loss or gradient"
        if not np.isfinite(loss) or g is None or not np.all(np.isfinite(g)):
            res = FitResult(family.with_values(params), trace[:step].copy(), config.seed,
                            time.perf_counter() - t0, clipped, failed_step=step)
            err = TrainingError(f"training diverged at step {step}: {reason}", step=step)
            err.result = res
            raise err
        norm = float(np.sqrt(g @ g))
        if norm > config.clip_norm:
            g = g * (config.clip_norm / norm)
            clipped.append(step)
        trace[step] = -loss
        params, acc = rmsprop_step(params, g, acc, config.lr, config.rms_decay, config.rms_eps)

    return FitResult(family.with_values(params), trace, config.seed,
                     time.perf_counter() - t0, clipped)


# ---------------------------------------------------------------------------
# sampling

@dataclass(frozen=True)
class SampleBank:
    z: np.ndarray
    theta: np.ndarray
    log_q: np.ndarray

    def __len__(self):
        return len(self.log_q)


def sample_posterior(family, n: int, rng: np.random.Generator) -> SampleBank:
    z = draw_base(family.p, n, rng)
    theta, log_q = family.log_q(z)
    return SampleBank(z, np.asarray(theta), np.asarray(log_q))


def smoothed_trace(trace, window: int = 100) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    if len(trace) < window:
        return trace.copy()
    c = np.cumsum(np.concatenate([[0.0], trace]))
    return (c[window:] - c[:-window]) / window
