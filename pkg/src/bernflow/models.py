"""Benchmark Bayesian models expressed in unconstrained space.

Every model maps an unconstrained parameter batch ``theta`` of shape (S, p)
(or a single vector of shape (p,)) to per-sample log densities.  Positive or
unit-interval parameters go through an exp or sigmoid bijector and the
log-Jacobian of that bijector is folded into ``log_prior``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import betaln, gammaln

from . import autodiff as ad
from .datasets import DataError, Dataset, load_bundled

LOG_2PI = np.log(2 * np.pi)


# ---------------------------------------------------------------------------
# constraint bijectors

@dataclass(frozen=True)
class Bijector:
    tag: str
    forward: Callable
    inverse: Callable
    log_jacobian: Callable


IDENTITY = Bijector("identity", lambda u: u, lambda x: x, lambda u: ad.mul(u, 0.0))
SIGMOID = Bijector(
    "sigmoid",
    ad.sigmoid,
    lambda x: np.log(x) - np.log1p(-np.asarray(x)),
    lambda u: ad.log_sigmoid(u) + ad.log_sigmoid(ad.neg(u)),
)
EXP = Bijector("exp", ad.exp, np.log, lambda u: u)
BIJECTORS = {b.tag: b for b in (IDENTITY, SIGMOID, EXP)}


# ---------------------------------------------------------------------------
# log densities (traced-friendly)

def normal_lpdf(x, mu, sd):
    return ad.neg(0.5 * ad.square((x - mu) / sd)) - (np.log(sd) + 0.5 * LOG_2PI)


def normal_lpdf_logsd(x, mu, log_sd):
    """Normal log density with the scale given on the log scale (traced)."""
    return ad.neg(0.5 * ad.square(x - mu) * ad.exp(-2.0 * log_sd)) - log_sd - 0.5 * LOG_2PI


def student_t_lpdf(x, nu, mu, s):
    c = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(s)
    return c - (nu + 1) / 2 * ad.log1p(ad.square((x - mu) / s) / nu)


def half_cauchy_lpdf(x, scale):
    return np.log(2.0 / (np.pi * scale)) - ad.log1p(ad.square(x / scale))


def _col(theta, j):
    return ad.getitem(theta, (slice(None), j))


def _cols(theta, sl):
    return ad.getitem(theta, (slice(None), sl))


def _expand(x):
    return ad.reshape(x, ad.value_of(x).shape + (1,))


# ---------------------------------------------------------------------------

@dataclass
class ProbabilisticModel:
    """Model bundle: dimension, constraints, and unconstrained log densities.

    ``prior_fn(theta)`` and ``likelihood_fn(theta, data)`` receive a 2-d batch
    and return one value per row.  ``log_prior`` / ``log_likelihood`` accept
    1-d or 2-d input and keep the batch shape of the caller.
    """

    name: str
    param_names: list[str]
    constraints: list[str]
    prior_fn: Callable
    likelihood_fn: Callable
    dataset: Dataset
    analytic_log_posterior: Callable | None = None
    analytic_log_evidence: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.param_names)

    def _call(self, fn, theta, *args):
        single = ad.value_of(theta).ndim == 1
        if single:
            theta = ad.reshape(theta, (1, -1)) if isinstance(theta, ad.Var) else np.asarray(theta)[None]
        out = fn(theta, *args)
        return ad.reshape(out, ()) if single else out

    def log_prior(self, theta):
        return self._call(self.prior_fn, theta)

    def log_likelihood(self, theta, data: Dataset | None = None):
        data = self.dataset if data is None else data
        if data.n == 0:
            return ad.mul(self._call(lambda t: _col(t, 0), theta), 0.0)
        return self._call(self.likelihood_fn, theta, data)

    def log_joint(self, theta, data: Dataset | None = None):
        return self.log_prior(theta) + self.log_likelihood(theta, data)

    def constrain(self, theta) -> np.ndarray:
        t = np.array(ad.value_of(theta), dtype=float)
        for j, tag in enumerate(self.constraints):
            t[..., j] = BIJECTORS[tag].forward(t[..., j])
        return t

    def unconstrain(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        for j, tag in enumerate(self.constraints):
            x[..., j] = BIJECTORS[tag].inverse(x[..., j])
        return x

    def constraint_log_jacobian(self, theta) -> np.ndarray:
        t = np.asarray(ad.value_of(theta), dtype=float)
        total = np.zeros(t.shape[:-1])
        for j, tag in enumerate(self.constraints):
            total = total + BIJECTORS[tag].log_jacobian(t[..., j])
        return total


# ---------------------------------------------------------------------------
# Bernoulli with Beta prior

def bernoulli_beta_model(y=None, alpha0: float = 1.1, beta0: float = 1.1) -> ProbabilisticModel:
    data = load_bundled("bernoulli") if y is None else Dataset({"y": np.asarray(y, dtype=float)})
    yv = data["y"]
    if np.any((yv != 0) & (yv != 1)):
        raise DataError("Bernoulli observations must be 0 or 1")
    a_post = alpha0 + yv.sum()
    b_post = beta0 + len(yv) - yv.sum()

    def prior(theta):
        u = _col(theta, 0)
        return alpha0 * ad.log_sigmoid(u) + beta0 * ad.log_sigmoid(ad.neg(u)) - betaln(alpha0, beta0)

    def likelihood(theta, d):
        u = _col(theta, 0)
        k = d["y"].sum()
        return k * ad.log_sigmoid(u) + (d.n - k) * ad.log_sigmoid(ad.neg(u))

    def log_post(theta):
        u = np.asarray(ad.value_of(theta), dtype=float)[..., 0]
        return a_post * -np.logaddexp(0, -u) + b_post * -np.logaddexp(0, u) - betaln(a_post, b_post)

    return ProbabilisticModel(
        "bernoulli", ["pi"], ["sigmoid"], prior, likelihood, data,
        analytic_log_posterior=log_post,
        analytic_log_evidence=float(betaln(a_post, b_post) - betaln(alpha0, beta0)),
        extras={"posterior": (float(a_post), float(b_post)), "prior": (alpha0, beta0)},
    )


# ---------------------------------------------------------------------------
# Cauchy location with known scale

def cauchy_model(y=None, gamma: float = 0.5) -> ProbabilisticModel:
    data = load_bundled("cauchy") if y is None else Dataset({"y": np.asarray(y, dtype=float)})

    def prior(theta):
        return normal_lpdf(_col(theta, 0), 0.0, 1.0)

    def likelihood(theta, d):
        r = (d["y"] - _expand(_col(theta, 0))) / gamma
        return ad.sum(ad.neg(ad.log1p(ad.square(r))), axis=-1) - d.n * np.log(np.pi * gamma)

    return ProbabilisticModel("cauchy", ["xi"], ["identity"], prior, likelihood, data,
                              extras={"gamma": gamma})


# ---------------------------------------------------------------------------
# toy linear regression

def toy_linreg_model(data: Dataset | None = None) -> ProbabilisticModel:
    data = load_bundled("toy_linreg") if data is None else data
    for c in ("x1", "x2", "y"):
        if c not in data:
            raise DataError(f"toy linear regression needs column {c!r}")

    def prior(theta):
        lp = normal_lpdf(_col(theta, 0), 0.0, 10.0)
        lp = lp + normal_lpdf(_col(theta, 1), 0.0, 10.0) + normal_lpdf(_col(theta, 2), 0.0, 10.0)
        # lognormal(0.5, 1) on sigma = exp(u), Jacobian included
        return lp + normal_lpdf(_col(theta, 3), 0.5, 1.0)

    def likelihood(theta, d):
        mu = (_expand(_col(theta, 0)) + _expand(_col(theta, 1)) * d["x1"]
              + _expand(_col(theta, 2)) * d["x2"])
        return ad.sum(normal_lpdf_logsd(d["y"], mu, _expand(_col(theta, 3))), axis=-1)

    return ProbabilisticModel("toy_linreg", ["mu0", "beta1", "beta2", "sigma"],
                              ["identity", "identity", "identity", "exp"], prior, likelihood, data)


# ---------------------------------------------------------------------------
# eight schools

def eight_schools_model(parameterization: str = "NCP", data: Dataset | None = None) -> ProbabilisticModel:
    parameterization = parameterization.upper()
    if parameterization not in ("CP", "NCP"):
        raise ValueError("parameterization must be 'CP' or 'NCP'")
    data = load_bundled("eight_schools") if data is None else data
    J = data.n
    if "sigma" not in data or "y" not in data:
        raise DataError("eight schools needs columns 'y' and 'sigma'")

    def hyper(theta):
        mu, u_tau = _col(theta, 0), _col(theta, 1)
        lp = normal_lpdf(mu, 0.0, 5.0) + half_cauchy_lpdf(ad.exp(u_tau), 5.0) + u_tau
        return mu, u_tau, lp

    if parameterization == "CP":
        def prior(theta):
            mu, u_tau, lp = hyper(theta)
            th = _cols(theta, slice(2, 2 + J))
            return lp + ad.sum(normal_lpdf_logsd(th, _expand(mu), _expand(u_tau)), axis=-1)

        def likelihood(theta, d):
            th = _cols(theta, slice(2, 2 + J))
            return ad.sum(normal_lpdf(d["y"], th, d["sigma"]), axis=-1)

        names = ["mu", "tau"] + [f"theta[{j + 1}]" for j in range(J)]
    else:
        def prior(theta):
            _, _, lp = hyper(theta)
            return lp + ad.sum(normal_lpdf(_cols(theta, slice(2, 2 + J)), 0.0, 1.0), axis=-1)

        def likelihood(theta, d):
            mu, tau = _col(theta, 0), ad.exp(_col(theta, 1))
            th = _expand(mu) + _expand(tau) * _cols(theta, slice(2, 2 + J))
            return ad.sum(normal_lpdf(d["y"], th, d["sigma"]), axis=-1)

        names = ["mu", "tau"] + [f"theta_tilde[{j + 1}]" for j in range(J)]

    return ProbabilisticModel(f"eight_schools_{parameterization.lower()}", names,
                              ["identity", "exp"] + ["identity"] * J, prior, likelihood, data,
                              extras={"parameterization": parameterization})


def ncp_to_cp(theta_ncp) -> np.ndarray:
    """Map unconstrained NCP draws (mu, log tau, theta_tilde) to CP coordinates."""
    t = np.array(theta_ncp, dtype=float)
    t[..., 2:] = t[..., :1] + np.exp(t[..., 1:2]) * t[..., 2:]
    return t


def cp_to_ncp(theta_cp) -> np.ndarray:
    t = np.array(theta_cp, dtype=float)
    t[..., 2:] = (t[..., 2:] - t[..., :1]) / np.exp(t[..., 1:2])
    return t


# ---------------------------------------------------------------------------
# one-hidden-layer Bayesian neural network

BNN_HIDDEN = 3


def bnn_unpack(theta):
    h = BNN_HIDDEN
    return (_cols(theta, slice(0, h)), _cols(theta, slice(h, 2 * h)),
            _cols(theta, slice(2 * h, 3 * h)), _col(theta, 3 * h))


def bnn_mean(theta, x):
    """Network mean for a parameter batch (S, 10) at inputs x (N,): shape (S, N)."""
    w, b, w_out, b_out = bnn_unpack(theta)
    S = ad.value_of(theta).shape[0]
    x = np.asarray(x, dtype=float)[None, :, None]
    pre = ad.reshape(b, (S, 1, BNN_HIDDEN)) + ad.reshape(w, (S, 1, BNN_HIDDEN)) * x
    hidden = ad.sigmoid(pre)
    return _expand(b_out) + ad.sum(hidden * ad.reshape(w_out, (S, 1, BNN_HIDDEN)), axis=-1)


def bnn_regression_model(data: Dataset | None = None, sigma: float = 0.2) -> ProbabilisticModel:
    data = load_bundled("bnn_regression") if data is None else data
    h = BNN_HIDDEN

    def prior(theta):
        return ad.sum(normal_lpdf(theta, 0.0, 1.0), axis=-1)

    def likelihood(theta, d):
        return ad.sum(normal_lpdf(d["y"], bnn_mean(theta, d["x"]), sigma), axis=-1)

    names = ([f"w_first[{k + 1}]" for k in range(h)] + [f"bias_first[{k + 1}]" for k in range(h)]
             + [f"w_output[{k + 1}]" for k in range(h)] + ["bias_output"])
    return ProbabilisticModel("bnn_regression", names, ["identity"] * len(names), prior, likelihood,
                              data, extras={"sigma": sigma})


# ---------------------------------------------------------------------------
# diamonds linear regression (centered predictors, brms-style priors)

def diamonds_model(data: Dataset | None = None, response: str = "Y") -> ProbabilisticModel:
    data = load_bundled("diamonds") if data is None else data
    if response not in data:
        raise DataError(f"diamonds data needs response column {response!r}")
    predictors = [c for c in data.columns if c != response]
    if not predictors:
        raise DataError("diamonds data has no predictor columns")
    X = data.matrix(predictors)
    means_x = X.mean(axis=0)
    K = len(predictors)
    t_norm = np.log(2.0)  # -student_t_lccdf(0 | 3, 0, 10)

    def prior(theta):
        lp = ad.sum(normal_lpdf(_cols(theta, slice(0, K)), 0.0, 1.0), axis=-1)
        lp = lp + student_t_lpdf(_col(theta, K), 3.0, 8.0, 10.0)
        u = _col(theta, K + 1)
        return lp + student_t_lpdf(ad.exp(u), 3.0, 0.0, 10.0) + t_norm + u

    def likelihood(theta, d):
        xc = d.matrix(predictors) - means_x
        b = _cols(theta, slice(0, K))
        mu = _expand(_col(theta, K)) + b @ xc.T
        return ad.sum(normal_lpdf_logsd(d[response], mu, _expand(_col(theta, K + 1))), axis=-1)

    names = [f"b[{c}]" for c in predictors] + ["Intercept", "sigma"]
    return ProbabilisticModel("diamonds", names, ["identity"] * (K + 1) + ["exp"], prior, likelihood,
                              data, extras={"predictors": predictors, "means_x": means_x,
                                            "response": response})


def diamonds_ridge_oracle(model: ProbabilisticModel, sigma: float) -> np.ndarray:
    """Posterior mode of b given sigma, ignoring the (weak) intercept prior.

    Solves (Xc'Xc + sigma^2 I) b = Xc'(y - ybar), the normal equations of
    least squares with the N(0, 1) ridge penalty on the coefficients.
    """
    d = model.dataset
    xc = d.matrix(model.extras["predictors"]) - model.extras["means_x"]
    y = d[model.extras["response"]]
    A = xc.T @ xc + sigma ** 2 * np.eye(xc.shape[1])
    return np.linalg.solve(A, xc.T @ (y - y.mean()))


def centered_design(model: ProbabilisticModel) -> np.ndarray:
    d = model.dataset
    return d.matrix(model.extras["predictors"]) - model.extras["means_x"]
