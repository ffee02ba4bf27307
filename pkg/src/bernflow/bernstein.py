"""One-dimensional monotone Bernstein-polynomial flow.

The flow composes ``affine -> sigmoid -> Bernstein polynomial -> affine``
and maps a standard normal base variable onto a bounded interval of the
real line.  Functions take either plain arrays or traced values from
:mod:`bernflow.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import autodiff as ad

CLAMP_EPS = 1e-6
LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class DomainError(ValueError):
    pass


class RangeError(ValueError):
    pass


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def beta_basis_density(i: int, M: int, z: float) -> float:
    """Density of Beta(i + 1, M - i + 1) at z."""
    if not (0 <= i <= M) or M < 0:
        raise DomainError(f"basis index {i} outside 0..{M}")
    if not (0.0 <= z <= 1.0):
        raise DomainError(f"z={z} outside [0, 1]")
    return float((M + 1) * ad.bernstein_basis(M, z)[i])


def reparam_coefficients(raw):
    """Strictly increasing coefficients: c_0 = raw_0, c_i = c_{i-1} + softplus(raw_i)."""
    if not isinstance(raw, ad.Var) and not np.all(np.isfinite(raw)):
        raise DomainError("non-finite raw coefficients")
    head = ad.getitem(raw, (..., slice(0, 1)))
    steps = ad.softplus(ad.getitem(raw, (..., slice(1, None))))
    return ad.cumsum(ad.concat([head, steps], axis=-1), axis=-1)


def _check_unit(z):
    zv = ad.value_of(z)
    if np.any((zv < 0) | (zv > 1)):
        raise DomainError("Bernstein polynomial evaluated outside [0, 1]")


def bp_forward(coef, z):
    """sum_i Be_i(z) coef_i / (M+1), with ``coef`` already monotone."""
    _check_unit(z)
    return ad.bernstein(coef, z, 0)


def bp_derivative(coef, z):
    """d/dz of :func:`bp_forward` via the degree-lowering identity."""
    _check_unit(z)
    return ad.bernstein(coef, z, 1)


@dataclass(frozen=True)
class FlowOutput:
    theta: object
    log_det: object


@dataclass(frozen=True)
class SandwichFlow:
    """theta = alpha * BP(sigmoid(a * z + b)) + beta, with a, alpha > 0."""

    raw: object
    a_raw: object = 0.0
    b: object = 0.0
    alpha_raw: object = 0.0
    beta: object = 0.0

    @property
    def order(self) -> int:
        return ad.value_of(self.raw).shape[-1] - 1

    @property
    def coefficients(self):
        return reparam_coefficients(self.raw)

    @property
    def a(self):
        return ad.softplus(self.a_raw)

    @property
    def alpha(self):
        return ad.softplus(self.alpha_raw)

    @classmethod
    def from_derived(cls, coef, a=1.0, b=0.0, alpha=1.0, beta=0.0) -> "SandwichFlow":
        """Build a flow from increasing coefficients and positive slopes."""
        coef = np.asarray(coef, dtype=float)
        d = np.diff(coef)
        if np.any(d <= 0):
            raise DomainError("coefficients must be strictly increasing")
        raw = np.concatenate([coef[:1], softplus_inv(d)])
        return cls(raw, float(softplus_inv(a)), b, float(softplus_inv(alpha)), beta)

    @classmethod
    def initial(cls, M: int, lo: float = -3.0, hi: float = 3.0) -> "SandwichFlow":
        """Identity slopes and coefficients ramping linearly over [lo, hi]."""
        return cls.from_derived(np.linspace(lo, hi, M + 1))

    def support(self) -> tuple[float, float]:
        c = ad.value_of(self.coefficients)
        al = float(ad.value_of(self.alpha))
        be = float(ad.value_of(self.beta))
        return al * c[0] + be, al * c[-1] + be


def squash(u):
    """Clamped sigmoid and its log-derivative log(v (1 - v))."""
    v = ad.clip(ad.sigmoid(u), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return v, ad.log(v) + ad.log1p(ad.neg(v))


def sandwich_forward(flow: SandwichFlow, z) -> FlowOutput:
    coef = flow.coefficients
    a, alpha = flow.a, flow.alpha
    u = a * z + flow.b
    v, log_dsig = squash(u)
    theta = alpha * ad.bernstein(coef, v, 0) + flow.beta
    log_det = ad.log(a) + log_dsig + ad.log(ad.bernstein(coef, v, 1)) + ad.log(alpha)
    return FlowOutput(theta, log_det)


def log_normal_pdf(z):
    return ad.neg(0.5 * ad.square(z)) - LOG_SQRT_2PI


def log_q_density_1d(flow: SandwichFlow, z):
    return log_normal_pdf(z) - sandwich_forward(flow, z).log_det


def sandwich_inverse(flow: SandwichFlow, theta: float, tol: float = 1e-10) -> float:
    """Solve sandwich_forward(flow, z).theta == theta for z."""
    flow = SandwichFlow(*(ad.value_of(x) for x in
                          (flow.raw, flow.a_raw, flow.b, flow.alpha_raw, flow.beta)))
    lo_t, hi_t = flow.support()
    if not (lo_t < theta < hi_t):
        raise RangeError(f"theta={theta} outside attainable ({lo_t}, {hi_t})")
    coef = np.asarray(flow.coefficients)
    al, be = float(flow.alpha), float(flow.beta)
    a, b = float(flow.a), float(flow.b)
    target = (theta - be) / al

    # invert BP on [0, 1] by bisection, then the sigmoid and affine analytically
    def g(v):
        return float(ad.bernstein(coef, np.float64(v), 0)) - target

    v = brentq(g, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        d = float(ad.bernstein(coef, np.float64(v), 1))
        step = g(v) / d
        if not np.isfinite(step):
            break
        v = min(max(v - step, 0.0), 1.0)
    v = min(max(v, CLAMP_EPS), 1.0 - CLAMP_EPS)
    z = (np.log(v) - np.log1p(-v) - b) / a

    # Newton polish in z against the full forward map
    for _ in range(20):
        out = sandwich_forward(flow, z)
        r = float(out.theta) - theta
        if abs(r) <= tol:
            break
        z -= r / np.exp(float(out.log_det))
    if abs(float(sandwich_forward(flow, z).theta) - theta) > tol:
        raise RangeError(f"inverse did not reach tolerance {tol} at theta={theta}")
    return float(z)


__all__ = [
    "CLAMP_EPS", "DomainError", "RangeError", "FlowOutput", "SandwichFlow",
    "beta_basis_density", "reparam_coefficients", "bp_forward", "bp_derivative",
    "sandwich_forward", "sandwich_inverse", "log_q_density_1d", "log_normal_pdf",
    "softplus_inv", "squash",
]
