"""Triangular multivariate Bernstein flow driven by a masked autoregressive network.

Dimension 1 owns its Bernstein coefficients directly; the coefficients of
dimension j >= 2 are emitted by a MADE-style network that only sees
z_1 .. z_{j-1}.  Each z_j is squashed by a fixed sigmoid before entering its
polynomial, so the Jacobian is lower triangular and its log-determinant is
a sum of per-dimension terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bernstein import log_normal_pdf, reparam_coefficients, softplus_inv, squash

HIDDEN = (10, 10)


def hidden_degrees(p: int, width: int) -> np.ndarray:
    """Cycle degrees 1 .. p-1 over the units of a hidden layer."""
    return np.arange(width) % max(p - 1, 1) + 1


def build_masks(p: int, hidden=HIDDEN, out_per_dim: int = 1) -> list[np.ndarray]:
    """Connectivity masks for input -> hidden -> ... -> output blocks 2..p.

    Returns an empty list for p == 1.  Output columns are laid out block by
    block, ``out_per_dim`` columns per dimension j = 2..p.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return []
    in_deg = np.arange(1, p + 1)
    degs = [hidden_degrees(p, h) for h in hidden]
    masks = [(degs[0][None, :] >= in_deg[:, None]).astype(float)]
    for lo, hi in zip(degs[:-1], degs[1:]):
        masks.append((hi[None, :] >= lo[:, None]).astype(float))
    out_deg = np.repeat(np.arange(2, p + 1), out_per_dim)
    masks.append((degs[-1][:, None] < out_deg[None, :]).astype(float))
    return masks


def reachable(masks: list[np.ndarray]) -> np.ndarray:
    """Boolean (inputs x outputs) matrix: is there any path through the masks."""
    r = masks[0] > 0
    for m in masks[1:]:
        r = (r.astype(int) @ (m > 0).astype(int)) > 0
    return r


@dataclass
class MaskedNetwork:
    masks: list[np.ndarray]
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __call__(self, z):
        h = z
        last = len(self.masks) - 1
        for k, (m, w, b) in enumerate(zip(self.masks, self.weights, self.biases)):
            h = h @ (w * m) + b
            if k < last:
                h = ad.tanh(h)
        return h


@dataclass
class MultivariateBernsteinFlow:
    p: int
    order: int
    theta1_raw: object
    net: MaskedNetwork | None = None

    @staticmethod
    def layout(p: int, M: int, hidden=HIDDEN) -> dict[str, tuple[int, ...]]:
        lay = {"theta1_raw": (M + 1,)}
        if p > 1:
            sizes = [p, *hidden, (p - 1) * (M + 1)]
            for k in range(len(sizes) - 1):
                lay[f"W{k}"] = (sizes[k], sizes[k + 1])
                lay[f"b{k}"] = (sizes[k + 1],)
        return lay

    @classmethod
    def from_params(cls, p: int, M: int, params: dict, hidden=HIDDEN,
                    masks: list | None = None) -> "MultivariateBernsteinFlow":
        net = None
        if p > 1:
            masks = build_masks(p, hidden, M + 1) if masks is None else masks
            n = len(masks)
            net = MaskedNetwork(masks, [params[f"W{k}"] for k in range(n)],
                                [params[f"b{k}"] for k in range(n)])
        return cls(p, M, params["theta1_raw"], net)

    @staticmethod
    def initial_params(p: int, M: int, rng: np.random.Generator, hidden=HIDDEN,
                       lo: float = -3.0, hi: float = 3.0) -> dict:
        """Linear coefficient ramp over [lo, hi] for every dimension.

        The output layer starts at zero weight so the ramp comes entirely from
        the output bias; hidden weights are uniform with limits set by the
        masked fan-in of each unit.
        """
        ramp = np.concatenate([[lo], np.full(M, float(softplus_inv((hi - lo) / M)))])
        params = {"theta1_raw": ramp.copy()}
        if p > 1:
            masks = build_masks(p, hidden, M + 1)
            for k, m in enumerate(masks):
                n_in, n_out = m.shape
                if k == len(masks) - 1:
                    params[f"W{k}"] = np.zeros((n_in, n_out))
                    params[f"b{k}"] = np.tile(ramp, p - 1)
                else:
                    fan_in = np.maximum(m.sum(axis=0), 1.0)
                    limit = np.sqrt(6.0 / (fan_in + n_out))
                    params[f"W{k}"] = rng.uniform(-1, 1, size=(n_in, n_out)) * limit * m
                    params[f"b{k}"] = np.zeros(n_out)
        return params


def emit_coefficients(flow: MultivariateBernsteinFlow, z):
    """Raw (unconstrained) coefficients, shape (S, p, M+1) for z of shape (S, p)."""
    S = ad.value_of(z).shape[0]
    M1 = flow.order + 1
    first = ad.broadcast_to(ad.reshape(flow.theta1_raw, (1, 1, M1)), (S, 1, M1))
    if flow.p == 1:
        return first
    rest = ad.reshape(flow.net(z), (S, flow.p - 1, M1))
    return ad.concat([first, rest], axis=1)


def mv_forward(flow: MultivariateBernsteinFlow, z):
    """Map base draws to parameters; returns (theta, log_det).

    ``z`` may be a single vector (p,) or a batch (S, p).
    """
    zv = ad.value_of(z)
    single = zv.ndim == 1
    if single:
        z = np.asarray(zv)[None, :] if not isinstance(z, ad.Var) else ad.reshape(z, (1, -1))
    coef = reparam_coefficients(emit_coefficients(flow, z))
    v, log_dsig = squash(z)
    theta = ad.bernstein(coef, v, 0)
    log_det = ad.sum(log_dsig + ad.log(ad.bernstein(coef, v, 1)), axis=1)
    if single:
        theta, log_det = ad.reshape(theta, (flow.p,)), ad.reshape(log_det, ())
    return theta, log_det


def mv_log_q(flow: MultivariateBernsteinFlow, z):
    _, log_det = mv_forward(flow, z)
    return ad.sum(log_normal_pdf(z), axis=-1) - log_det
