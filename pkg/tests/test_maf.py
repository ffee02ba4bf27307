import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bernflow import autodiff as ad
from bernflow.bernstein import SandwichFlow, reparam_coefficients, sandwich_forward, softplus_inv
from bernflow.diagnostics import gauss_legendre
from bernflow.maf import (
    HIDDEN, MultivariateBernsteinFlow, build_masks, emit_coefficients, hidden_degrees,
    mv_forward, mv_log_q, reachable,
)


def random_flow(p, M, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    params = MultivariateBernsteinFlow.initial_params(p, M, rng)
    for k, v in params.items():
        params[k] = v + scale * rng.normal(size=np.shape(v))
    return MultivariateBernsteinFlow.from_params(p, M, params)


def fd_jacobian(flow, z, h=1e-6):
    p = len(z)
    J = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h
        J[:, k] = (mv_forward(flow, z + e)[0] - mv_forward(flow, z - e)[0]) / (2 * h)
    return J


def test_p1_has_no_network():
    assert build_masks(1) == []
    flow = MultivariateBernsteinFlow.from_params(1, 4, {"theta1_raw": np.zeros(5)})
    assert flow.net is None
    z = np.array([[0.3], [-1.0]])
    np.testing.assert_array_equal(emit_coefficients(flow, z)[:, 0], np.zeros((2, 5)))


def test_hidden_degrees_cycle():
    np.testing.assert_array_equal(hidden_degrees(4, 7), [1, 2, 3, 1, 2, 3, 1])


@pytest.mark.parametrize("p", [2, 3, 4, 6])
def test_mask_shapes_and_reachability(p):
    M1 = 4
    masks = build_masks(p, HIDDEN, M1)
    sizes = [p, *HIDDEN, (p - 1) * M1]
    assert [m.shape for m in masks] == list(zip(sizes[:-1], sizes[1:]))
    r = reachable(masks)
    for j in range(2, p + 1):
        block = r[:, (j - 2) * M1:(j - 1) * M1]
        for k in range(1, p + 1):
            if k >= j:
                assert not block[k - 1].any(), f"block {j} reachable from z{k}"
            else:
                assert block[k - 1].all(), f"block {j} not reachable from z{k}"


def test_p2_block_connects_only_to_z1_units():
    masks = build_masks(2, HIDDEN, 3)
    assert masks[0][1].sum() == 0
    assert masks[0][0].sum() == HIDDEN[0]


def test_zero_network_emits_bias():
    p, M = 3, 4
    rng = np.random.default_rng(0)
    params = MultivariateBernsteinFlow.initial_params(p, M, rng)
    for k in list(params):
        if k.startswith("W"):
            params[k] = np.zeros_like(params[k])
    flow = MultivariateBernsteinFlow.from_params(p, M, params)
    z = rng.normal(size=(5, p))
    rows = emit_coefficients(flow, z)
    np.testing.assert_array_equal(rows[:, 1:].reshape(5, -1), np.broadcast_to(params["b2"], (5, 2 * (M + 1))))


@given(p=st.integers(2, 5), seed=st.integers(0, 10_000), k=st.integers(0, 4), delta=st.floats(-5, 5))
def test_autoregressive_invariance(p, seed, k, delta):
    k = k % p
    flow = random_flow(p, 3, seed, scale=1.0)
    z = np.random.default_rng(seed + 1).normal(size=(1, p))
    z2 = z.copy()
    z2[0, k] += delta
    r1, r2 = emit_coefficients(flow, z), emit_coefficients(flow, z2)
    # rows j (1-based) with j <= k + 1 depend only on z_1 .. z_{j-1}, all < k + 1
    for j in range(k + 1):
        assert np.array_equal(r1[0, j], r2[0, j])


def test_perturbing_z1_leaves_row1():
    flow = random_flow(3, 4, 5)
    z = np.zeros((1, 3))
    z2 = z.copy()
    z2[0, 0] = 1.0
    r1, r2 = emit_coefficients(flow, z), emit_coefficients(flow, z2)
    assert np.array_equal(r1[0, 0], r2[0, 0])
    assert not np.array_equal(r1[0, 1], r2[0, 1])


def test_identity_rows_give_sigmoid():
    p, M = 3, 5
    ramp = np.concatenate([[0.0], np.full(M, float(softplus_inv(1.0 / M)))])
    params = MultivariateBernsteinFlow.initial_params(p, M, np.random.default_rng(0))
    params["theta1_raw"] = ramp
    params["b2"] = np.tile(ramp, p - 1)
    for k in list(params):
        if k.startswith("W"):
            params[k] = np.zeros_like(params[k])
    flow = MultivariateBernsteinFlow.from_params(p, M, params)
    z = np.array([-1.0, 0.0, 2.0])
    theta, log_det = mv_forward(flow, z)
    s = 1 / (1 + np.exp(-z))
    np.testing.assert_allclose(theta, s, atol=1e-12)
    assert log_det == pytest.approx(np.sum(np.log(s * (1 - s))), abs=1e-10)
    lq = mv_log_q(flow, z)
    assert lq == pytest.approx(np.sum(-0.5 * z ** 2 - 0.5 * math.log(2 * math.pi) - np.log(s * (1 - s))),
                               abs=1e-10)


def test_p1_matches_sandwich_without_affine():
    rng = np.random.default_rng(4)
    raw = rng.normal(size=8)
    flow = MultivariateBernsteinFlow.from_params(1, 7, {"theta1_raw": raw})
    sw = SandwichFlow(raw, float(softplus_inv(1.0)), 0.0, float(softplus_inv(1.0)), 0.0)
    z = rng.normal(size=(20, 1))
    theta, log_det = mv_forward(flow, z)
    out = sandwich_forward(sw, z[:, 0])
    np.testing.assert_allclose(theta[:, 0], out.theta, atol=1e-12, rtol=0)
    np.testing.assert_allclose(log_det, out.log_det, atol=1e-12, rtol=0)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
@pytest.mark.parametrize("seed", range(5))
def test_log_det_matches_fd_jacobian(p, seed):
    flow = random_flow(p, 6, seed)
    z = np.random.default_rng(100 + seed).normal(size=p)
    J = fd_jacobian(flow, z)
    assert np.all(np.abs(np.triu(J, 1)) <= 1e-8)
    sign, logabs = np.linalg.slogdet(J)
    _, log_det = mv_forward(flow, z)
    assert sign > 0
    assert abs(math.exp(float(log_det) - logabs) - 1.0) <= 1e-4


def test_scaling_dim1_coefficients_lowers_log_q():
    flow = random_flow(2, 5, 1)
    z = np.array([0.3, -0.4])
    coef = np.asarray(reparam_coefficients(flow.theta1_raw))
    doubled = 2 * coef
    raw2 = np.concatenate([doubled[:1], softplus_inv(np.diff(doubled))])
    flow2 = MultivariateBernsteinFlow(2, 5, raw2, flow.net)
    assert mv_log_q(flow2, z) - mv_log_q(flow, z) == pytest.approx(-math.log(2), abs=1e-10)


def test_batch_and_single_agree():
    flow = random_flow(3, 4, 9)
    z = np.random.default_rng(0).normal(size=(6, 3))
    tb, lb = mv_forward(flow, z)
    for s in range(6):
        t1, l1 = mv_forward(flow, z[s])
        np.testing.assert_allclose(t1, tb[s], rtol=1e-14, atol=1e-14)
        assert float(l1) == pytest.approx(float(lb[s]), rel=1e-14, abs=1e-14)


def _invert_bp(coef, target, iters=80):
    """Vectorized bisection for BP(v) = target on [0, 1]; coef (N, M+1)."""
    lo = np.zeros(len(target))
    hi = np.ones(len(target))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = ad.bernstein(coef, mid, 0) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.clip(0.5 * (lo + hi), 1e-12, 1 - 1e-12)


def test_q_normalizes_in_2d():
    flow = random_flow(2, 5, 3, scale=0.3)
    zs = np.linspace(-9, 9, 201)
    grid = np.array(np.meshgrid(zs, zs)).reshape(2, -1).T
    th, _ = mv_forward(flow, grid)
    lo1, hi1 = th[:, 0].min(), th[:, 0].max()
    lo2, hi2 = th[:, 1].min(), th[:, 1].max()
    t1, w1 = gauss_legendre(lo1, hi1, 300)
    t2, w2 = gauss_legendre(lo2, hi2, 300)
    T1, T2 = (a.ravel() for a in np.meshgrid(t1, t2, indexing="ij"))
    W = np.outer(w1, w2).ravel()
    c1 = np.asarray(reparam_coefficients(flow.theta1_raw))
    v1 = _invert_bp(np.broadcast_to(c1, (len(T1), len(c1))), T1)
    z1 = np.log(v1) - np.log1p(-v1)
    zfull = np.column_stack([z1, np.zeros_like(z1)])
    c2 = np.asarray(reparam_coefficients(emit_coefficients(flow, zfull)[:, 1]))
    inside = (T2 > c2[:, 0]) & (T2 < c2[:, -1])
    v2 = _invert_bp(c2, T2)
    z2 = np.log(v2) - np.log1p(-v2)
    lq = mv_log_q(flow, np.column_stack([z1, z2]))
    mass = np.sum(W * np.where(inside, np.exp(lq), 0.0))
    assert abs(mass - 1.0) <= 1e-3, mass


def test_initial_params_ramp():
    p, M = 3, 10
    params = MultivariateBernsteinFlow.initial_params(p, M, np.random.default_rng(0))
    np.testing.assert_allclose(reparam_coefficients(params["theta1_raw"]), np.linspace(-3, 3, M + 1), atol=1e-12)
    assert np.all(params["W2"] == 0)
    masks = build_masks(p, HIDDEN, M + 1)
    assert np.all(params["W0"][masks[0] == 0] == 0)
