import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import beta as beta_dist

from bernflow import autodiff as ad
from bernflow.bernstein import (
    CLAMP_EPS, DomainError, RangeError, SandwichFlow, beta_basis_density, bp_derivative,
    bp_forward, log_normal_pdf, log_q_density_1d, reparam_coefficients, sandwich_forward,
    sandwich_inverse,
)
from bernflow.diagnostics import gauss_legendre

raw_vec = arrays(float, st.integers(2, 12), elements=st.floats(-4, 4))
unit = st.floats(0.0, 1.0)


@st.composite
def flows(draw, max_order=12):
    M = draw(st.integers(1, max_order))
    raw = draw(arrays(float, M + 1, elements=st.floats(-3, 3)))
    a_raw, b, alpha_raw, beta = (draw(st.floats(-2, 2)) for _ in range(4))
    return SandwichFlow(raw, a_raw, b, alpha_raw, beta)


def identity_flow(M=5):
    return SandwichFlow.from_derived(np.arange(M + 1) / M)


# -- basis ------------------------------------------------------------------

@pytest.mark.parametrize("i,M,z,expected", [(0, 2, 0.0, 3.0), (1, 2, 0.5, 1.5), (5, 5, 1.0, 6.0)])
def test_beta_basis_density_examples(i, M, z, expected):
    assert beta_basis_density(i, M, z) == pytest.approx(expected, rel=1e-14)


@given(M=st.integers(0, 40), z=st.floats(0.001, 0.999))
def test_beta_basis_density_is_beta_pdf(M, z):
    for i in range(M + 1):
        assert beta_basis_density(i, M, z) == pytest.approx(beta_dist(i + 1, M - i + 1).pdf(z), rel=1e-10)


@pytest.mark.parametrize("args", [(-1, 3, 0.5), (4, 3, 0.5), (0, 3, -0.1), (0, 3, 1.1)])
def test_beta_basis_density_domain_errors(args):
    with pytest.raises(DomainError):
        beta_basis_density(*args)


@given(M=st.integers(0, 80), z=unit)
def test_partition_of_unity(M, z):
    total = sum(beta_basis_density(i, M, z) for i in range(M + 1)) / (M + 1)
    assert abs(total - 1.0) <= 1e-12


# -- coefficients -------------------------------------------------------------

def test_reparam_examples():
    np.testing.assert_allclose(reparam_coefficients(np.zeros(3)), [0, math.log(2), 2 * math.log(2)], rtol=1e-15)
    np.testing.assert_array_equal(reparam_coefficients(np.array([-5.0])), [-5.0])
    c = reparam_coefficients(np.array([1.0, -20.0, -20.0]))
    d = np.diff(c)
    assert c[0] == 1.0 and np.all(d > 0) and np.all(d < 1e-8)


@given(raw=raw_vec)
def test_reparam_strictly_increasing_and_keeps_first(raw):
    c = reparam_coefficients(raw)
    assert c[0] == raw[0]
    assert np.all(np.diff(c) > 0)


def test_reparam_rejects_non_finite():
    with pytest.raises(DomainError):
        reparam_coefficients(np.array([0.0, np.nan]))


# -- polynomial -------------------------------------------------------------

@given(c=st.floats(-5, 5), M=st.integers(1, 30), z=unit)
def test_constant_coefficients_give_constant(c, M, z):
    assert bp_forward(np.full(M + 1, c), z) == pytest.approx(c, abs=1e-12)
    assert bp_derivative(np.full(M + 1, c), z) == pytest.approx(0.0, abs=1e-10)


@given(M=st.integers(1, 30), z=unit)
def test_linear_precision(M, z):
    coef = np.arange(M + 1) / M
    assert bp_forward(coef, z) == pytest.approx(z, abs=1e-12)
    assert bp_derivative(coef, z) == pytest.approx(1.0, abs=1e-10)


def test_boundary_example():
    assert bp_forward(np.array([-2.0, 0.0, 5.0]), 0.0) == -2.0


@given(raw=raw_vec)
def test_boundary_interpolation(raw):
    c = reparam_coefficients(raw)
    assert abs(bp_forward(c, 0.0) - c[0]) <= 1e-12
    assert abs(bp_forward(c, 1.0) - c[-1]) <= 1e-12


def test_bp_domain_error():
    with pytest.raises(DomainError):
        bp_forward(np.array([0.0, 1.0]), 1.5)
    with pytest.raises(DomainError):
        bp_derivative(np.array([0.0, 1.0]), -0.5)


@given(raw=raw_vec)
def test_bp_derivative_matches_fd(raw):
    c = reparam_coefficients(raw)
    h, z = 1e-6, 0.37
    fd = (bp_forward(c, z + h) - bp_forward(c, z - h)) / (2 * h)
    assert bp_derivative(c, z) == pytest.approx(fd, rel=1e-6)


@given(raw=raw_vec, z=st.floats(1e-6, 1 - 1e-6))
def test_bp_derivative_positive_inside(raw, z):
    assert bp_derivative(reparam_coefficients(raw), z) > 0


def test_derivative_closed_form():
    rng = np.random.default_rng(3)
    c = np.sort(rng.normal(size=8))
    M, z = 7, 0.61
    expected = sum((c[i + 1] - c[i]) * math.comb(M - 1, i) * M * z ** i * (1 - z) ** (M - 1 - i)
                   for i in range(M))
    assert bp_derivative(c, z) == pytest.approx(expected, rel=1e-13)


# -- sandwich -----------------------------------------------------------------

def test_identity_like_flow_is_sigmoid():
    flow = identity_flow()
    for z in (-2.0, 0.0, 1.3):
        out = sandwich_forward(flow, z)
        s = 1 / (1 + math.exp(-z))
        assert out.theta == pytest.approx(s, abs=1e-12)
        assert out.log_det == pytest.approx(math.log(s * (1 - s)), abs=1e-10)


def test_identity_like_log_q_at_zero():
    expected = -0.5 * math.log(2 * math.pi) - math.log(0.25)
    assert log_q_density_1d(identity_flow(), 0.0) == pytest.approx(expected, abs=1e-12)


def test_doubling_alpha_shifts_log_q(rng):
    c = np.sort(rng.normal(size=6))
    f1 = SandwichFlow.from_derived(c, a=1.3, alpha=0.7)
    f2 = SandwichFlow.from_derived(c, a=1.3, alpha=1.4)
    assert log_q_density_1d(f2, 0.4) - log_q_density_1d(f1, 0.4) == pytest.approx(-math.log(2), abs=1e-12)


@given(flow=flows(), z=st.floats(-6, 6), dz=st.floats(1e-3, 3))
def test_strict_monotonicity(flow, z, dz):
    assert sandwich_forward(flow, z + dz).theta > sandwich_forward(flow, z).theta


@given(flow=flows(), z=st.floats(-4, 4))
def test_log_det_finite(flow, z):
    assert np.isfinite(sandwich_forward(flow, z).log_det)


def test_log_det_matches_fd_over_many_flows():
    rng = np.random.default_rng(7)
    h = 1e-5
    worst = 0.0
    for _ in range(1000):
        M = int(rng.integers(1, 20))
        flow = SandwichFlow(rng.normal(size=M + 1), *rng.normal(size=4) * 0.8)
        z = float(rng.uniform(-3, 3))
        fd = (sandwich_forward(flow, z + h).theta - sandwich_forward(flow, z - h).theta) / (2 * h)
        an = math.exp(sandwich_forward(flow, z).log_det)
        worst = max(worst, abs(an - fd) / abs(fd))
    assert worst <= 1e-4


def test_log_det_example_z_02(rng):
    flow = SandwichFlow(rng.normal(size=9), 0.3, -0.2, 0.5, 1.0)
    h = 1e-5
    fd = (sandwich_forward(flow, 0.2 + h).theta - sandwich_forward(flow, 0.2 - h).theta) / (2 * h)
    assert math.exp(sandwich_forward(flow, 0.2).log_det) == pytest.approx(fd, rel=1e-4)


def test_clamp_keeps_log_det_finite_at_extreme_z():
    flow = identity_flow()
    out = sandwich_forward(flow, 1e3)
    assert np.isfinite(out.log_det)
    assert out.theta == pytest.approx(1 - CLAMP_EPS)


def test_inverse_round_trip_example():
    flow = SandwichFlow(np.array([-1.0, 0.3, -0.5, 0.8]), 0.2, 0.1, -0.3, 0.4)
    theta = sandwich_forward(flow, 0.7).theta
    assert abs(sandwich_inverse(flow, theta, 1e-10) - 0.7) <= 1e-8


def test_inverse_above_supremum_raises():
    flow = SandwichFlow(np.array([-1.0, 0.3, 0.8]), 0.2, 0.1, -0.3, 0.4)
    hi = flow.support()[1]
    with pytest.raises(RangeError):
        sandwich_inverse(flow, hi + 1.0)


def test_inverse_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(100):
        M = int(rng.integers(1, 15))
        flow = SandwichFlow(rng.normal(size=M + 1), *rng.normal(size=4) * 0.5)
        z0 = float(rng.uniform(-3, 3))
        theta = float(sandwich_forward(flow, z0).theta)
        z = sandwich_inverse(flow, theta, 1e-10)
        assert abs(float(sandwich_forward(flow, z).theta) - theta) <= 1e-10
        assert abs(z - z0) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_q_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    flow = SandwichFlow(rng.normal(size=11), *rng.normal(size=4) * 0.5)
    # quadrature over theta; the density at each node comes from the inverse
    lo, hi = (float(sandwich_forward(flow, z).theta) for z in (-8.0, 8.0))
    theta, w = gauss_legendre(lo, hi, 512)
    z = np.array([sandwich_inverse(flow, t, 1e-11) for t in theta])
    mass = np.sum(w * np.exp(log_q_density_1d(flow, z)))
    assert abs(mass - 1.0) <= 1e-4


def test_log_normal_pdf():
    assert log_normal_pdf(0.0) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_initial_flow_spans_ramp():
    flow = SandwichFlow.initial(10)
    c = np.asarray(flow.coefficients)
    np.testing.assert_allclose(c, np.linspace(-3, 3, 11), atol=1e-12)
    assert float(flow.a) == pytest.approx(1.0) and float(flow.alpha) == pytest.approx(1.0)


def test_traced_flow_gradient():
    flat = np.array([0.1, -0.3, 0.5, 0.2, 0.0, 0.1, -0.2, 0.3])

    def f(p):
        flow = SandwichFlow(ad.getitem(p, slice(0, 4)), *(ad.getitem(p, 4 + k) for k in range(4)))
        out = sandwich_forward(flow, np.array([-1.0, 0.2, 2.0]))
        return ad.sum(out.theta + out.log_det)

    ok, worst = ad.check_gradient(f, flat)
    assert ok, worst
