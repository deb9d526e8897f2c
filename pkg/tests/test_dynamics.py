import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqg.dynamics import (
    CutoffSpec,
    HistoryBuffer,
    InsufficientHistoryError,
    PhysicalParams,
    bump_profile,
    mollified_velocity,
    nonlinear_term,
    profile_quadrature,
    rhs_approx,
    rhs_cutoff,
    rhs_sqg,
    rhs_v_equation,
    tangent_rhs,
)
from sqg.spectral import GridSpec, SpectralField, inner, riesz_perp, sobolev_norm

from .conftest import rand

seeds = st.integers(0, 2**32 - 1)


def test_params_validation():
    with pytest.raises(ValueError, match=r"alpha must lie in \(0,1\)"):
        PhysicalParams(1.0, 1.2)
    with pytest.raises(ValueError, match="kappa"):
        PhysicalParams(0.0, 0.5)


def test_lambda_beyond_from_lattice():
    p = PhysicalParams(2.0, 0.5)
    assert p.lambda1 == 2.0
    assert math.isclose(p.lambda_beyond(0), 2.0)
    assert math.isclose(p.lambda_beyond(1), 2.0 * math.sqrt(2.0))
    assert math.isclose(p.lambda_beyond(2), 2.0 * math.sqrt(5.0))
    assert math.isclose(PhysicalParams(1.0, 0.75).lambda_beyond(2), 5**0.75)


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.1, 5.0))
def test_transport_cancellation(seed, amp):
    grid = GridSpec(16)
    th = SpectralField(grid, amp * rand(grid, np.random.default_rng(seed)))
    n = nonlinear_term(th)
    assert abs(inner(n, th)) <= 1e-12 * sobolev_norm(n, 0) * sobolev_norm(th, 0)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_energy_identity_of_rhs(seed):
    grid = GridSpec(16)
    params = PhysicalParams(0.7, 0.6)
    th = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    lhs = inner(rhs_sqg(th, params), th)
    rhs = -params.kappa * sobolev_norm(th, params.alpha) ** 2
    assert math.isclose(lhs, rhs, rel_tol=1e-11)


def test_single_mode_is_steady_for_transport(grid16):
    th = SpectralField.single_mode(grid16, (2, 3), "cos", 4.0)
    assert np.max(np.abs(nonlinear_term(th).coeffs)) < 1e-13


def test_v_equation_reduces_to_sqg(grid16, rng, params):
    v = SpectralField(grid16, rand(grid16, rng))
    z = SpectralField(grid16, rand(grid16, rng))
    lhs = rhs_v_equation(v, z, params).coeffs
    full = rhs_sqg(v + z, params).coeffs
    # the v drift carries the dissipation of v only
    expect = full + params.eigenvalues(grid16) * z.coeffs
    assert np.max(np.abs(lhs - expect)) < 1e-13


def test_bump_quadrature():
    assert bump_profile(np.array([0.5, 1.0, 2.0, 2.5])).tolist() == [0, 0, 0, 0]
    tau, w = profile_quadrature(16)
    assert np.all((tau > 1) & (tau < 2))
    assert math.isclose(w.sum(), 1.0)
    # symmetric bump: mean delay 1.5
    assert math.isclose(np.dot(w, tau), 1.5, rel_tol=1e-10)


def test_history_buffer_rules(grid16):
    h = HistoryBuffer(0.08, grid16)
    h.push(0.0, np.ones((16, 16)))
    with pytest.raises(ValueError, match="delta/8"):
        h.push(0.02, np.ones((16, 16)))
    h.push(0.01, 3 * np.ones((16, 16)))
    assert np.allclose(h.value_at(0.005), 2.0)
    assert not np.any(h.value_at(-0.1))
    with pytest.raises(InsufficientHistoryError):
        h.value_at(0.5)
    with pytest.raises(ValueError, match="increasing"):
        h.push(0.01, np.ones((16, 16)))


def test_mollified_velocity_of_constant_history(grid16, params):
    th = SpectralField.single_mode(grid16, (1, 2), "cos")
    delta = 0.04
    h = HistoryBuffer(delta, grid16)
    t = 0.0
    while t < 0.2 + 1e-12:
        h.push(t, th.coeffs)
        t = round(t + delta / 8, 12)
    u1, u2 = mollified_velocity(h, 0.2)
    r1, r2 = riesz_perp(th)
    damp = math.exp(-delta * math.sqrt(5))
    assert np.allclose(u1.coeffs, damp * r1.coeffs, atol=1e-14)
    assert np.allclose(u2.coeffs, damp * r2.coeffs, atol=1e-14)


def test_mollified_velocity_vanishes_before_delay(grid16, params):
    th = SpectralField.single_mode(grid16, (1, 0), "cos")
    h = HistoryBuffer(0.08, grid16)
    h.push(0.0, th.coeffs)
    u1, u2 = mollified_velocity(h, 0.0)
    assert not np.any(u1.coeffs) and not np.any(u2.coeffs)
    r = rhs_approx(th, h, 0.0, params)
    assert np.allclose(r.coeffs, -params.eigenvalues(grid16) * th.coeffs)


@pytest.mark.parametrize("profile", ["linear", "quintic"])
def test_cutoff_profile(profile):
    cut = CutoffSpec(3.0, 1.5, profile)
    a = np.linspace(0, 8, 4001)
    chi = cut.chi(a)
    assert np.all(chi[a <= 3.0] == 1.0) and np.all(chi[a >= 3.0 + cut.width] == 0.0)
    assert np.all(np.diff(chi) <= 0)
    # slope bound |chi'| <= 1
    assert np.max(np.abs(cut.dchi(a))) <= 1.0 + 1e-12
    mid = (a > 3.05) & (a < 3.0 + cut.width - 0.05)
    fd = np.gradient(chi, a)
    assert np.allclose(fd[mid], cut.dchi(a)[mid], atol=1e-4)


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffSpec(-1.0, 1.5)
    with pytest.raises(ValueError):
        CutoffSpec(1.0, 1.0)
    with pytest.raises(ValueError):
        CutoffSpec(1.0, 1.5, "cubic")


@settings(max_examples=15, deadline=None)
@given(seeds, st.sampled_from(["linear", "quintic"]), st.booleans())
def test_tangent_matches_central_difference(seed, profile, on_ramp):
    grid = GridSpec(16)
    params = PhysicalParams(1.0, 0.75)
    rng = np.random.default_rng(seed)
    c = 2.0 * rand(grid, rng)
    th, h = SpectralField(grid, c), SpectralField(grid, rand(grid, rng))
    level = sobolev_norm(th, 1.5) ** 2
    width = 1.0 if profile == "linear" else 15 / 8
    R = level - 0.5 * width if on_ramp else level + 1.0
    cut = CutoffSpec(R, 1.5, profile)
    eps = 1e-5
    fd = (rhs_cutoff(th + eps * h, cut, params).coeffs - rhs_cutoff(th - eps * h, cut, params).coeffs) / (2 * eps)
    an = tangent_rhs(th, h, cut, params).coeffs
    assert np.linalg.norm(fd - an) <= 1e-6 * np.linalg.norm(an)


def test_cutoff_switches_off_nonlinearity(grid16, rng, params):
    th = SpectralField(grid16, 5.0 * rand(grid16, rng))
    cut = CutoffSpec(1e-3, 1.5)
    lin = -params.eigenvalues(grid16) * th.coeffs
    assert np.allclose(rhs_cutoff(th, cut, params).coeffs, lin)
