import math

import mpmath
import numpy as np
import pytest

from sqg.coupling import (
    CoupledConfig,
    control_shift,
    critical_exponent,
    delta0_constant,
    gamma_curve,
    rhs_nudged,
    run_synchronization,
)
from sqg.dynamics import PhysicalParams
from sqg.integrate import ConfigError, SimConfig
from sqg.noise import NoiseSpec, build_additive_noise, check_hypothesis_E2
from sqg.spectral import (
    GridSpec,
    SpectralField,
    advection_coeffs,
    apply_lambda_s,
    inner,
    project_ball,
    riesz_perp_coeffs,
    sobolev_norm,
)

from .conftest import rand


def base(**kw):
    d = dict(M=16, dt=0.01, t_end=0.5, noise=NoiseSpec(kind="E3"), diagnostic_stride=5)
    d.update(kw)
    return SimConfig(**d)


def test_critical_exponent():
    assert critical_exponent(0.75) == 7.0
    assert math.isclose(critical_exponent(0.6), 16.0)
    with pytest.raises(ValueError):
        critical_exponent(0.5)


def test_gain_defaults_and_validation():
    cfg = CoupledConfig(base(), N=2)
    assert math.isclose(cfg.lambda_next, 5**0.75)
    assert cfg.gain == 2 * cfg.lambda_next and cfg.gain_exceeds_gap
    assert not CoupledConfig(base(), N=2, K0=1.0).gain_exceeds_gap
    with pytest.raises(ConfigError):
        CoupledConfig(base(noise=NoiseSpec(kind="multiplicative"), scheme="euler-maruyama"))
    with pytest.raises(ConfigError):
        CoupledConfig(base(), K0=-1.0)


def test_delta0_against_mpmath():
    params = PhysicalParams(0.8, 0.75)
    consts = {"C_S_hat": 0.9, "C_R_hat": 1.1}
    e0, N = 0.37, 2
    got, positive = delta0_constant(params, e0, N, consts)
    mp = mpmath.mp
    mp.dps = 40
    p = mpmath.mpf(7)
    lam_next = mpmath.mpf("0.8") * mpmath.power(5, mpmath.mpf("0.75"))
    pen = (
        mpmath.power(2, p / 2) * mpmath.power(mpmath.mpf("1.1"), p) * mpmath.power(mpmath.mpf("0.9"), 2 * p)
        * mpmath.power(mpmath.mpf("0.8"), 1 - p) * mpmath.power(p * (p - 1), p / 2)
        * mpmath.power(mpmath.mpf("0.8"), -p / 2) * mpmath.power(mpmath.mpf("0.37"), p / 2)
    )
    want = lam_next - pen
    assert math.isclose(got, float(want), rel_tol=1e-12)
    assert positive == (want > 0)
    alt, _ = delta0_constant(params, e0, N, consts, sobolev_power=8.0)
    # C_S < 1, so the lower Sobolev power gives the larger penalty
    assert alt < got
    assert delta0_constant(params, 0.0, N, consts)[0] == params.lambda_beyond(N)


def test_gamma_curve_trapezoid():
    params = PhysicalParams(1.0, 0.75)
    t = np.linspace(0, 2, 21)
    lp = np.full_like(t, 0.5)
    g = gamma_curve(t, lp, params, 2, 1.0, 1.0)
    expect = -params.lambda_beyond(2) + 2 * 0.5**7 * 0.5 ** (-6)
    assert np.allclose(g, expect)


def test_rho_energy_identity(rng):
    """0.5 d/dt |Lambda^-1/2 rho|^2 = -kappa |Lambda^(alpha-1/2) rho|^2 - K0 |P_N Lambda^-1/2 rho|^2 - <u.grad rho, Lambda^-1 rho>."""
    grid = GridSpec(16)
    cfg = CoupledConfig(base(), N=2)
    params = cfg.params
    th = SpectralField(grid, rand(grid, rng))
    tt = SpectralField(grid, rand(grid, rng))
    rho = tt - th
    drho = rhs_nudged(tt, th, cfg) - rhs_nudged(th, th, cfg)
    lhs = inner(drho, apply_lambda_s(rho, -1.0))
    # -u_theta.grad rho as -div(u_theta rho); the u_rho.grad theta~ part cancels
    u1, u2 = riesz_perp_coeffs(th.coeffs, grid)
    adv = SpectralField(grid, advection_coeffs(u1, u2, rho.coeffs, grid))
    rhs = (
        -params.kappa * sobolev_norm(rho, params.alpha - 0.5) ** 2
        - cfg.gain * sobolev_norm(project_ball(rho, 2), -0.5) ** 2
        + inner(adv, apply_lambda_s(rho, -1.0))
    )
    scale = abs(params.kappa * sobolev_norm(rho, params.alpha - 0.5) ** 2) + abs(inner(adv, apply_lambda_s(rho, -1.0)))
    assert abs(lhs - rhs) <= 1e-9 * scale


def test_control_shift_reproduces_feedback(rng):
    grid = GridSpec(16)
    cfg = CoupledConfig(base(), N=2)
    noise = build_additive_noise(cfg.params, cfg.base.noise, grid)
    e2 = check_hypothesis_E2(noise, 2)
    th = SpectralField(grid, rand(grid, rng))
    tt = SpectralField(grid, rand(grid, rng))
    h, hsq = control_shift(th, tt, cfg, e2)
    gh = noise.apply(h)
    target = -cfg.gain * project_ball(tt - th, 2).coeffs
    assert np.allclose(gh, target, atol=1e-13)
    assert math.isclose(hsq, float(np.sum(h * h)))


def test_identical_start_stays_synchronized():
    b = base(initial_condition={"name": "random", "label": 0})
    cfg = CoupledConfig(b, N=2, theta0_tilde={"name": "random", "label": 0}, n_pairs=2)
    for rec in run_synchronization(cfg):
        assert not np.any(rec.column("d_hminushalf"))
        assert not np.any(rec.column("h_sq_cum"))
        assert len(rec.rows) == 50 // 5 + 1


def test_nudged_pair_contracts():
    cfg = CoupledConfig(base(t_end=5.0, dt=0.01), N=2, n_pairs=1)
    rec = run_synchronization(cfg, constants={"C_S_hat": 0.9, "C_R_hat": 1.1})[0]
    d = rec.column("d_hminushalf")
    assert d[-1] < 1e-4 * d[0]
    assert np.all(np.isfinite(rec.column("gamma_hat")))
    assert np.all(np.diff(rec.column("h_sq_cum")) >= 0)


def test_pairs_independent_of_batching():
    cfg = CoupledConfig(base(), N=2, n_pairs=3)
    together = run_synchronization(cfg)
    alone = run_synchronization(cfg, pairs=(2,))
    assert together[2].rows == alone[0].rows


def test_euler_maruyama_pair_runs():
    cfg = CoupledConfig(base(scheme="euler-maruyama"), N=1)
    rec = run_synchronization(cfg)[0]
    assert rec.column("d_hminushalf")[-1] < rec.column("d_hminushalf")[0]
