"""Property checks with explicit tolerances, each returning a ClaimReport.

The ``verify`` experiment runs every check at reduced sizes; the acceptance
tests call the same functions at full size.
"""
from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np

from .constants import empirical_constants
from .coupling import CoupledConfig, run_synchronization
from .diagnostics import (
    ClaimReport,
    MomentBoundSpec,
    batch_means,
    energy_balance_check,
    fit_decay,
    lp_moment_check,
    positivity_functional,
    write_reports,
)
from .dynamics import CutoffSpec, PhysicalParams, nonlinear_coeffs, rhs_cutoff, tangent_rhs
from .integrate import SimConfig, integrate_tangent, simulate
from .noise import NoiseSpec, build_additive_noise
from .spectral import (
    GridSpec,
    SpectralField,
    advection_coeffs,
    inner_coeffs,
    lp_norm_values,
    riesz_perp_coeffs,
    sobolev_sq,
    to_physical,
)

__all__ = [
    "check_spectral_identities",
    "check_cancellations",
    "check_positivity",
    "check_single_mode_decay",
    "check_semigroup_contraction",
    "check_deterministic_envelope",
    "check_energy_balance",
    "check_moment_bound",
    "check_synchronization",
    "check_tangent",
    "check_cross_formulation",
    "check_time_averages",
    "run_suites",
]


def _fields(grid, n, seed, slopes=(0.0, 1.0, 2.0, 3.0)):
    from .spectral import random_coeffs

    rng = np.random.default_rng(seed)
    return np.stack([
        random_coeffs(grid, rng, slope=slopes[i % len(slopes)], band=int(rng.integers(2, grid.kmax + 1)))
        for i in range(n)
    ])


def _norm(c):
    return np.sqrt(np.sum(np.abs(c) ** 2, axis=(-2, -1)))


# ---------------------------------------------------------------------------
# static identities


def check_spectral_identities(M=64, n_fields=500, seed=1, exact_tol=1e-12, quad_tol=1e-10):
    grid = GridSpec(M)
    c = _fields(grid, n_fields, seed)
    rng = np.random.default_rng(seed + 1)
    reports = []

    a, b = rng.uniform(-2, 2, 2)
    comp = grid.multiplier_power(a) * (grid.multiplier_power(b) * c)
    direct = grid.multiplier_power(a + b) * c
    err = float(np.max(_norm(comp - direct) / _norm(direct)))
    reports.append(ClaimReport("Lambda^a Lambda^b = Lambda^(a+b)", err, 0.0, exact_tol, err <= exact_tol, {"a": a, "b": b}))

    u1, u2 = riesz_perp_coeffs(c, grid)
    div = 1j * grid.k1 * u1 + 1j * grid.k2 * u2
    err = float(np.max(_norm(div) / np.sqrt(sobolev_sq(c, grid, 1.0))))
    reports.append(ClaimReport("div R^perp theta = 0", err, 0.0, exact_tol, err <= exact_tol))

    l2_quad = lp_norm_values(to_physical(c, grid, grid.quad_points), 2.0)
    err = float(np.max(np.abs(l2_quad - _norm(c)) / _norm(c)))
    reports.append(ClaimReport("Parseval (quadrature vs coefficients)", err, 0.0, quad_tol, err <= quad_tol))

    worst = 0.0
    for _ in range(20):
        s0, s1 = np.sort(rng.uniform(-1.5, 2.5, 2))
        th = rng.uniform(0, 1)
        s = (1 - th) * s0 + th * s1
        lhs = np.sqrt(sobolev_sq(c, grid, s))
        rhs = np.sqrt(sobolev_sq(c, grid, s0)) ** (1 - th) * np.sqrt(sobolev_sq(c, grid, s1)) ** th
        worst = max(worst, float(np.max(lhs / rhs - 1.0)))
    reports.append(ClaimReport("interpolation inequality, constant 1", worst, 0.0, exact_tol, worst <= exact_tol))
    return reports


def check_cancellations(M=64, n_pairs=200, seed=2, tol=1e-9):
    grid = GridSpec(M)
    th = _fields(grid, n_pairs, seed)
    g = _fields(grid, n_pairs, seed + 1)

    adv = nonlinear_coeffs(th, grid)  # -u.grad theta
    worst_a = float(np.max(np.abs(inner_coeffs(adv, th)) / (_norm(adv) * _norm(th))))

    u1, u2 = riesz_perp_coeffs(th, grid)
    # u_rho . grad g = div(u_rho g) for divergence-free u_rho
    ug = -advection_coeffs(u1, u2, g, grid)
    inv = grid.multiplier_power(-1.0) * th
    worst_r = float(np.max(np.abs(inner_coeffs(ug, inv)) / (_norm(ug) * _norm(inv))))
    return [
        ClaimReport("<u.grad theta, theta> = 0", worst_a, 0.0, tol, worst_a <= tol),
        ClaimReport("<u_rho.grad g, Lambda^-1 rho> = 0", worst_r, 0.0, tol, worst_r <= tol),
    ]


def check_positivity(M=32, n_fields=200, ps=(3.0, 4.0, 6.0), alphas=(0.55, 0.75), seed=3, tol=1e-9):
    grid = GridSpec(M)
    c = _fields(grid, n_fields, seed)
    n = grid.quad_points
    cell = (2 * np.pi / n) ** 2
    f = to_physical(c, grid, n)
    worst = math.inf
    for alpha in alphas:
        params = PhysicalParams(1.0, alpha)
        lf = to_physical(params.eigenvalues(grid) * c, grid, n)
        for p in ps:
            for i in range(n_fields):
                val = positivity_functional(SpectralField(grid, c[i]), p, params)
                w = np.abs(f[i]) ** (p - 2.0) * f[i]
                scale = cell * np.sum(np.abs(w * lf[i]) + (2.0 / p) * np.abs(w * f[i]))
                worst = min(worst, val / scale)
    return [ClaimReport("positivity functional >= 0 (scaled)", worst, 0.0, tol, worst >= -tol)]


# ---------------------------------------------------------------------------
# linear and deterministic dynamics


def check_single_mode_decay(alphas=(0.6, 0.75), M=32, kappa=1.0, t_end=1.0, dt=0.01, tol=1e-10):
    reports = []
    for alpha in alphas:
        cfg = SimConfig(
            kappa=kappa, alpha=alpha, M=M, dt=dt, t_end=t_end, scheme="deterministic-rk4",
            initial_condition={"name": "single_mode", "k": (1, 0), "amplitude": 1.0},
            lp_orders=(), diagnostic_stride=round(t_end / dt),
        )
        res = simulate(cfg)
        c = res.final.theta[0]
        amp = float(np.real(c[1, 0]) / np.pi)
        other = float(np.sqrt(np.sum(np.abs(c) ** 2) - 2 * abs(c[1, 0]) ** 2))
        err = abs(amp - math.exp(-kappa * t_end)) + other
        reports.append(ClaimReport(f"single-mode decay alpha={alpha:g}", err, 0.0, tol, err <= tol, {"amplitude": amp}))
    return reports


def check_semigroup_contraction(M=32, n_fields=50, ps=(3.0, 4.0, 6.0), alpha=0.75, kappa=1.0,
                                times=(0.05, 0.2, 0.5, 1.0, 2.0), seed=5, tol=1e-8):
    grid = GridSpec(M)
    params = PhysicalParams(kappa, alpha)
    c = _fields(grid, n_fields, seed)
    lam = params.eigenvalues(grid)
    n = grid.quad_points
    f0 = to_physical(c, grid, n)
    worst = -math.inf
    for t in times:
        ft = to_physical(np.exp(-lam * t) * c, grid, n)
        for p in ps:
            ratio = lp_norm_values(ft, p) / (math.exp(-2 * params.lambda1 * t / p) * lp_norm_values(f0, p))
            worst = max(worst, float(np.max(ratio - 1.0)))
    return [ClaimReport("L^p contraction of the linear semigroup", worst, 0.0, tol, worst <= tol)]


def check_deterministic_envelope(M=64, t_end=10.0, dt=5e-3, ps=(3.0, 4.0, 6.0), amplitude=3.0, slack=1.05,
                                 n_traj=2, seed=6):
    cfg = SimConfig(
        M=M, dt=dt, t_end=t_end, scheme="deterministic-rk4", seed=seed,
        initial_condition={"name": "random", "amplitude": amplitude, "band": 6, "slope": 1.0},
        lp_orders=ps, diagnostic_stride=10,
    )
    res = simulate(cfg, trajs=tuple(range(n_traj)))
    lam1 = cfg.params.lambda1
    worst = -math.inf
    for rec in res.records:
        t = rec.column("t")
        for p in ps:
            v = rec.column(f"lp_{p:g}") ** p
            worst = max(worst, float(np.max(v / (v[0] * np.exp(-lam1 * t)))))
    return [ClaimReport(f"deterministic L^p envelope (x{slack:g})", worst, slack, 0.0, worst <= slack)]


# ---------------------------------------------------------------------------
# stochastic ensembles


def e3_config(**kw):
    base = dict(
        M=32, dt=0.01, t_end=1.0, noise=NoiseSpec(kind="E3", s_reg=2.0, q0_scale=1.0),
        scheme="exp-euler-additive", initial_condition={"name": "random", "amplitude": 1.0, "band": 4},
        lp_orders=(), diagnostic_stride=10,
    )
    base.update(kw)
    return SimConfig(**base)


def check_energy_balance(n_traj=64, dt=2e-3, t_end=1.0, M=32, seed=7):
    cfg = e3_config(M=M, dt=dt, t_end=t_end, seed=seed, diagnostic_stride=round(t_end / dt))
    res = simulate(cfg, trajs=tuple(range(n_traj)))
    noise = build_additive_noise(cfg.params, cfg.noise, cfg.grid)
    l2 = np.array([rec.column("l2") for rec in res.records])
    diss = np.array([rec.column("dissipation_integral")[-1] for rec in res.records])
    # the simulated system carries only the truncated part of the trace
    trace = noise.trace - noise.trace_tail
    return [energy_balance_check(l2[:, -1] ** 2, diss, l2[:, 0] ** 2, t_end, trace, cfg.kappa, dt)]


def check_moment_bound(n_traj=32, p=4.0, t_end=10.0, dt=0.01, M=32, slack=2.0, seed=8):
    cfg = e3_config(
        M=M, dt=dt, t_end=t_end, seed=seed, lp_orders=(p,), diagnostic_stride=10,
        initial_condition={"name": "single_mode", "k": (1, 0), "amplitude": 1.0},
    )
    res = simulate(cfg, trajs=tuple(range(n_traj)))
    noise = build_additive_noise(cfg.params, cfg.noise, cfg.grid)
    cs, _ = empirical_constants(M, p)
    t = res.records[0].column("t")
    moments = np.array([rec.column(f"lp_{p:g}") ** p for rec in res.records])
    spec = MomentBoundSpec(p, cfg.params.lambda1, noise.energy0, cs, float(moments[0, 0] ** (1 / p)), slack)
    rep = lp_moment_check(t, moments, spec)
    rep.detail["C_S_hat"] = cs
    return [rep]


def sync_rates(cfg, floor_rel=1e-10, transient=1.0):
    recs = run_synchronization(cfg)
    rates = []
    for rec in recs:
        t = rec.column("t")
        d = rec.column("d_hminushalf")
        floor = floor_rel * d[0]
        try:
            rates.append(fit_decay(t, d, "exponential", transient=transient, floor=floor).rate)
        except ValueError:
            # collapsed below the floor before the transient ended
            rates.append(math.inf)
    return np.array(rates), recs


def check_synchronization(n_pairs=8, t_end=50.0, dt=0.01, M=32, alpha=0.75, N=2, fraction=0.25, seed=9,
                          negative_control=True):
    base = e3_config(
        M=M, dt=dt, t_end=t_end, alpha=alpha, seed=seed, diagnostic_stride=10,
        initial_condition={"name": "random", "amplitude": 1.0, "band": 4, "label": 0},
    )
    tilde = {"name": "random", "amplitude": 1.0, "band": 4, "label": 1}
    cfg = CoupledConfig(base, N=N, theta0_tilde=tilde, n_pairs=n_pairs)
    target = fraction * cfg.lambda_next
    rates, _ = sync_rates(cfg)
    med = float(np.median(rates))
    reports = [ClaimReport(
        f"nudged pairs contract at >= {fraction:g} lambda_(N+1)", med, target, 0.0, med >= target > 0,
        {"rates": rates, "lambda_next": cfg.lambda_next, "K0": cfg.gain},
    )]
    if negative_control:
        ctrl = CoupledConfig(base, N=N, K0=0.0, theta0_tilde=tilde, n_pairs=n_pairs)
        rates0, _ = sync_rates(ctrl)
        med0 = float(np.median(rates0))
        reports.append(ClaimReport(
            f"K0 = 0 control stays below {fraction:g} lambda_(N+1)", med0, target, 0.0, med0 < target,
            {"rates": rates0},
        ))
    return reports


def check_tangent(M=32, n_samples=50, eps=1e-4, tol=1e-5, flow_tol=1e-3, t_flow=0.5, dt=0.01, seed=10,
                  n_flow=3):
    grid = GridSpec(M)
    params = PhysicalParams(1.0, 0.75)
    rng = np.random.default_rng(seed)
    th = _fields(grid, n_samples, seed)
    hh = _fields(grid, n_samples, seed + 1)
    s_reg = 1.5
    worst = 0.0
    for i in range(n_samples):
        c = th[i] * rng.uniform(0.5, 3.0)
        level = float(sobolev_sq(c, grid, s_reg))
        # ramp active for odd samples, flat region for even ones; kinks avoided
        R = level - rng.uniform(0.2, 0.8) if i % 2 else level + 1.0
        cut = CutoffSpec(R, s_reg)
        theta = SpectralField(grid, c)
        h = SpectralField(grid, hh[i])
        fd = (rhs_cutoff(theta + eps * h, cut, params).coeffs - rhs_cutoff(theta - eps * h, cut, params).coeffs) / (2 * eps)
        an = tangent_rhs(theta, h, cut, params).coeffs
        worst = max(worst, float(_norm(fd - an) / _norm(an)))
    reports = [ClaimReport("tangent vs central differences", worst, 0.0, tol, worst <= tol, {"eps": eps})]

    worst_flow = 0.0
    eps_flow = 1e-5
    for i in range(n_flow):
        c = th[i] * 2.0
        cut = CutoffSpec(float(sobolev_sq(c, grid, s_reg)) + 5.0, s_reg)
        theta, h = SpectralField(grid, c), SpectralField(grid, hh[i])
        _, dth = integrate_tangent(theta, h, cut, params, dt, t_flow)
        plus, _ = integrate_tangent(theta + eps_flow * h, h, cut, params, dt, t_flow)
        minus, _ = integrate_tangent(theta - eps_flow * h, h, cut, params, dt, t_flow)
        fd = (plus.coeffs - minus.coeffs) / (2 * eps_flow)
        worst_flow = max(worst_flow, float(_norm(fd - dth.coeffs) / _norm(dth.coeffs)))
    reports.append(ClaimReport(f"tangent flow over t={t_flow:g}", worst_flow, 0.0, flow_tol, worst_flow <= flow_tol))
    return reports


def check_cross_formulation(dts=(1e-2, 5e-3, 2.5e-3), n_traj=8, M=32, t_end=1.0, seed=11, min_order=1.0,
                            nested=True):
    """RMS over trajectories of |theta_dec(t) - theta_em(t)| / |theta_dec(t)|.

    With ``nested`` every dt draws its increments from the finest step grid, so
    all resolutions follow one Brownian path per trajectory.
    """
    grid = GridSpec(M)
    finest = min(dts)
    errs = []
    for dt in dts:
        stride = round(t_end / dt)
        sub = round(dt / finest) if nested else 1
        if nested and abs(sub * finest - dt) > 1e-12 * dt:
            raise ValueError("nested refinement needs every dt to be an integer multiple of the finest")
        kw = dict(M=M, dt=dt, t_end=t_end, seed=seed, diagnostic_stride=stride, increment_substeps=sub)
        a = simulate(e3_config(**kw), trajs=tuple(range(n_traj)))
        b = simulate(e3_config(scheme="euler-maruyama", **kw), trajs=tuple(range(n_traj)))
        diff = np.sqrt(sobolev_sq(a.final.theta - b.final.theta, grid, 0.0))
        ref = np.sqrt(sobolev_sq(a.final.theta, grid, 0.0))
        errs.append(float(np.sqrt(np.mean((diff / ref) ** 2))))
    errs = np.array(errs)
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    const = float(np.max(errs / np.array(dts)))
    return [ClaimReport(
        "decomposed vs direct run: observed order", order, min_order, 0.0, order >= min_order,
        {"dts": list(dts), "rms_relative_difference": errs, "C": const},
    )]


def check_time_averages(t_end=1e4, dt=0.02, M=32, burn_in=20.0, n_batches=20, stride=50, seed=12):
    cfg = e3_config(M=M, dt=dt, t_end=t_end, seed=seed, diagnostic_stride=stride)
    res = simulate(cfg, trajs=(0, 1))
    stats = []
    for rec in res.records:
        t = rec.column("t")
        v = rec.column("l2") ** 2
        stats.append(batch_means(v[t >= burn_in], n_batches))
    (ma, sa), (mb, sb) = stats
    err = math.hypot(sa, sb)
    return [ClaimReport(
        "time averages of |theta|^2 agree", abs(ma - mb), 3 * err, 3 * err, abs(ma - mb) <= 3 * err,
        {"means": [ma, mb], "stderr": [sa, sb]},
    )]


# ---------------------------------------------------------------------------
# suite runner


def hash_csvs(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(directory).glob("*.csv"))}


QUICK_SUITES = {
    "spectral_identities": lambda: check_spectral_identities(M=32, n_fields=50),
    "cancellations": lambda: check_cancellations(M=32, n_pairs=50),
    "positivity": lambda: check_positivity(M=16, n_fields=20),
    "single_mode_decay": lambda: check_single_mode_decay(),
    "semigroup_contraction": lambda: check_semigroup_contraction(n_fields=10),
    "deterministic_envelope": lambda: check_deterministic_envelope(M=32, t_end=2.0, n_traj=1),
    "energy_balance": lambda: check_energy_balance(n_traj=16, M=16, dt=4e-3),
    "tangent": lambda: check_tangent(M=16, n_samples=10, n_flow=1),
}


def run_suites(spec, out_dir, suites=None):
    """Run the named quick suites (all by default) and write verify_report.{json,txt}."""
    names = suites if suites is not None else spec.tree["verify"]["suites"]
    if names == "all":
        names = list(QUICK_SUITES)
    unknown = [n for n in names if n not in QUICK_SUITES]
    if unknown:
        from .integrate import ConfigError

        raise ConfigError(f"verify.suites: unknown suites {unknown}; available {sorted(QUICK_SUITES)}")
    reports = []
    for name in names:
        for r in QUICK_SUITES[name]():
            r.detail = dict(r.detail, suite=name)
            reports.append(r)
    out = Path(out_dir)
    write_reports(reports, out / "verify_report.json", out / "verify_report.txt")
    return reports
