"""Nudged auxiliary process, shared-noise synchronization and its constants.

The reference process theta solves the stochastic SQG equation; the auxiliary
process theta~ is driven by the same increments plus the feedback
-K0 P_N (theta~ - theta), P_N keeping the modes 0 < |k| <= N.  With additive
noise both are split as v + z and v~ + z with a common OU part z, so
rho = theta~ - theta = v~ - v carries no noise rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import rhs_sqg_coeffs
from .integrate import BlowUpError, ConfigError, DiagnosticsRecord, Integrator, SimConfig, initial_condition
from .noise import check_hypothesis_E2, complex_to_real
from .spectral import SpectralField, ball_mask, common_grid, lp_norm_values, sobolev_sq, to_physical

__all__ = [
    "CoupledConfig",
    "SyncRecord",
    "SYNC_COLUMNS",
    "rhs_nudged",
    "control_shift",
    "run_synchronization",
    "gamma_estimate",
    "gamma_curve",
    "delta0_constant",
    "critical_exponent",
]

SYNC_COLUMNS = ["t", "d_hminushalf", "rho_l2", "theta_lp", "h_sq_cum", "gamma_hat"]


def critical_exponent(alpha):
    """p = (alpha + 1)/(alpha - 1/2)."""
    if alpha <= 0.5:
        raise ValueError(f"critical exponent needs alpha > 1/2, got {alpha}")
    return (alpha + 1.0) / (alpha - 0.5)


@dataclass(frozen=True)
class CoupledConfig:
    base: SimConfig
    N: float = 2
    K0: float | None = None
    theta0_tilde: dict = field(default_factory=lambda: {"name": "random", "label": 1})
    n_pairs: int = 1
    high_moment_m: float = 6.0

    def __post_init__(self):
        if isinstance(self.base, dict):
            object.__setattr__(self, "base", SimConfig(**self.base))
        if not self.base.noise.additive:
            raise ConfigError("coupling requires additive noise")
        if self.base.scheme == "deterministic-rk4":
            raise ConfigError("coupling uses exp-euler-additive or euler-maruyama")
        if self.N < 0:
            raise ConfigError(f"N must be >= 0, got {self.N}")
        if self.K0 is not None and self.K0 < 0:
            raise ConfigError(f"K0 must be >= 0, got {self.K0}")
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be >= 1")

    @property
    def params(self):
        return self.base.params

    @property
    def lambda_next(self):
        """lambda_{N+1} = kappa (min_{|k|>N} |k|^2)^alpha."""
        return self.params.lambda_beyond(self.N)

    @property
    def gain(self):
        return 2.0 * self.lambda_next if self.K0 is None else float(self.K0)

    @property
    def gain_exceeds_gap(self):
        return self.gain > self.lambda_next

    @property
    def p_critical(self):
        return critical_exponent(self.params.alpha)


# ---------------------------------------------------------------------------
# instantaneous pieces


def nudging_coeffs(rho, grid, N, K0):
    return -K0 * np.where(ball_mask(grid, N), rho, 0.0)


def rhs_nudged(theta_tilde, theta, cfg):
    """Drift of theta~: rhs_sqg(theta~) - K0 P_N(theta~ - theta)."""
    grid = common_grid(theta_tilde, theta)
    c = rhs_sqg_coeffs(theta_tilde.coeffs, grid, cfg.params)
    c = c + nudging_coeffs(theta_tilde.coeffs - theta.coeffs, grid, cfg.N, cfg.gain)
    return SpectralField(grid, c)


def control_shift_coeffs(rho, grid, e2, K0):
    """Real mode vector h = -g K0 P_N rho and |h|^2 (batched over leading axes)."""
    target = nudging_coeffs(rho, grid, e2.N, K0)
    h = e2.g * complex_to_real(target, grid)
    return h, np.sum(h * h, axis=(-2, -1))


def control_shift(theta, theta_tilde, cfg, g_map):
    """h with G h = -K0 P_N (theta~ - theta); returns (h, |h|^2)."""
    grid = common_grid(theta, theta_tilde)
    h, hsq = control_shift_coeffs(theta_tilde.coeffs - theta.coeffs, grid, g_map, cfg.gain)
    return h, float(hsq)


# ---------------------------------------------------------------------------
# constants


def gamma_curve(times, theta_lp, params, N, C_S, C_R):
    """Gamma_hat(t) = -lambda_{N+1} + 2 C1^p (kappa/2)^{1-p} (1/t) int_0^t |theta|_{L^p}^p ds.

    C1 = C_S C_R and p is the critical exponent; the time integral uses the
    trapezoid rule over the recorded samples, and at t = 0 the average is the
    initial value.
    """
    p = critical_exponent(params.alpha)
    times = np.asarray(times, dtype=float)
    vals = np.asarray(theta_lp, dtype=float) ** p
    integral = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(times) * (vals[1:] + vals[:-1]))))
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(times > 0, integral / np.where(times > 0, times, 1.0), vals[0] if len(vals) else 0.0)
    coef = 2.0 * (C_S * C_R) ** p * (params.kappa / 2.0) ** (1.0 - p)
    return -params.lambda_beyond(N) + coef * avg


def gamma_estimate(record, cfg, constants):
    """Gamma_hat series for a SyncRecord; ``constants`` = {"C_S_hat", "C_R_hat"}."""
    return gamma_curve(
        record.column("t"), record.column("theta_lp"), cfg.params, cfg.N,
        constants["C_S_hat"], constants["C_R_hat"],
    )


def delta0_constant(params, energy0, N, constants, sobolev_power=None):
    """delta0 = lambda_{N+1} - 2^{p/2} C_R^p C_S^{2p} kappa^{1-p} [p(p-1)]^{p/2} lambda1^{-p/2} E0^{p/2}.

    ``sobolev_power`` overrides the exponent of C_S (2p by default; p + 1 in the
    variant stated with the polynomial convergence result).  Returns (delta0, positive).
    """
    p = critical_exponent(params.alpha)
    cs, cr = constants["C_S_hat"], constants["C_R_hat"]
    ks = 2.0 * p if sobolev_power is None else sobolev_power
    penalty = (
        2.0 ** (p / 2.0) * cr**p * cs**ks * params.kappa ** (1.0 - p)
        * (p * (p - 1.0)) ** (p / 2.0) * params.lambda1 ** (-p / 2.0) * energy0 ** (p / 2.0)
    )
    d0 = params.lambda_beyond(N) - penalty
    return d0, d0 > 0


# ---------------------------------------------------------------------------
# synchronization runs


class SyncRecord(DiagnosticsRecord):
    """Rows of SYNC_COLUMNS; ``extra`` holds auxiliary series by name."""

    def __init__(self, meta=None):
        super().__init__(list(SYNC_COLUMNS), [], meta or {})
        self.extra = {"theta_tilde_l2": [], "theta_lp_high": [], "theta_tilde_lp_high": []}


def run_synchronization(cfg, pairs=None, constants=None):
    """Co-evolve theta and the nudged theta~ on shared increments.

    Returns one SyncRecord per pair; rows every ``base.diagnostic_stride`` steps.
    ``constants`` ({"C_S_hat", "C_R_hat"}) fills the gamma_hat column (NaN if absent).
    """
    base = cfg.base
    integ = Integrator(base)
    grid, params, dt = integ.grid, integ.params, base.dt
    pairs = tuple(range(cfg.n_pairs)) if pairs is None else tuple(pairs)
    B = len(pairs)
    K0, N = cfg.gain, cfg.N
    noise = integ.additive
    # h = -g K0 P_N rho needs the low-mode inversion; without noise it is undefined
    e2_g = np.zeros((grid.M, grid.M))
    if noise is not None and K0 > 0:
        e2_g = check_hypothesis_E2(noise, N).g
    ball = ball_mask(grid, N)

    th0 = np.stack([initial_condition(base, tr) for tr in pairs])
    tilde_cfg = base.with_(initial_condition=cfg.theta0_tilde)
    tt0 = np.stack([initial_condition(tilde_cfg, tr) for tr in pairs])

    decomposed = base.scheme == "exp-euler-additive"
    v = np.concatenate((th0, tt0))  # first B: theta, last B: theta~
    z = np.zeros_like(th0) if decomposed else None
    p = cfg.p_critical
    p_high = 2.0 * cfg.high_moment_m * (p - 1.0)
    records = [SyncRecord({"pair": tr}) for tr in pairs]
    hsq_cum = np.zeros(B)
    lp_hist = [[] for _ in pairs]
    t_hist = []

    def theta_of(vv):
        return vv if z is None else vv + np.concatenate((z, z))

    def control_sq(rho):
        h = e2_g * complex_to_real(np.where(ball, -K0 * rho, 0.0), grid)
        return np.sum(h * h, axis=(-2, -1))

    def emit(n, vv):
        th = theta_of(vv)
        rho = vv[B:] - vv[:B]
        d = np.sqrt(sobolev_sq(rho, grid, -0.5))
        rl2 = np.sqrt(sobolev_sq(rho, grid, 0.0))
        phys = to_physical(th, grid, grid.quad_points)
        lp = lp_norm_values(phys[:B], p)
        hi = lp_norm_values(phys, p_high)
        t = n * dt
        t_hist.append(t)
        tl2 = np.sqrt(sobolev_sq(th[B:], grid, 0.0))
        for i, rec in enumerate(records):
            lp_hist[i].append(lp[i])
            if constants is not None:
                g = gamma_curve(t_hist, lp_hist[i], params, N, constants["C_S_hat"], constants["C_R_hat"])[-1]
            else:
                g = math.nan
            rec.append([t, d[i], rl2[i], lp[i], hsq_cum[i], g])
            rec.extra["theta_tilde_l2"].append(float(tl2[i]))
            rec.extra["theta_lp_high"].append(float(hi[i]))
            rec.extra["theta_tilde_lp_high"].append(float(hi[B + i]))

    emit(0, v)
    stride = base.diagnostic_stride
    for n in range(base.n_steps):
        th = theta_of(v)
        rho = v[B:] - v[:B]
        hsq_cum += dt * control_sq(rho)
        drift = integ.nonlinear(th)
        drift[B:] += np.where(ball, -K0 * rho, 0.0)
        if noise is not None:
            xi = integ.increments(pairs, n)
        if decomposed:
            v = integ.E * (v + dt * drift)
            if noise is not None:
                z = integ.ou(z, xi)
        else:
            v = integ.E * (v + dt * drift)
            if noise is not None:
                w = noise.apply(xi)
                v = v + np.concatenate((w, w))
        th_new = theta_of(v)
        if not np.all(np.isfinite(th_new)):
            raise BlowUpError(f"non-finite state at t={(n + 1) * dt:.6g}", records[0], (n + 1) * dt)
        if np.any(np.sqrt(sobolev_sq(th_new, grid, 1.0)) > base.h1_ceiling):
            raise BlowUpError(f"H^1 ceiling exceeded at t={(n + 1) * dt:.6g}", records[0], (n + 1) * dt)
        if (n + 1) % stride == 0:
            emit(n + 1, v)
    return records
