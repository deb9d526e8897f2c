"""Right-hand sides of the SQG dynamics and its variants.

All ``*_coeffs`` kernels act on coefficient arrays with arbitrary leading batch
axes; the ``SpectralField`` wrappers are thin conveniences over them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    GridSpec,
    SpectralField,
    advection_coeffs,
    from_physical,
    riesz_perp_coeffs,
    sobolev_sq,
    to_physical,
    common_grid,
)

__all__ = [
    "PhysicalParams",
    "HistoryBuffer",
    "InsufficientHistoryError",
    "CutoffSpec",
    "nonlinear_term",
    "rhs_sqg",
    "rhs_v_equation",
    "mollified_velocity",
    "rhs_approx",
    "rhs_cutoff",
    "tangent_rhs",
]


@dataclass(frozen=True)
class PhysicalParams:
    kappa: float
    alpha: float

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive, got {self.kappa!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha!r}")

    @property
    def lambda1(self):
        """Smallest eigenvalue of kappa * Lambda^{2 alpha}; min |k|^2 = 1 on the torus."""
        return self.kappa

    def eigenvalues(self, grid):
        """kappa |k|^{2 alpha} on the grid (0 on non-retained entries)."""
        return self.kappa * grid.multiplier_power(2.0 * self.alpha)

    def lambda_beyond(self, n):
        """kappa * (min |k|^2 over |k| > n)^alpha, from the integer lattice."""
        m = int(np.floor(n)) + 2
        k = np.arange(-m, m + 1)
        ksq = (k[:, None] ** 2 + k[None, :] ** 2).ravel()
        return self.kappa * float(ksq[ksq > n * n + 1e-9].min()) ** self.alpha


# ---------------------------------------------------------------------------
# array kernels


def nonlinear_coeffs(c, grid):
    """-div(u c) with u = R^perp c."""
    u1, u2 = riesz_perp_coeffs(c, grid)
    return advection_coeffs(u1, u2, c, grid)


def bilinear_sym_coeffs(a, b, grid):
    """B(a, b) + B(b, a) where B(a, b) = -div(u[a] b), in one transform pass."""
    ua1, ua2 = riesz_perp_coeffs(a, grid)
    ub1, ub2 = riesz_perp_coeffs(b, grid)
    phys = to_physical(np.stack((a, b, ua1, ua2, ub1, ub2)), grid)
    pa, pb, pua1, pua2, pub1, pub2 = phys
    flux = np.stack((pua1 * pb + pub1 * pa, pua2 * pb + pub2 * pa))
    fh = from_physical(flux, grid)
    return -1j * (grid.k1 * fh[0] + grid.k2 * fh[1])


def rhs_sqg_coeffs(c, grid, params):
    return -params.eigenvalues(grid) * c + nonlinear_coeffs(c, grid)


def v_advection_coeffs(v, z, grid):
    """-(u_v + u_z).grad(v + z), the advective part of the v-equation."""
    return nonlinear_coeffs(v + z, grid)


# ---------------------------------------------------------------------------
# field-level API


def nonlinear_term(theta):
    """-u.grad(theta) evaluated as -div(u theta), alias-free."""
    return SpectralField(theta.grid, nonlinear_coeffs(theta.coeffs, theta.grid))


def rhs_sqg(theta, params):
    return SpectralField(theta.grid, rhs_sqg_coeffs(theta.coeffs, theta.grid, params))


def rhs_v_equation(v, z, params):
    """Drift of the pathwise equation for v = theta - z."""
    grid = common_grid(v, z)
    out = -params.eigenvalues(grid) * v.coeffs + v_advection_coeffs(v.coeffs, z.coeffs, grid)
    return SpectralField(grid, out)


# ---------------------------------------------------------------------------
# delayed, mollified velocity


class InsufficientHistoryError(RuntimeError):
    pass


def bump_profile(tau):
    """Unnormalized smooth bump supported on (1, 2)."""
    tau = np.asarray(tau, dtype=float)
    x = 2.0 * tau - 3.0
    out = np.zeros_like(tau)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def profile_quadrature(n_nodes=16):
    """Nodes in (1, 2) and weights summing to one for integrals against the bump."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    tau = 1.5 + 0.5 * x
    weights = 0.5 * w * bump_profile(tau)
    return tau, weights / weights.sum()


@dataclass
class HistoryBuffer:
    """Timestamped snapshots of coefficient arrays covering [t - 2 delta, t].

    Values before t = 0 are zero; in between snapshots the state is linearly
    interpolated.  The integrator is the single writer.
    """

    delta: float
    grid: GridSpec
    n_nodes: int = 16
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta!r}")
        self.tau, self.weights = profile_quadrature(self.n_nodes)

    @property
    def max_spacing(self):
        return self.delta / 8.0

    def push(self, t, coeffs):
        if self.times:
            if t <= self.times[-1]:
                raise ValueError("history snapshots must be pushed in increasing time")
            if t - self.times[-1] > self.max_spacing * (1 + 1e-12):
                raise ValueError(
                    f"snapshot spacing {t - self.times[-1]:.3g} exceeds delta/8 = {self.max_spacing:.3g}"
                )
        self.times.append(float(t))
        self.states.append(np.array(coeffs, dtype=complex, copy=True))
        # keep one snapshot at or before t - 2 delta for interpolation
        horizon = t - 2.0 * self.delta
        drop = 0
        while drop + 1 < len(self.times) and self.times[drop + 1] <= horizon:
            drop += 1
        if drop:
            del self.times[:drop]
            del self.states[:drop]

    def value_at(self, s):
        if s < 0:
            return np.zeros(self.states[0].shape if self.states else (self.grid.M,) * 2, dtype=complex)
        if not self.times or s < self.times[0] - 1e-12 or s > self.times[-1] + 1e-12:
            span = (self.times[0], self.times[-1]) if self.times else None
            raise InsufficientHistoryError(f"need history at t={s:.6g}, buffer covers {span}")
        times = self.times
        j = int(np.searchsorted(times, s, side="right")) - 1
        j = min(max(j, 0), len(times) - 1)
        if j == len(times) - 1 or abs(s - times[j]) <= 1e-14:
            return self.states[j]
        w = (s - times[j]) / (times[j + 1] - times[j])
        return (1.0 - w) * self.states[j] + w * self.states[j + 1]

    def required_window(self, t):
        return (t - 2.0 * self.delta, t - self.delta)

    def averaged_state(self, t):
        """sum_j w_j theta(t - delta tau_j)."""
        acc = 0.0
        for tau, w in zip(self.tau, self.weights):
            acc = acc + w * self.value_at(t - self.delta * tau)
        return acc


def mollified_velocity_coeffs(history, t):
    g = history.grid
    avg = history.averaged_state(t)
    if np.isscalar(avg):
        avg = np.zeros((g.M, g.M), dtype=complex)
    avg = np.exp(-history.delta * g.kabs) * avg
    return riesz_perp_coeffs(avg, g)


def mollified_velocity(history, t):
    """U_delta[theta](t): Poisson-filtered, delayed and profile-averaged R^perp theta."""
    u1, u2 = mollified_velocity_coeffs(history, t)
    return SpectralField(history.grid, u1), SpectralField(history.grid, u2)


def rhs_approx(theta_n, history, t, params):
    grid = theta_n.grid
    u1, u2 = mollified_velocity_coeffs(history, t)
    out = -params.eigenvalues(grid) * theta_n.coeffs + advection_coeffs(u1, u2, theta_n.coeffs, grid)
    return SpectralField(grid, out)


# ---------------------------------------------------------------------------
# cutoff dynamics and tangent flow


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff chi_R applied to |theta|^2_{H^s_reg}.

    ``profile='linear'`` is the ramp 1 on [0, R], 0 beyond R + 1, slope -1 in
    between: the only profile meeting both the support and the slope bound.
    ``profile='quintic'`` is a C^2 smoothstep with slope bound 1, which needs a
    transition width of 15/8.
    """

    R: float
    s_reg: float
    profile: str = "linear"

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R!r}")
        if not self.s_reg > 1:
            raise ValueError(f"s_reg must exceed 1, got {self.s_reg!r}")
        if self.profile not in ("linear", "quintic"):
            raise ValueError(f"unknown cutoff profile {self.profile!r}")

    @property
    def width(self):
        return 1.0 if self.profile == "linear" else 15.0 / 8.0

    def chi(self, a):
        x = np.clip((np.asarray(a, dtype=float) - self.R) / self.width, 0.0, 1.0)
        if self.profile == "linear":
            return 1.0 - x
        return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)

    def dchi(self, a):
        a = np.asarray(a, dtype=float)
        x = (a - self.R) / self.width
        inside = (x > 0.0) & (x < 1.0)
        if self.profile == "linear":
            return np.where(inside, -1.0, 0.0)
        return np.where(inside, -30.0 * x**2 * (1.0 - x) ** 2 / self.width, 0.0)


def _bcast(x):
    return np.asarray(x)[..., None, None]


def rhs_cutoff_coeffs(c, grid, cut, params):
    level = sobolev_sq(c, grid, cut.s_reg)
    return -params.eigenvalues(grid) * c + _bcast(cut.chi(level)) * nonlinear_coeffs(c, grid)


def tangent_nonlinear_coeffs(c, h, grid, cut):
    """Derivative of chi_R(|c|^2_{H^s}) N(c) in the direction h."""
    level = sobolev_sq(c, grid, cut.s_reg)
    chi = cut.chi(level)
    dchi = cut.dchi(level)
    out = _bcast(chi) * bilinear_sym_coeffs(c, h, grid)
    if np.any(dchi != 0.0):
        w = grid.multiplier_power(2.0 * cut.s_reg)
        hs_inner = np.real(np.sum(w * np.conj(c) * h, axis=(-2, -1)))
        out = out + _bcast(2.0 * dchi * hs_inner) * nonlinear_coeffs(c, grid)
    return out


def tangent_coeffs(c, h, grid, cut, params):
    return -params.eigenvalues(grid) * h + tangent_nonlinear_coeffs(c, h, grid, cut)


def rhs_cutoff(theta, cut, params):
    return SpectralField(theta.grid, rhs_cutoff_coeffs(theta.coeffs, theta.grid, cut, params))


def tangent_rhs(theta, dtheta, cut, params):
    """Linearization of ``rhs_cutoff`` at ``theta`` applied to ``dtheta``."""
    grid = common_grid(theta, dtheta)
    return SpectralField(grid, tangent_coeffs(theta.coeffs, dtheta.coeffs, grid, cut, params))
