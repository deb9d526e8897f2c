"""Noise operators, reproducible Wiener increments and the exact OU step.

Real modes: every retained nonzero k carries one real orthonormal basis
function, ``sin(k.x)/(pi sqrt 2)`` when k lies in the upper half-plane
(k1 > 0, or k1 = 0 and k2 > 0) and ``cos(k.x)/(pi sqrt 2)`` otherwise.  A
mode-indexed real vector is stored as an ``(M, M)`` real array whose entry at k
is the coordinate along the basis function attached to k.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import GridSpec, SpectralField, ball_mask, from_physical, to_physical

__all__ = [
    "NoiseSpec",
    "AdditiveSpectralNoise",
    "MultiplicativeDiagNoise",
    "WienerStream",
    "E2Map",
    "DivergentTraceError",
    "DegenerateModeError",
    "build_additive_noise",
    "build_multiplicative_noise",
    "check_hypothesis_E2",
    "apply_multiplicative",
    "wiener_increment",
    "ou_exact_step",
    "real_to_complex",
    "complex_to_real",
    "lattice_tail_bound",
]

SQRT2 = math.sqrt(2.0)


class DivergentTraceError(ValueError):
    pass


class DegenerateModeError(ValueError):
    def __init__(self, k):
        super().__init__(f"sigma vanishes at mode k={k} inside the projection ball")
        self.k = k


# ---------------------------------------------------------------------------
# real <-> complex mode coordinates


def upper_mask(grid):
    k1, k2 = grid.k1, grid.k2
    return grid.retained & ((k1 > 0) | ((k1 == 0) & (k2 > 0)))


def _mirror(a, grid):
    neg = grid.neg_index
    return a[..., neg, :][..., :, neg]


def real_to_complex(xi, grid):
    """Complex coefficients of sum_k xi_k f_k."""
    xn = _mirror(xi, grid)
    up = upper_mask(grid)
    c = np.where(up, (xn - 1j * xi) / SQRT2, (xi + 1j * xn) / SQRT2)
    return np.where(grid.retained, c, 0.0)


def complex_to_real(c, grid):
    """Inverse of ``real_to_complex`` on Hermitian arrays (an isometry)."""
    up = upper_mask(grid)
    xi = np.where(up, -SQRT2 * c.imag, SQRT2 * c.real)
    return np.where(grid.retained, xi, 0.0)


# ---------------------------------------------------------------------------
# Wiener increments


@dataclass(frozen=True)
class WienerStream:
    """Keyed Gaussian source: draws depend only on (root_seed, traj, step).

    Each (traj, step) pair selects a disjoint Philox counter block, so draws do
    not depend on evaluation order, batching or thread count.
    """

    root_seed: int

    def __post_init__(self):
        if not (0 <= int(self.root_seed) < 2**64):
            raise ValueError(f"root_seed must be an unsigned 64-bit integer, got {self.root_seed!r}")

    def generator(self, traj, step, purpose=0):
        key = int(self.root_seed) | (int(traj) << 64)
        bitgen = np.random.Philox(key=key, counter=[0, 0, int(step), int(purpose)])
        return np.random.Generator(bitgen)

    def increment(self, grid, traj, step, dt):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        draws = self.generator(traj, step).standard_normal((grid.M, grid.M))
        return np.where(grid.retained, draws * math.sqrt(dt), 0.0)

    def aux_generator(self, traj, label=1):
        """Generator for non-increment randomness (initial data), disjoint from steps."""
        return self.generator(traj, label, purpose=1)


def wiener_increment(stream, traj, step, dt, grid):
    """N(0, dt) per retained real mode, keyed by (root_seed, traj, step)."""
    return stream.increment(grid, traj, step, dt)


# ---------------------------------------------------------------------------
# additive noise


@dataclass(frozen=True)
class NoiseSpec:
    """Serializable description of the noise.

    kind:
      ``none``            no noise
      ``E3``              sigma_k = (kappa |k|^{2 alpha})^{-(s_reg + alpha)/(2 alpha)} sqrt(q_k), with
                          q_k = q0_scale, times q0_boost on the shell q0_band[0] <= |k| <= q0_band[1]
      ``E1``              sigma_k = amplitude |k|^{-decay}, optionally only for max|k_i| <= band
      ``multiplicative``  G(theta) xi = g(theta) sum_k b_k xi_k f_k with
                          b_k = amplitude |k|^{-decay} and g named by ``g_profile``
    ``sigma_exponent`` is the extra smoothness in the certificate
    Tr(Lambda^{4 - 2 alpha + 2 sigma} G G*); ``None`` picks half the admissible range.
    """

    kind: str = "none"
    s_reg: float = 2.0
    q0_scale: float = 1.0
    amplitude: float = 1.0
    decay: float = 3.0
    band: int | None = None
    sigma_exponent: float | None = None
    g_profile: str = "sin"
    mollify: bool = False
    q0_band: tuple | None = None
    q0_boost: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "E1", "E3", "multiplicative"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "E3":
            if self.s_reg < 1:
                raise ValueError(f"s_reg must be >= 1, got {self.s_reg!r}")
            if self.q0_scale < 0:
                raise ValueError(f"q0_scale must be >= 0, got {self.q0_scale!r}")
            if not self.q0_boost > 0:
                raise ValueError(f"q0_boost must be positive, got {self.q0_boost!r}")
            if self.q0_band is not None:
                lo, hi = self.q0_band
                if not 0 <= lo <= hi:
                    raise ValueError(f"q0_band must satisfy 0 <= lo <= hi, got {self.q0_band!r}")
                object.__setattr__(self, "q0_band", (float(lo), float(hi)))
        if self.kind in ("E1", "multiplicative") and self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude!r}")
        if self.band is not None and self.band < 1:
            raise ValueError(f"band must be >= 1, got {self.band!r}")

    @property
    def additive(self):
        return self.kind in ("none", "E1", "E3")


def lattice_tail_bound(gamma, radius):
    """Upper bound on sum_{k in Z^2, |k| >= radius} |k|^gamma for gamma < -2.

    Each lattice point's unit cell lies outside |x| >= radius - a with
    |k| >= |x| - a, a = sqrt(2)/2, so the sum is dominated by
    2 pi int_{radius-2a}^inf u^gamma (u + a) du.
    """
    if gamma >= -2:
        return math.inf
    a = SQRT2 / 2.0
    r0 = radius - 2.0 * a
    if r0 <= 0:
        raise ValueError(f"radius {radius} too small for the tail bound")
    return 2.0 * math.pi * (r0 ** (gamma + 2) / (-gamma - 2) + a * r0 ** (gamma + 1) / (-gamma - 1))


@dataclass(frozen=True, eq=False)
class AdditiveSpectralNoise:
    """Diagonal noise G e_k = sigma_k e_k with trace certificates.

    ``trace`` and ``energy0`` include the tail bound for modes beyond the
    truncation (``*_tail``); ``energy0`` is Tr(Lambda^{4-2 alpha+2 sigma} G G*).
    """

    grid: GridSpec
    sigma: np.ndarray
    provenance: str
    trace: float
    trace_tail: float
    energy0: float
    energy0_tail: float
    sigma_exponent: float | None
    e1_holds: bool
    smoothing_condition: bool | None = None
    mollify: bool = False

    def apply(self, xi):
        """Complex coefficients of G xi for a mode-indexed real vector xi."""
        return self.sigma * real_to_complex(xi, self.grid)

    @property
    def spatial_variance(self):
        """sum_j |G e_j(x)|^2, constant in x for diagonal noise."""
        return float(np.sum(self.sigma**2)) / (4.0 * math.pi**2)

    @property
    def is_zero(self):
        return not np.any(self.sigma)

    def certificates(self):
        return {
            "provenance": self.provenance,
            "trace": self.trace,
            "trace_tail_bound": self.trace_tail,
            "energy0": self.energy0,
            "energy0_tail_bound": self.energy0_tail,
            "sigma_exponent": self.sigma_exponent,
            "e1_holds": self.e1_holds,
            "smoothing_condition": self.smoothing_condition,
        }

    def dump_csv(self, path):
        g = self.grid
        idx = np.argwhere(g.retained)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kx", "ky", "sigma"])
            for a, b in idx:
                w.writerow([int(g.k1[a, b]), int(g.k2[a, b]), repr(float(self.sigma[a, b]))])


def _certify(grid, sigma, coef_tail, decay, alpha, sigma_exponent, finite_band):
    """Partial sums over the retained modes plus tail bounds.

    Beyond the truncation sigma_k^2 is assumed to be ``coef_tail |k|^{-2 decay}``.
    """
    mask = grid.retained
    kabs = grid.kabs[mask]
    s2 = sigma[mask] ** 2
    radius = grid.M / 2.0
    trace = float(np.sum(s2))
    no_tail = finite_band or coef_tail == 0
    trace_tail = 0.0 if no_tail else coef_tail * lattice_tail_bound(-2.0 * decay, radius)
    if not math.isfinite(trace_tail):
        raise DivergentTraceError(f"Tr(GG*) diverges: per-mode exponent {-2.0 * decay:.4g} >= -2")

    if sigma_exponent is None:
        sigma_exponent = 0.5 if finite_band else 0.5 * (decay + alpha - 3.0)
    gamma = 4.0 - 2.0 * alpha + 2.0 * sigma_exponent - 2.0 * decay
    energy0 = float(np.sum(kabs ** (4.0 - 2.0 * alpha + 2.0 * sigma_exponent) * s2))
    energy0_tail = 0.0
    if not no_tail:
        energy0_tail = coef_tail * lattice_tail_bound(gamma, radius)
        if not math.isfinite(energy0_tail):
            raise DivergentTraceError(
                f"Tr(Lambda^(4-2alpha+2sigma) GG*) diverges for sigma={sigma_exponent:.4g}: "
                f"summand exponent {gamma:.4g} >= -2"
            )
    e1 = sigma_exponent > 0
    return trace + trace_tail, trace_tail, energy0 + energy0_tail, energy0_tail, sigma_exponent, e1


def build_additive_noise(params, spec, grid):
    """Per-mode intensities and trace certificates for an additive noise spec."""
    if isinstance(spec, dict):
        spec = NoiseSpec(**spec)
    if not spec.additive:
        raise ValueError(f"noise kind {spec.kind!r} is not additive")
    sigma = np.zeros((grid.M, grid.M))
    if spec.kind == "none":
        return AdditiveSpectralNoise(grid, sigma, "none", 0.0, 0.0, 0.0, 0.0, None, True, None, spec.mollify)
    mask = grid.retained
    finite_band = False
    if spec.kind == "E3":
        s, a = spec.s_reg, params.alpha
        decay = s + a
        coef = spec.q0_scale * params.kappa ** (-decay / a)
        q = np.full((grid.M, grid.M), spec.q0_scale)
        coef_tail = coef
        if spec.q0_band is not None:
            lo, hi = spec.q0_band
            q = np.where((grid.kabs >= lo) & (grid.kabs <= hi), spec.q0_scale * spec.q0_boost, q)
            if hi >= grid.M / 2.0:
                coef_tail = coef * max(spec.q0_boost, 1.0)
        sigma[mask] = np.sqrt(q[mask] * params.kappa ** (-decay / a)) * grid.kabs[mask] ** (-decay)
        smoothing = s > 3.0 - 2.0 * a
        provenance = f"E3-power-law(s_reg={s}, q0_scale={spec.q0_scale}"
        if spec.q0_band is not None:
            provenance += f", q0_band={list(spec.q0_band)}, q0_boost={spec.q0_boost}"
        provenance += ")"
    else:
        decay = spec.decay
        coef_tail = spec.amplitude**2
        band = spec.band
        if band is not None:
            mask = mask & (np.maximum(np.abs(grid.k1), np.abs(grid.k2)) <= band)
            finite_band = band <= grid.kmax
        sigma[mask] = spec.amplitude * grid.kabs[mask] ** (-decay)
        smoothing = None
        provenance = f"E1-generic(amplitude={spec.amplitude}, decay={decay}, band={band})"
    tr, tr_tail, e0, e0_tail, sig_e, e1 = _certify(
        grid, sigma, coef_tail, decay, params.alpha, spec.sigma_exponent, finite_band
    )
    return AdditiveSpectralNoise(
        grid, sigma, provenance, tr, tr_tail, e0, e0_tail, sig_e, e1, smoothing, spec.mollify
    )


# ---------------------------------------------------------------------------
# low-mode inversion


@dataclass(frozen=True, eq=False)
class E2Map:
    """Diagonal g with G g = P_N: g_k = 1/sigma_k for |k| <= N."""

    N: float
    g: np.ndarray
    norm: float


def check_hypothesis_E2(noise, N):
    grid = noise.grid
    ball = ball_mask(grid, N)
    zero = ball & (noise.sigma == 0)
    if np.any(zero):
        a, b = np.argwhere(zero & upper_mask(grid))[0]
        raise DegenerateModeError((int(grid.k1[a, b]), int(grid.k2[a, b])))
    g = np.zeros_like(noise.sigma)
    g[ball] = 1.0 / noise.sigma[ball]
    norm = float(g[ball].max()) if np.any(ball) else 0.0
    return E2Map(N, g, norm)


# ---------------------------------------------------------------------------
# OU process


class OUStepper:
    """Exact per-mode transition of dz = -kappa Lambda^{2 alpha} z dt + G dW."""

    def __init__(self, noise, params, dt):
        lam = params.eigenvalues(noise.grid)
        self.decay = np.exp(-lam * dt)
        safe = np.where(lam > 0, lam, 1.0)
        ratio = np.where(lam > 0, -np.expm1(-2.0 * lam * dt) / (2.0 * safe * dt), 1.0)
        # xi ~ N(0, dt); rescale to N(0, (1 - e^{-2 lam dt}) / (2 lam))
        self.gain = noise.sigma * np.sqrt(ratio)
        self.grid = noise.grid

    def __call__(self, z, xi):
        return self.decay * z + self.gain * real_to_complex(xi, self.grid)


def ou_exact_step(z, noise, params, dt, xi):
    stepper = OUStepper(noise, params, dt)
    return SpectralField(z.grid, stepper(z.coeffs, xi))


def stationary_variance(noise, params):
    """Per-mode stationary variance sigma_k^2 / (2 lambda_k) of the real coordinates."""
    lam = params.eigenvalues(noise.grid)
    safe = np.where(lam > 0, lam, 1.0)
    return np.where(lam > 0, noise.sigma**2 / (2.0 * safe), 0.0)


# ---------------------------------------------------------------------------
# multiplicative noise

G_PROFILES: dict[str, tuple[Callable, float]] = {
    # name: (g, Lipschitz constant)
    "one": (lambda a: np.ones_like(a), 0.0),
    "linear": (lambda a: a, 1.0),
    "sin": (np.sin, 1.0),
    "sqrt1p": (lambda a: np.sqrt(1.0 + a * a), 1.0),
    "tanh": (np.tanh, 1.0),
}


@dataclass(frozen=True, eq=False)
class MultiplicativeDiagNoise:
    """G(theta) y = g(theta) sum_k b_k <y, f_k> f_k."""

    grid: GridSpec
    b: np.ndarray
    g_profile: str
    mollify: bool = False

    def __post_init__(self):
        if self.g_profile not in G_PROFILES:
            raise ValueError(f"unknown g profile {self.g_profile!r}; options {sorted(G_PROFILES)}")

    @property
    def g(self):
        return G_PROFILES[self.g_profile][0]

    @property
    def lipschitz(self):
        return G_PROFILES[self.g_profile][1]

    @property
    def b_sq_sum(self):
        return float(np.sum(self.b**2))

    def growth_constants(self):
        """(lambda0, rho2) with |G(theta)|_{L_2}^2 <= lambda0 |theta|^2 + rho2.

        Uses sup|f_k|^2 = 1/(2 pi^2) and |g(a)| <= |g(0)| + L|a|.
        """
        g0 = float(abs(self.g(np.zeros(1))[0]))
        lam0 = self.b_sq_sum * self.lipschitz**2 / math.pi**2
        rho2 = 4.0 * self.b_sq_sum * g0**2
        return lam0, rho2

    def hs_norm_sq(self, theta_coeffs):
        """|G(theta)|^2 in Hilbert-Schmidt norm on the truncation, by direct sum."""
        grid = self.grid
        total = 0.0
        for a, b in np.argwhere(grid.retained & (self.b != 0)):
            xi = np.zeros((grid.M, grid.M))
            xi[a, b] = 1.0
            col = apply_multiplicative_coeffs(self, theta_coeffs, xi)
            total += float(np.sum(np.abs(col) ** 2))
        return total


def build_multiplicative_noise(spec, grid):
    if isinstance(spec, dict):
        spec = NoiseSpec(**spec)
    b = np.zeros((grid.M, grid.M))
    mask = grid.retained
    if spec.band is not None:
        mask = mask & (np.maximum(np.abs(grid.k1), np.abs(grid.k2)) <= spec.band)
    b[mask] = spec.amplitude * grid.kabs[mask] ** (-spec.decay)
    return MultiplicativeDiagNoise(grid, b, spec.g_profile, spec.mollify)


def apply_multiplicative_coeffs(noise, theta_coeffs, xi):
    grid = noise.grid
    n = grid.quad_points
    w = to_physical(real_to_complex(noise.b * xi, grid), grid, n)
    gt = noise.g(to_physical(theta_coeffs, grid, n))
    return from_physical(gt * w, grid)


def apply_multiplicative(noise, theta, xi):
    """g(theta) * sum_k b_k xi_k f_k, projected on retained zero-mean modes."""
    return SpectralField(theta.grid, apply_multiplicative_coeffs(noise, theta.coeffs, xi))
