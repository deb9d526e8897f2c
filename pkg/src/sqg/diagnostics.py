"""Estimators and checkers for moment bounds, energy balance, time averages and decay rates."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .spectral import lp_norm_values, to_physical

__all__ = [
    "ClaimReport",
    "EnsembleTooSmallError",
    "NonPositiveSeriesError",
    "MomentBoundSpec",
    "DecayFit",
    "positivity_functional",
    "lp_moment_check",
    "energy_balance_check",
    "time_average",
    "batch_means",
    "fit_decay",
    "compare_decay_models",
    "write_reports",
]


class EnsembleTooSmallError(ValueError):
    pass


class NonPositiveSeriesError(ValueError):
    pass


@dataclass
class ClaimReport:
    claim: str
    observed: float
    bound: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def text(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.claim}: observed={self.observed:.6g} bound={self.bound:.6g} tol={self.tolerance:.3g}"


def _clean(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_reports(reports, json_path=None, text_path=None):
    """Structured JSON plus a human-readable summary; returns the JSON payload."""
    payload = {
        "claims": [_clean(asdict(r)) for r in reports],
        "n_passed": sum(bool(r.passed) for r in reports),
        "n_failed": sum(not r.passed for r in reports),
    }
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(payload, fh, indent=2)
    if text_path is not None:
        with open(text_path, "w") as fh:
            fh.write("\n".join(r.text() for r in reports) + "\n")
    return payload


# ---------------------------------------------------------------------------
# positivity


def positivity_functional(theta, p, params):
    """int |theta|^{p-2} theta (kappa Lambda^{2 alpha} - 2 lambda1 / p) theta by grid quadrature."""
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    grid = theta.grid
    n = grid.quad_points
    c = theta.coeffs
    f = to_physical(c, grid, n)
    lf = to_physical(params.eigenvalues(grid) * c, grid, n)
    w = np.abs(f) ** (p - 2.0) * f
    cell = (2.0 * np.pi / n) ** 2
    return float(cell * np.sum(w * lf - (2.0 * params.lambda1 / p) * w * f))


# ---------------------------------------------------------------------------
# L^p moment bound


@dataclass(frozen=True)
class MomentBoundSpec:
    """Bound t -> |x|_p^p e^{-lambda1 t} + C_S^p [p(p-1)/2]^{p/2} lambda1^{-p/2} E0^{p/2} (1 - e^{-lambda1 t})."""

    p: float
    lambda1: float
    energy0: float
    C_S: float
    x_norm_p: float
    slack_factor: float = 1.0

    def __post_init__(self):
        if not self.p > 2:
            raise ValueError(f"p must exceed 2, got {self.p}")
        if self.slack_factor < 1:
            raise ValueError("slack_factor must be >= 1")

    @property
    def plateau(self):
        p = self.p
        return self.C_S**p * (0.5 * p * (p - 1.0)) ** (p / 2.0) * self.lambda1 ** (-p / 2.0) * self.energy0 ** (p / 2.0)

    def bound_curve(self, t):
        e = np.exp(-self.lambda1 * np.asarray(t, dtype=float))
        return self.x_norm_p**self.p * e + self.plateau * (1.0 - e)


def lp_moment_check(times, moments, spec, min_ensemble=16, z=3.0):
    """Compare the Monte-Carlo mean of |theta(t)|_p^p with slack * bound_curve(t).

    ``moments`` has shape (n_traj, n_times).  With E0 = 0 the dynamics are
    deterministic and a single trajectory is accepted.  A time passes when the
    mean minus z standard errors lies below the bound.
    """
    m = np.atleast_2d(np.asarray(moments, dtype=float))
    n = m.shape[0]
    if spec.energy0 > 0 and n < min_ensemble:
        raise EnsembleTooSmallError(f"ensemble of {n} < {min_ensemble} trajectories")
    mean = m.mean(axis=0)
    se = m.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    bound = spec.slack_factor * spec.bound_curve(times)
    ok = mean - z * se <= bound
    ok_strict = mean <= bound
    worst = int(np.argmax(mean / bound))
    return ClaimReport(
        claim=f"L^{spec.p:g} moment bound (slack {spec.slack_factor:g})",
        observed=float(mean[worst]),
        bound=float(bound[worst]),
        tolerance=float(z * se[worst]),
        passed=bool(np.all(ok)),
        detail={
            "times": np.asarray(times),
            "mean": mean,
            "stderr": se,
            "bound": bound,
            "pass_per_time": ok,
            "mean_below_bound_everywhere": bool(np.all(ok_strict)),
            "max_ratio": float(np.max(mean / bound)),
            "n_traj": n,
        },
    )


# ---------------------------------------------------------------------------
# energy balance


def energy_balance_check(l2_sq, dissipation_integral, theta0_sq, t, trace, kappa, dt, min_ensemble=16):
    """E|theta(t)|^2 + 2 kappa E int_0^t |theta|_{H^alpha}^2 versus |theta0|^2 + t Tr(GG*).

    Passes when |LHS - RHS| / RHS < 3 (stderr / RHS + 2 dt).
    """
    l2_sq = np.asarray(l2_sq, dtype=float)
    n = l2_sq.size
    if trace > 0 and n < min_ensemble:
        raise EnsembleTooSmallError(f"ensemble of {n} < {min_ensemble} trajectories")
    samples = l2_sq + 2.0 * kappa * np.asarray(dissipation_integral, dtype=float)
    lhs = float(samples.mean())
    rhs = float(np.mean(theta0_sq) + t * trace)
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    rel = abs(lhs - rhs) / rhs
    tol = 3.0 * (se / rhs + 2.0 * dt)
    return ClaimReport(
        claim="energy balance",
        observed=lhs,
        bound=rhs,
        tolerance=tol,
        passed=bool(rel < tol),
        detail={"relative_discrepancy": rel, "stderr": se, "n_traj": n, "t": t, "dt": dt},
    )


# ---------------------------------------------------------------------------
# time averages


def batch_means(values, n_batches=20):
    """Mean and batch-means standard error of a (correlated) stationary series."""
    v = np.asarray(values, dtype=float)
    size = len(v) // n_batches
    if size < 1:
        raise ValueError(f"series of length {len(v)} too short for {n_batches} batches")
    b = v[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(b.mean()), float(b.std(ddof=1) / math.sqrt(n_batches))


def time_average(times, values, burn_in, n_batches=20):
    """Running average of ``values`` after ``burn_in`` plus batch-means error.

    Returns (t, running_average, mean, stderr).  Samples are assumed equally
    spaced in time.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = t >= burn_in
    t, v = t[keep], v[keep]
    running = np.cumsum(v) / np.arange(1, len(v) + 1)
    mean, se = batch_means(v, n_batches)
    return t, running, mean, se


# ---------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    model: str
    a: float
    rate: float
    rate_ci: tuple
    log_a_ci: tuple
    rss: float
    n_points: int
    window: tuple

    @property
    def accepted(self):
        return self.rate > 0


def _window(t, d, transient, floor):
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    keep = t >= transient
    if floor is not None:
        keep &= d > floor
    if np.any(d[keep] <= 0):
        raise NonPositiveSeriesError("series must be positive inside the fit window")
    return t[keep], d[keep]


def fit_decay(t, d, model="exponential", transient=0.0, floor=None, level=0.95):
    """Least squares in log coordinates.

    exponential: log d = log a - b t;  polynomial: log d = log a - q log(1 + t).
    ``floor`` drops samples at or below it (e.g. the rounding floor of a
    synchronized pair).  Confidence intervals are Student-t at ``level``.
    """
    tt, dd = _window(t, d, transient, floor)
    if len(tt) < 3:
        raise ValueError(f"need at least 3 points in the fit window, got {len(tt)}")
    if model == "exponential":
        x = tt
    elif model == "polynomial":
        x = np.log1p(tt)
    else:
        raise ValueError(f"unknown model {model!r}")
    y = np.log(dd)
    X = np.column_stack((np.ones_like(x), -x))
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    rss = float(resid @ resid)
    dof = len(x) - 2
    s2 = rss / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    q = stats.t.ppf(0.5 + level / 2.0, dof) if dof > 0 else math.inf
    half = q * np.sqrt(np.diag(cov))
    return DecayFit(
        model=model,
        a=float(np.exp(coef[0])),
        rate=float(coef[1]),
        rate_ci=(float(coef[1] - half[1]), float(coef[1] + half[1])),
        log_a_ci=(float(coef[0] - half[0]), float(coef[0] + half[0])),
        rss=rss,
        n_points=len(x),
        window=(float(tt[0]), float(tt[-1])),
    )


def compare_decay_models(t, d, transient=0.0, floor=None):
    """Fit both models on the same window; score = log(RSS_poly / RSS_exp) (> 0 favors exponential)."""
    fe = fit_decay(t, d, "exponential", transient, floor)
    fp = fit_decay(t, d, "polynomial", transient, floor)
    tiny = 1e-300
    score = math.log((fp.rss + tiny) / (fe.rss + tiny))
    return {"exponential": fe, "polynomial": fp, "score": score, "preferred": "exponential" if score > 0 else "polynomial"}
