"""Time stepping for the SQG dynamics and its variants.

Schemes (the dissipative term is always treated by the exact factor
E = exp(-kappa |k|^{2 alpha} dt)):

``exp-euler-additive``
    theta = v + z; z takes the exact OU transition, v' = E (v + dt N(v + z)).
``euler-maruyama``
    theta' = E (theta + dt N(theta)) + G(theta) dW.
``deterministic-rk4``
    Lawson (integrating factor) RK4 for G = 0.

Ensembles advance as ``(B, M, M)`` stacks; each member's increments are keyed
by its trajectory id so results do not depend on how members are batched.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (
    CutoffSpec,
    HistoryBuffer,
    PhysicalParams,
    bilinear_sym_coeffs,
    mollified_velocity_coeffs,
    nonlinear_coeffs,
)
from .noise import (
    NoiseSpec,
    OUStepper,
    WienerStream,
    apply_multiplicative_coeffs,
    build_additive_noise,
    build_multiplicative_noise,
    real_to_complex,
)
from .spectral import (
    GridSpec,
    SpectralField,
    advection_coeffs,
    lp_norm_values,
    random_coeffs,
    read_snapshot,
    sobolev_sq,
    to_physical,
    write_snapshot,
)

__all__ = [
    "SimConfig",
    "TrajectoryState",
    "DiagnosticsRecord",
    "SimResult",
    "BlowUpError",
    "ConfigError",
    "StabilityWarning",
    "Integrator",
    "step",
    "simulate",
    "run_ensemble",
    "initial_condition",
    "save_checkpoint",
    "load_checkpoint",
    "integrate_tangent",
]

SCHEMES = ("exp-euler-additive", "euler-maruyama", "deterministic-rk4")


class ConfigError(ValueError):
    pass


class BlowUpError(RuntimeError):
    def __init__(self, message, record=None, t=None):
        super().__init__(message)
        self.record = record
        self.t = t


class StabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    kappa: float = 1.0
    alpha: float = 0.75
    M: int = 32
    padding_factor: str = "3/2"
    quad_points: int | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dt: float = 1e-2
    t_end: float = 1.0
    initial_condition: dict = field(default_factory=lambda: {"name": "random"})
    scheme: str = "exp-euler-additive"
    seed: int = 0
    snapshot_stride: int = 0
    diagnostic_stride: int = 10
    delta_mollify: float | None = None
    cutoff: dict | None = None
    lp_orders: tuple = (4.0,)
    h1_ceiling: float = 1e6
    increment_substeps: int = 1

    def __post_init__(self):
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSpec(**self.noise))
        object.__setattr__(self, "lp_orders", tuple(float(p) for p in self.lp_orders))
        try:
            self.params
            self.grid
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigError("dt and t_end must be positive")
        if self.dt > self.t_end:
            raise ConfigError(f"dt={self.dt} exceeds t_end={self.t_end}")
        n = round(self.t_end / self.dt)
        if abs(n * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise ConfigError(f"t_end={self.t_end} is not an integer multiple of dt={self.dt}")
        if int(self.increment_substeps) != self.increment_substeps or self.increment_substeps < 1:
            raise ConfigError(f"increment_substeps must be a positive integer, got {self.increment_substeps!r}")
        if self.diagnostic_stride < 1 or self.snapshot_stride < 0:
            raise ConfigError("diagnostic_stride must be >= 1 and snapshot_stride >= 0")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        kind = self.noise.kind
        if self.scheme == "deterministic-rk4" and kind != "none":
            raise ConfigError("deterministic-rk4 requires noise kind 'none'")
        if self.scheme == "exp-euler-additive" and not self.noise.additive:
            raise ConfigError("exp-euler-additive requires additive noise")
        if self.delta_mollify is not None:
            if not self.delta_mollify > 0:
                raise ConfigError("delta_mollify must be positive")
            if self.scheme == "exp-euler-additive":
                raise ConfigError("delta_mollify is supported by euler-maruyama and deterministic-rk4")
            if self.dt > self.delta_mollify / 8.0 * (1 + 1e-12):
                raise ConfigError(f"dt must be <= delta_mollify/8 = {self.delta_mollify / 8.0}")
        elif self.noise.mollify:
            raise ConfigError("noise.mollify requires delta_mollify")
        if self.cutoff is not None:
            try:
                self.cutoff_spec
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"cutoff: {exc}") from exc
        if any(p < 1 for p in self.lp_orders):
            raise ConfigError("lp_orders must be >= 1")
        if self.initial_condition.get("name") not in IC_NAMES:
            raise ConfigError(
                f"initial_condition.name must be one of {IC_NAMES}, got {self.initial_condition.get('name')!r}"
            )

    @property
    def params(self):
        return PhysicalParams(self.kappa, self.alpha)

    @property
    def grid(self):
        from fractions import Fraction

        return GridSpec(self.M, Fraction(str(self.padding_factor)), self.quad_points)

    @property
    def cutoff_spec(self):
        return None if self.cutoff is None else CutoffSpec(**self.cutoff)

    @property
    def n_steps(self):
        return round(self.t_end / self.dt)

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["lp_orders"] = list(self.lp_orders)
        return d


# ---------------------------------------------------------------------------
# initial conditions

IC_NAMES = ("zero", "single_mode", "random", "snapshot", "two_modes")


def initial_condition(config, traj=0):
    """Coefficient array of the configured initial condition for trajectory ``traj``."""
    grid = config.grid
    ic = dict(config.initial_condition)
    name = ic.pop("name")
    if name == "zero":
        return np.zeros((grid.M, grid.M), dtype=complex)
    if name == "single_mode":
        k = tuple(ic.get("k", (1, 0)))
        f = SpectralField.single_mode(grid, k, ic.get("kind", "cos"), ic.get("amplitude", 1.0))
        return np.array(f.coeffs)
    if name == "two_modes":
        a = ic.get("amplitude", 1.0)
        f = SpectralField.single_mode(grid, (1, 0), "cos", a) + SpectralField.single_mode(grid, (0, 1), "cos", a)
        return np.array(f.coeffs)
    if name == "snapshot":
        f = read_snapshot(ic["path"])
        if f.grid.M != grid.M:
            raise ConfigError(f"snapshot M={f.grid.M} differs from config M={grid.M}")
        return np.array(f.coeffs)
    # random: seeded from the run's stream, label separates independent draws
    stream = WienerStream(config.seed)
    rng = stream.aux_generator(traj, 1 + int(ic.get("label", 0)))
    return ic.get("amplitude", 1.0) * random_coeffs(
        grid, rng, slope=ic.get("slope", 2.0), band=ic.get("band", 4)
    )


# ---------------------------------------------------------------------------
# state and records


@dataclass
class TrajectoryState:
    """Coefficients at time t = step * dt, batched along a leading axis.

    With the decomposed scheme ``v`` and ``z`` are held and ``theta`` is
    their sum; otherwise ``v`` holds theta and ``z`` is None.
    """

    step: int
    t: float
    v: np.ndarray
    z: np.ndarray | None = None
    trajs: tuple = (0,)
    history: HistoryBuffer | None = None
    dissipation_integral: np.ndarray | None = None

    @property
    def theta(self):
        return self.v if self.z is None else self.v + self.z

    def member(self, i=0):
        return self.theta[i]

    def copy(self):
        return TrajectoryState(
            self.step,
            self.t,
            self.v.copy(),
            None if self.z is None else self.z.copy(),
            self.trajs,
            self.history,
            None if self.dissipation_integral is None else self.dissipation_integral.copy(),
        )


def _fmt(x):
    return format(float(x), ".17g")


@dataclass
class DiagnosticsRecord:
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, values):
        self.rows.append([float(v) for v in values])

    def array(self):
        return np.array(self.rows, dtype=float).reshape(len(self.rows), len(self.columns))

    def column(self, name):
        return self.array()[:, self.columns.index(name)]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in self.rows:
                fh.write(",".join(_fmt(x) for x in r) + "\n")

    @classmethod
    def from_csv(cls, path):
        lines = Path(path).read_text().strip().splitlines()
        rec = cls(lines[0].split(","))
        for ln in lines[1:]:
            rec.rows.append([float(x) for x in ln.split(",")])
        return rec


def diagnostic_columns(config):
    return ["t", "l2", "h_alpha", "h1"] + [f"lp_{p:g}" for p in config.lp_orders] + ["tail_fraction", "dissipation_integral"]


def tail_fraction(c, grid):
    """Share of L^2 energy in modes with max|k_i| > 2 kmax / 3 (resolution monitor)."""
    box = np.maximum(np.abs(grid.k1), np.abs(grid.k2))
    e = np.abs(c) ** 2
    tot = np.sum(e, axis=(-2, -1))
    hi = np.sum(np.where(box > 2.0 * grid.kmax / 3.0, e, 0.0), axis=(-2, -1))
    return np.where(tot > 0, hi / np.where(tot > 0, tot, 1.0), 0.0)


def diagnostic_values(theta, grid, params, lp_orders, t, diss):
    """One row per batch member."""
    l2 = np.sqrt(sobolev_sq(theta, grid, 0.0))
    ha = np.sqrt(sobolev_sq(theta, grid, params.alpha))
    h1 = np.sqrt(sobolev_sq(theta, grid, 1.0))
    cols = [np.full(l2.shape, t), l2, ha, h1]
    if lp_orders:
        phys = to_physical(theta, grid, grid.quad_points)
        for p in lp_orders:
            cols.append(lp_norm_values(phys, p))
    cols.append(tail_fraction(theta, grid))
    cols.append(diss)
    return np.stack(cols, axis=-1)


@dataclass
class SimResult:
    records: list
    final: TrajectoryState
    snapshots: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    @property
    def record(self):
        return self.records[0]


# ---------------------------------------------------------------------------
# integrator


class Integrator:
    """Precomputed operators for one configuration; ``advance`` performs a step."""

    def __init__(self, config):
        self.config = config
        self.grid = grid = config.grid
        self.params = params = config.params
        self.dt = dt = config.dt
        lam = params.eigenvalues(grid)
        self.lam = lam
        self.E = np.exp(-lam * dt)
        self.E_half = np.exp(-0.5 * lam * dt)
        self.stream = WienerStream(config.seed)
        self.cut = config.cutoff_spec
        self.delta = config.delta_mollify
        spec = config.noise
        self.additive = None
        self.multiplicative = None
        if spec.kind in ("E1", "E3"):
            self.additive = build_additive_noise(params, spec, grid)
        elif spec.kind == "multiplicative":
            self.multiplicative = build_multiplicative_noise(spec, grid)
        self.ou = OUStepper(self.additive, params, dt) if self.additive is not None else None
        self.noise_filter = np.exp(-self.delta * grid.kabs) if spec.mollify else None
        self._warned = False

    # -- state construction
    def initial_state(self, trajs=(0,), theta0=None):
        trajs = tuple(int(t) for t in trajs)
        if theta0 is None:
            theta0 = np.stack([initial_condition(self.config, t) for t in trajs])
        else:
            theta0 = np.broadcast_to(theta0, (len(trajs), self.grid.M, self.grid.M)).astype(complex)
        theta0 = np.array(theta0, dtype=complex)
        history = None
        if self.delta is not None:
            theta0 = np.exp(-self.delta * self.grid.kabs) * theta0
            history = HistoryBuffer(self.delta, self.grid)
            history.push(0.0, theta0)
        z = np.zeros_like(theta0) if self.config.scheme == "exp-euler-additive" else None
        return TrajectoryState(0, 0.0, theta0, z, trajs, history, np.zeros(len(trajs)))

    # -- drift pieces
    def nonlinear(self, c, t=None, history=None):
        if self.delta is not None:
            u1, u2 = mollified_velocity_coeffs(history, t)
            return advection_coeffs(u1, u2, c, self.grid)
        n = nonlinear_coeffs(c, self.grid)
        if self.cut is not None:
            level = sobolev_sq(c, self.grid, self.cut.s_reg)
            n = np.asarray(self.cut.chi(level))[..., None, None] * n
        return n

    def increments(self, trajs, step):
        """Per-member increments; with ``increment_substeps = s`` each is the sum of
        s draws keyed on the s-times finer step grid, so runs at dt and dt/s see
        the same Brownian path."""
        s = self.config.increment_substeps
        if s == 1:
            return np.stack([self.stream.increment(self.grid, tr, step, self.dt) for tr in trajs])
        h = self.dt / s
        return np.stack([
            sum(self.stream.increment(self.grid, tr, step * s + j, h) for j in range(s)) for tr in trajs
        ])

    def _noise_term(self, theta, xi):
        if self.additive is not None:
            w = self.additive.apply(xi)
        elif self.multiplicative is not None:
            w = apply_multiplicative_coeffs(self.multiplicative, theta, xi)
        else:
            return 0.0
        if self.noise_filter is not None:
            w = self.noise_filter * w
        return w

    def advance(self, state):
        cfg = self.config
        dt = self.dt
        n = state.step
        t = n * dt
        hist = state.history
        if cfg.scheme == "exp-euler-additive":
            theta = state.v + state.z
            xi = self.increments(state.trajs, n) if self.ou is not None else None
            v = self.E * (state.v + dt * self.nonlinear(theta, t, hist))
            z = self.ou(state.z, xi) if xi is not None else state.z
        elif cfg.scheme == "euler-maruyama":
            theta = state.v
            v = self.E * (theta + dt * self.nonlinear(theta, t, hist))
            if self.additive is not None or self.multiplicative is not None:
                xi = self.increments(state.trajs, n)
                v = v + self._noise_term(theta, xi)
            z = None
        else:
            theta = state.v
            v = self._rk4(theta, t, hist)
            z = None
        new_theta = v if z is None else v + z
        # trapezoidal accumulation of int |theta|_{H^alpha}^2 dt
        ha_old = sobolev_sq(theta, self.grid, self.params.alpha)
        ha_new = sobolev_sq(new_theta, self.grid, self.params.alpha)
        diss = state.dissipation_integral + 0.5 * dt * (ha_old + ha_new)
        if state.history is not None:
            state.history.push((n + 1) * dt, new_theta)
        return TrajectoryState(n + 1, (n + 1) * dt, v, z, state.trajs, state.history, diss)

    def _rk4(self, c, t, hist):
        h = self.dt
        E, Eh = self.E, self.E_half
        k1 = self.nonlinear(c, t, hist)
        k2 = self.nonlinear(Eh * (c + 0.5 * h * k1), t + 0.5 * h, hist)
        k3 = self.nonlinear(Eh * c + 0.5 * h * k2, t + 0.5 * h, hist)
        k4 = self.nonlinear(E * c + h * Eh * k3, t + h, hist)
        return E * c + (h / 6.0) * (E * k1 + 2.0 * Eh * (k2 + k3) + k4)

    # -- guards
    def check(self, state, record=None):
        th = state.theta
        if not np.all(np.isfinite(th)):
            raise BlowUpError(f"non-finite coefficients at t={state.t:.6g}", record, state.t)
        h1 = np.sqrt(sobolev_sq(th, self.grid, 1.0))
        if np.any(h1 > self.config.h1_ceiling):
            raise BlowUpError(
                f"H^1 norm {float(np.max(h1)):.3g} exceeds ceiling {self.config.h1_ceiling:.3g} at t={state.t:.6g}",
                record,
                state.t,
            )

    def stability_advisory(self, state):
        """Warn once when dt > 0.5 / (kmax * max|u|_inf)."""
        if self._warned:
            return
        from .spectral import riesz_perp_coeffs

        u1, u2 = riesz_perp_coeffs(state.theta, self.grid)
        umax = float(np.max(np.abs(to_physical(np.stack((u1, u2)), self.grid))))
        if umax > 0 and self.dt > 0.5 / (self.grid.kmax * umax):
            self._warned = True
            warnings.warn(
                f"dt={self.dt:.3g} exceeds advective advisory {0.5 / (self.grid.kmax * umax):.3g}",
                StabilityWarning,
                stacklevel=3,
            )

    def diagnostics(self, state):
        return diagnostic_values(
            state.theta, self.grid, self.params, self.config.lp_orders, state.t, state.dissipation_integral
        )


def step(state, config, stream=None):
    """Advance ``state`` by one dt.  ``stream`` must match ``config.seed`` if given."""
    if stream is not None and int(stream.root_seed) != int(config.seed):
        raise ValueError("stream root_seed differs from config.seed")
    integ = Integrator(config)
    new = integ.advance(state)
    integ.check(new)
    return new


# ---------------------------------------------------------------------------
# drivers


def simulate(config, trajs=(0,), out_dir=None, initial_state=None, theta0=None, series=None):
    """Run to ``t_end``; one DiagnosticsRecord per trajectory.

    ``series`` optionally names per-step observables to keep for every step as
    ``{name: fn(theta_batch) -> (B,) array}``; used by the ensemble checks.
    """
    integ = Integrator(config)
    state = initial_state if initial_state is not None else integ.initial_state(trajs, theta0)
    trajs = state.trajs
    cols = diagnostic_columns(config)
    records = [DiagnosticsRecord(cols, meta={"traj": tr}) for tr in trajs]
    snapshots = []
    kept = {k: [] for k in (series or {})}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def emit(s):
        if s.step % config.diagnostic_stride == 0:
            rows = integ.diagnostics(s)
            for rec, row in zip(records, rows):
                rec.append(row)
        if config.snapshot_stride and s.step % config.snapshot_stride == 0:
            snapshots.append((s.t, s.theta.copy()))
            if out is not None:
                for i, tr in enumerate(trajs):
                    f = SpectralField(config.grid, s.theta[i])
                    write_snapshot(out / f"snap_traj{tr}_step{s.step:08d}.sqgf", f)
        for k, fn in (series or {}).items():
            kept[k].append(fn(s.theta))

    integ.check(state)
    emit(state)
    integ.stability_advisory(state)
    while state.step < config.n_steps:
        state = integ.advance(state)
        try:
            integ.check(state, records[0])
        except BlowUpError:
            if out is not None:
                for rec, tr in zip(records, trajs):
                    rec.to_csv(out / f"diagnostics_traj{tr}.csv")
            raise
        if state.step % config.diagnostic_stride == 0:
            integ.stability_advisory(state)
        emit(state)
    if out is not None:
        for rec, tr in zip(records, trajs):
            rec.to_csv(out / f"diagnostics_traj{tr}.csv")
    res = SimResult(records, state, snapshots)
    res.series = {k: np.array(v) for k, v in kept.items()}
    return res


def run_ensemble(config, n_traj, batch=None, first_traj=0, **kw):
    """Trajectories first_traj .. first_traj+n_traj-1, optionally in batches."""
    batch = batch or n_traj
    results = []
    for lo in range(first_traj, first_traj + n_traj, batch):
        trajs = tuple(range(lo, min(lo + batch, first_traj + n_traj)))
        results.append(simulate(config, trajs=trajs, **kw))
    if len(results) == 1:
        return results[0]
    merged = SimResult(
        [r for res in results for r in res.records],
        results[-1].final,
        [],
        {k: np.concatenate([res.series[k] for res in results], axis=1) for k in results[0].series},
    )
    return merged


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state, config):
    """Directory with the state fields as snapshots plus a JSON cursor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    grid = config.grid
    files = {}
    for i, tr in enumerate(state.trajs):
        write_snapshot(path / f"v_traj{tr}.sqgf", SpectralField(grid, state.v[i]))
        files.setdefault("v", []).append(f"v_traj{tr}.sqgf")
        if state.z is not None:
            write_snapshot(path / f"z_traj{tr}.sqgf", SpectralField(grid, state.z[i]))
            files.setdefault("z", []).append(f"z_traj{tr}.sqgf")
    hist = None
    if state.history is not None:
        hist = {"times": list(state.history.times), "files": []}
        for j, st in enumerate(state.history.states):
            np.save(path / f"history_{j:05d}.npy", st)
            hist["files"].append(f"history_{j:05d}.npy")
    meta = {
        "config": config.to_dict(),
        "step": state.step,
        "t": state.t,
        "trajs": list(state.trajs),
        "files": files,
        "dissipation_integral": [float(x).hex() for x in state.dissipation_integral],
        "history": hist,
    }
    (path / "checkpoint.json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(path):
    from .io import config_from_dict

    path = Path(path)
    meta = json.loads((path / "checkpoint.json").read_text())
    config = config_from_dict(meta["config"])
    v = np.stack([read_snapshot(path / f).coeffs for f in meta["files"]["v"]]).astype(complex)
    z = None
    if "z" in meta["files"]:
        z = np.stack([read_snapshot(path / f).coeffs for f in meta["files"]["z"]]).astype(complex)
    history = None
    if meta["history"] is not None:
        history = HistoryBuffer(config.delta_mollify, config.grid)
        history.times = list(meta["history"]["times"])
        history.states = [np.load(path / f) for f in meta["history"]["files"]]
    diss = np.array([float.fromhex(x) for x in meta["dissipation_integral"]])
    state = TrajectoryState(meta["step"], meta["t"], v, z, tuple(meta["trajs"]), history, diss)
    return config, state


# ---------------------------------------------------------------------------
# tangent flow


def integrate_tangent(theta0, h0, cut, params, dt, t_end):
    """Joint Lawson-RK4 integration of the cutoff dynamics and its linearization.

    Returns (theta(t_end), Dtheta(t_end)); Dtheta is the exact derivative of the
    discrete flow map in the direction h0.
    """
    from .dynamics import tangent_nonlinear_coeffs

    grid = theta0.grid
    lam = params.eigenvalues(grid)
    E, Eh = np.exp(-lam * dt), np.exp(-0.5 * lam * dt)

    def f(c, h):
        level = sobolev_sq(c, grid, cut.s_reg)
        n = float(cut.chi(level)) * nonlinear_coeffs(c, grid)
        dn = tangent_nonlinear_coeffs(c, h, grid, cut)
        return n, dn

    c = np.array(theta0.coeffs)
    h = np.array(h0.coeffs)
    for _ in range(round(t_end / dt)):
        k1, l1 = f(c, h)
        k2, l2 = f(Eh * (c + 0.5 * dt * k1), Eh * (h + 0.5 * dt * l1))
        k3, l3 = f(Eh * c + 0.5 * dt * k2, Eh * h + 0.5 * dt * l2)
        k4, l4 = f(E * c + dt * Eh * k3, E * h + dt * Eh * l3)
        c = E * c + (dt / 6.0) * (E * k1 + 2.0 * Eh * (k2 + k3) + k4)
        h = E * h + (dt / 6.0) * (E * l1 + 2.0 * Eh * (l2 + l3) + l4)
    return SpectralField(grid, c), SpectralField(grid, h)
