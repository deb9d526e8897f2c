"""Configuration parsing, run orchestration and persistence.

A config is one YAML (or JSON) key-value tree::

    kind: simulate            # simulate | couple | ergodic | verify | spectrum
    seed: 7
    physics: {kappa: 1.0, alpha: 0.75}
    grid: {M: 32, padding_factor: 3/2, quad_points: null}
    noise: {kind: E3, s_reg: 2.0, q0_scale: 1.0}
    time: {dt: 0.01, t_end: 1.0, scheme: exp-euler-additive,
           diagnostic_stride: 10, snapshot_stride: 0, increment_substeps: 1}
    initial_condition: {name: random, amplitude: 1.0, band: 4}
    options: {delta_mollify: null, cutoff: null, lp_orders: [4], h1_ceiling: 1.0e6}
    ensemble: {n_traj: 1}
    coupling: {N: 2, K0: null, n_pairs: 1, theta0_tilde: {name: random, label: 1}}
    ergodic: {n_runs: 2, burn_in: null, n_batches: 20}
    verify: {suites: all}

Unknown keys are rejected.  A run manifest written by ``run_experiment`` is
itself a valid config: its ``config`` entry is used.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .constants import empirical_constants
from .coupling import CoupledConfig, critical_exponent, delta0_constant, run_synchronization
from .diagnostics import ClaimReport, batch_means, write_reports
from .integrate import BlowUpError, ConfigError, SimConfig, simulate
from .noise import DegenerateModeError, DivergentTraceError, NoiseSpec, build_additive_noise, check_hypothesis_E2

__all__ = [
    "ExperimentSpec",
    "RunManifest",
    "parse_config",
    "config_from_dict",
    "run_experiment",
    "default_output_root",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "SQG_OUTPUT_ROOT"
KINDS = ("simulate", "couple", "ergodic", "verify", "spectrum")

DEFAULTS = {
    "kind": "simulate",
    "seed": 0,
    "physics": {"kappa": 1.0, "alpha": 0.75},
    "grid": {"M": 32, "padding_factor": "3/2", "quad_points": None},
    "noise": {"kind": "none"},
    "time": {
        "dt": 0.01,
        "t_end": 1.0,
        "scheme": None,
        "diagnostic_stride": 10,
        "snapshot_stride": 0,
        "increment_substeps": 1,
    },
    "initial_condition": {"name": "random", "amplitude": 1.0, "band": 4},
    "options": {"delta_mollify": None, "cutoff": None, "lp_orders": [4.0], "h1_ceiling": 1.0e6},
    "ensemble": {"n_traj": 1},
    "coupling": {"N": 2, "K0": None, "n_pairs": 1, "theta0_tilde": {"name": "random", "amplitude": 1.0, "band": 4, "label": 1}},
    "ergodic": {"n_runs": 2, "burn_in": None, "n_batches": 20},
    "verify": {"suites": "all"},
}

NOISE_KEYS = set(NoiseSpec.__dataclass_fields__)
IC_KEYS = {"name", "amplitude", "band", "slope", "label", "k", "kind", "path"}
CUTOFF_KEYS = {"R", "s_reg", "profile"}
# sections taken as given (validated separately) rather than merged with defaults
LEAF_SECTIONS = ("noise", "initial_condition", "theta0_tilde", "cutoff")


class ParseError(ConfigError):
    pass


def default_output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "sqg-runs"))


# ---------------------------------------------------------------------------
# parsing


def _load_tree(path):
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"{where}: {problem}") from exc


def _merge(defaults, given, where):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key {key!r} (allowed: {sorted(defaults)})")
        if isinstance(defaults[key], dict) and key not in LEAF_SECTIONS:
            out[key] = _merge(defaults[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def _resolve(tree):
    """Merge with defaults and validate the tree; returns the resolved tree."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    if "manifest_version" in tree:
        tree = tree["config"]
    r = _merge(DEFAULTS, tree, "config")
    if r["kind"] not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {r['kind']!r}")
    noise = r["noise"] or {"kind": "none"}
    unknown = set(noise) - NOISE_KEYS
    if unknown:
        raise ConfigError(f"config.noise: unknown keys {sorted(unknown)} (allowed: {sorted(NOISE_KEYS)})")
    for where, ic in (("initial_condition", r["initial_condition"]), ("coupling.theta0_tilde", r["coupling"]["theta0_tilde"])):
        if not isinstance(ic, dict):
            raise ConfigError(f"config.{where}: expected a mapping")
        bad = set(ic) - IC_KEYS
        if bad:
            raise ConfigError(f"config.{where}: unknown keys {sorted(bad)} (allowed: {sorted(IC_KEYS)})")
    cut = r["options"]["cutoff"]
    if cut is not None:
        if not isinstance(cut, dict) or set(cut) - CUTOFF_KEYS:
            raise ConfigError(f"config.options.cutoff: expected keys {sorted(CUTOFF_KEYS)}, got {cut!r}")
    full_noise = {k: getattr(NoiseSpec(), k) for k in sorted(NOISE_KEYS)}
    full_noise.update(noise)
    if isinstance(full_noise.get("q0_band"), tuple):
        full_noise["q0_band"] = list(full_noise["q0_band"])
    r["noise"] = full_noise
    if r["time"]["scheme"] is None:
        kind = full_noise["kind"]
        r["time"]["scheme"] = (
            "deterministic-rk4" if kind == "none" else "euler-maruyama" if kind == "multiplicative" else "exp-euler-additive"
        )
    return r


def sim_config_from_tree(r):
    phys, grid, tm, opt = r["physics"], r["grid"], r["time"], r["options"]
    alpha = phys["alpha"]
    if not isinstance(alpha, (int, float)) or not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0,1), got {alpha!r}")
    kappa = phys["kappa"]
    if not isinstance(kappa, (int, float)) or not kappa > 0:
        raise ConfigError(f"kappa must be positive, got {kappa!r}")
    noise = dict(r["noise"])
    if noise.get("q0_band") is not None:
        noise["q0_band"] = tuple(noise["q0_band"])
    try:
        return SimConfig(
            kappa=float(kappa),
            alpha=float(alpha),
            M=grid["M"],
            padding_factor=str(grid["padding_factor"]),
            quad_points=grid["quad_points"],
            noise=NoiseSpec(**noise),
            dt=float(tm["dt"]),
            t_end=float(tm["t_end"]),
            initial_condition=dict(r["initial_condition"]),
            scheme=tm["scheme"],
            seed=int(r["seed"]),
            snapshot_stride=int(tm["snapshot_stride"]),
            diagnostic_stride=int(tm["diagnostic_stride"]),
            delta_mollify=opt["delta_mollify"],
            cutoff=opt["cutoff"],
            lp_orders=tuple(opt["lp_orders"]),
            h1_ceiling=float(opt["h1_ceiling"]),
            increment_substeps=int(tm["increment_substeps"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(d):
    """Rebuild a SimConfig from ``SimConfig.to_dict`` output."""
    d = dict(d)
    noise = dict(d.pop("noise"))
    if noise.get("q0_band") is not None:
        noise["q0_band"] = tuple(noise["q0_band"])
    d["lp_orders"] = tuple(d["lp_orders"])
    return SimConfig(noise=NoiseSpec(**noise), **d)


@dataclass
class ExperimentSpec:
    kind: str
    sim: SimConfig
    tree: dict
    out_dir: Path | None = None

    @property
    def seed(self):
        return self.sim.seed

    def coupled(self):
        c = self.tree["coupling"]
        return CoupledConfig(
            self.sim, N=c["N"], K0=c["K0"], theta0_tilde=dict(c["theta0_tilde"]), n_pairs=int(c["n_pairs"])
        )

    def with_seed(self, seed):
        tree = copy.deepcopy(self.tree)
        tree["seed"] = int(seed)
        return ExperimentSpec(self.kind, sim_config_from_tree(tree), tree, self.out_dir)


def parse_config(path_or_tree, kind=None):
    """Validated ExperimentSpec with all defaults resolved.

    Raises ParseError (with file:line:column) on malformed files and
    ConfigError (field, constraint, offending value) on invalid content,
    including divergent noise certificates.
    """
    tree = path_or_tree if isinstance(path_or_tree, dict) else _load_tree(path_or_tree)
    r = _resolve(tree)
    if kind is not None:
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
        r["kind"] = kind
    sim = sim_config_from_tree(r)
    if sim.noise.additive and sim.noise.kind != "none":
        try:
            build_additive_noise(sim.params, sim.noise, sim.grid)
        except DivergentTraceError as exc:
            raise ConfigError(f"noise: {exc}") from exc
    spec = ExperimentSpec(r["kind"], sim, r)
    if spec.kind == "couple":
        spec.coupled()
    if int(r["ensemble"]["n_traj"]) < 1:
        raise ConfigError("ensemble.n_traj must be >= 1")
    return spec


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    root_seed: int
    code_version: str = __version__
    certificates: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    steps: int = 0
    files: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "manifest_version": 1,
            "config": self.config,
            "root_seed": self.root_seed,
            "code_version": self.code_version,
            "platform": {"python": platform.python_version(), "numpy": np.__version__},
            "certificates": self.certificates,
            "wall_clock_s": self.wall_clock_s,
            "steps": self.steps,
            "files": self.files,
        }

    def write(self, out_dir):
        out_dir = Path(out_dir)
        self.files = {
            p.name: sha256_file(p)
            for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name != "manifest.json"
        }
        (out_dir / "manifest.json").write_text(json.dumps(_jsonable(self.to_json()), indent=2) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def certificates(spec):
    sim = spec.sim
    out = {}
    if not (sim.noise.additive and sim.noise.kind != "none"):
        return out
    noise = build_additive_noise(sim.params, sim.noise, sim.grid)
    out.update(noise.certificates())
    N = spec.tree["coupling"]["N"]
    try:
        e2 = check_hypothesis_E2(noise, N)
        out["e2"] = {"N": N, "holds": True, "g_norm": e2.norm}
    except DegenerateModeError as exc:
        out["e2"] = {"N": N, "holds": False, "degenerate_mode": list(exc.k)}
    if sim.alpha > 0.5:
        p = critical_exponent(sim.alpha)
        try:
            cs, cr = empirical_constants(sim.M, p)
        except KeyError:
            cs = cr = None
        if cs is not None:
            d0, ok = delta0_constant(sim.params, noise.energy0, N, {"C_S_hat": cs, "C_R_hat": cr})
            out["delta0"] = {"value": d0, "positive": ok, "p": p, "C_S_hat": cs, "C_R_hat": cr, "empirical_constants": True}
    return out


PLOT_SCRIPT = '''"""Render the standard figures from the CSVs in this directory (needs matplotlib)."""
import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = {c: [float(r[i]) for r in rows[1:]] for i, c in enumerate(cols)}
    return data


diag = sorted(glob.glob(os.path.join(here, "diagnostics_traj*.csv")))
if diag:
    fig, ax = plt.subplots()
    for path in diag:
        d = read(path)
        ax.semilogy(d["t"], d["l2"], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("L2 norm")
    ax.set_title("norm decay")
    fig.savefig(os.path.join(here, "norm_decay.png"), dpi=120)

sync = sorted(glob.glob(os.path.join(here, "sync_pair*.csv")))
if sync:
    fig, ax = plt.subplots()
    for path in sync:
        d = read(path)
        ax.semilogy(d["t"], [max(x, 1e-300) for x in d["d_hminushalf"]], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("|Lambda^(-1/2) rho|")
    ax.set_title("synchronization distance")
    fig.savefig(os.path.join(here, "sync_distance.png"), dpi=120)

erg = os.path.join(here, "ergodic_series.csv")
if os.path.exists(erg):
    d = read(erg)
    fig, ax = plt.subplots()
    for c in d:
        if c != "t":
            ax.plot(d["t"], d[c], lw=0.5, label=c)
    ax.set_xlabel("t")
    ax.set_ylabel("|theta|^2")
    ax.legend()
    fig.savefig(os.path.join(here, "ergodic_series.png"), dpi=120)

mom = os.path.join(here, "moment_bound.csv")
if os.path.exists(mom):
    d = read(mom)
    fig, ax = plt.subplots()
    ax.semilogy(d["t"], d["mean"], label="ensemble mean")
    ax.semilogy(d["t"], d["bound"], "--", label="bound")
    ax.legend()
    fig.savefig(os.path.join(here, "moment_bound.png"), dpi=120)
'''


# ---------------------------------------------------------------------------
# orchestration


def _chunks(items, n):
    n = max(1, min(n, len(items)))
    size = math.ceil(len(items) / n)
    return [tuple(items[i : i + size]) for i in range(0, len(items), size)]


def _parallel(fn, items, threads):
    parts = _chunks(list(items), threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))


def _run_simulate(spec, out, threads):
    trajs = list(range(int(spec.tree["ensemble"]["n_traj"])))
    results = _parallel(lambda part: simulate(spec.sim, trajs=part, out_dir=out), trajs, threads)
    return sum(spec.sim.n_steps * len(r.records) for r in results)


def _run_couple(spec, out, threads):
    cfg = spec.coupled()
    p = cfg.p_critical if spec.sim.alpha > 0.5 else None
    consts = None
    if p is not None:
        try:
            cs, cr = empirical_constants(spec.sim.M, p)
            consts = {"C_S_hat": cs, "C_R_hat": cr}
        except KeyError:
            consts = None
    pairs = list(range(cfg.n_pairs))
    results = _parallel(lambda part: (part, run_synchronization(cfg, part, consts)), pairs, threads)
    for part, recs in results:
        for pair, rec in zip(part, recs):
            rec.to_csv(out / f"sync_pair{pair}.csv")
    return spec.sim.n_steps * cfg.n_pairs


def _run_ergodic(spec, out, threads):
    sim = spec.sim.with_(lp_orders=())
    erg = spec.tree["ergodic"]
    n_runs = int(erg["n_runs"])
    burn = erg["burn_in"] if erg["burn_in"] is not None else 20.0 / sim.params.lambda1
    runs = list(range(n_runs))
    results = _parallel(lambda part: (part, simulate(sim, trajs=part)), runs, threads)
    series = {}
    times = None
    for part, res in results:
        for tr, rec in zip(part, res.records):
            times = rec.column("t")
            series[tr] = rec.column("l2") ** 2
    with open(out / "ergodic_series.csv", "w") as fh:
        fh.write(",".join(["t"] + [f"l2sq_run{tr}" for tr in runs]) + "\n")
        for i, t in enumerate(times):
            fh.write(",".join(format(x, ".17g") for x in [t] + [series[tr][i] for tr in runs]) + "\n")
    keep = times >= burn
    stats = {tr: batch_means(series[tr][keep], int(erg["n_batches"])) for tr in runs}
    reports = []
    for a in runs:
        for b in runs:
            if a < b:
                (ma, sa), (mb, sb) = stats[a], stats[b]
                err = math.hypot(sa, sb)
                reports.append(ClaimReport(
                    f"time averages of |theta|^2 agree (runs {a}, {b})",
                    abs(ma - mb), 3.0 * err, 3.0 * err, abs(ma - mb) <= 3.0 * err,
                    {"mean_a": ma, "stderr_a": sa, "mean_b": mb, "stderr_b": sb, "burn_in": burn},
                ))
    write_reports(reports, out / "ergodic_report.json", out / "ergodic_report.txt")
    return sim.n_steps * n_runs, reports


def _run_spectrum(spec, out):
    sim = spec.sim
    if not sim.noise.additive or sim.noise.kind == "none":
        raise ConfigError("spectrum needs an additive noise (E1 or E3)")
    noise = build_additive_noise(sim.params, sim.noise, sim.grid)
    noise.dump_csv(out / "sigma.csv")
    (out / "certificates.json").write_text(json.dumps(_jsonable(certificates(spec)), indent=2) + "\n")
    return 0


def run_experiment(spec, out_dir=None, threads=1):
    """Execute a parsed spec; returns (exit_code, out_dir).

    Exit codes: 0 success, 2 runtime failure (blow-up), 3 failed verification.
    """
    from .verify import run_suites

    out = Path(out_dir) if out_dir is not None else default_output_root() / f"{spec.kind}-seed{spec.seed}"
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    code = 0
    steps = 0
    try:
        if spec.kind == "simulate":
            steps = _run_simulate(spec, out, threads)
        elif spec.kind == "couple":
            steps = _run_couple(spec, out, threads)
        elif spec.kind == "ergodic":
            steps, reports = _run_ergodic(spec, out, threads)
            code = 0 if all(r.passed for r in reports) else 3
        elif spec.kind == "spectrum":
            steps = _run_spectrum(spec, out)
        elif spec.kind == "verify":
            reports = run_suites(spec, out)
            code = 0 if all(r.passed for r in reports) else 3
    except BlowUpError as exc:
        (out / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        code = 2
    if spec.kind != "verify":
        (out / "plot_figures.py").write_text(PLOT_SCRIPT)
    manifest = RunManifest(
        config=_jsonable(spec.tree), root_seed=spec.seed, certificates=_jsonable(certificates(spec)),
        wall_clock_s=time.perf_counter() - t0, steps=steps,
    )
    manifest.write(out)
    return code, out
