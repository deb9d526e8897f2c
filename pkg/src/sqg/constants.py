"""Empirical inequality constants measured over a corpus of random fields.

The analytic constants of the Sobolev embedding, the Riesz bound and the
product/commutator estimates are not known in closed form.  Here they are
estimated as the largest observed ratio (left side over right side) over a
deterministic corpus of band-limited fields, frozen per grid size in
``data/empirical_constants.json`` and regenerated by
``python -m sqg.constants``.
"""
from __future__ import annotations

import argparse
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .spectral import GridSpec, from_physical, lp_norm_values, random_coeffs, riesz_perp_coeffs, to_physical

__all__ = ["corpus", "measure_constants", "load_constants", "empirical_constants"]

DATA_FILE = "empirical_constants.json"
CORPUS_SEED = 20240611
P_VALUES = (3.0, 4.0, 6.0, 7.0)


def corpus(grid, n_fields=400, seed=CORPUS_SEED, max_band=None):
    """Random fields over a spread of spectral slopes and bands, plus localized bumps."""
    rng = np.random.default_rng(seed)
    kmax = grid.kmax if max_band is None else max_band
    out = []
    slopes = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)
    for i in range(n_fields):
        band = int(rng.integers(1, kmax + 1))
        out.append(random_coeffs(grid, rng, slope=slopes[i % len(slopes)], band=band))
    # localized Gaussian bumps of varying width, band-limited by projection
    x1, x2 = grid.physical_grid(grid.quad_points)
    for w in np.geomspace(0.05, 1.0, 12):
        d1 = np.angle(np.exp(1j * (x1 - np.pi)))
        d2 = np.angle(np.exp(1j * (x2 - np.pi)))
        bump = np.exp(-(d1**2 + d2**2) / (2 * w * w))
        c = from_physical(bump, grid)
        if max_band is not None:
            box = np.maximum(np.abs(grid.k1), np.abs(grid.k2))
            c = np.where(box <= max_band, c, 0.0)
        out.append(c / np.sqrt(np.sum(np.abs(c) ** 2)))
    # projected indicators of a square, a strip and a disc (edge singularities)
    d1 = np.angle(np.exp(1j * (x1 - np.pi)))
    d2 = np.angle(np.exp(1j * (x2 - np.pi)))
    for ind in (
        (np.abs(d1) < 1.0) & (np.abs(d2) < 1.0),
        np.abs(d1) < 0.5,
        d1**2 + d2**2 < 1.0,
        (d1 > 0) & (d2 > 0),
    ):
        c = from_physical(ind.astype(float), grid)
        if max_band is not None:
            box = np.maximum(np.abs(grid.k1), np.abs(grid.k2))
            c = np.where(box <= max_band, c, 0.0)
        out.append(c / np.sqrt(np.sum(np.abs(c) ** 2)))
    return np.stack(out)


def _lp(c, grid, p):
    return lp_norm_values(to_physical(c, grid, grid.quad_points), p)


def _phys_lp(f, p):
    return lp_norm_values(f, p)


def measure_constants(grid, n_fields=400, seed=CORPUS_SEED):
    """Max observed ratios for every recorded inequality."""
    fields = corpus(grid, n_fields, seed)
    out = {"M": grid.M, "n_fields": int(len(fields)), "seed": seed}
    sob, riesz = {}, {}
    for p in P_VALUES:
        # H^{1-2/p} -> L^p and H^{1/p} -> L^{2p/(p-1)}, both with q = 2
        r1 = _lp(fields, grid, p) / np.sqrt(np.sum(grid.multiplier_power(2 * (1 - 2 / p)) * np.abs(fields) ** 2, axis=(-2, -1)))
        p2 = 2 * p / (p - 1)
        r2 = _lp(fields, grid, p2) / np.sqrt(np.sum(grid.multiplier_power(2 / p) * np.abs(fields) ** 2, axis=(-2, -1)))
        sob[f"{p:g}"] = {
            "embedding_low": float(r1.max()),
            "embedding_dual": float(r2.max()),
            "C_S": float(max(r1.max(), r2.max())),
        }
        u1, u2 = riesz_perp_coeffs(fields, grid)
        base = _lp(fields, grid, p)
        ratio = np.maximum(_lp(u1, grid, p), _lp(u2, grid, p)) / base
        riesz[f"{p:g}"] = float(ratio.max())
    out["sobolev"] = sob
    out["riesz"] = riesz

    # product and commutator estimates with s = 1/2, p = 2, all p_i = 4;
    # fields limited to max|k_i| <= kmax/2 so products stay on the retained grid
    half = grid.kmax // 2
    pf = corpus(grid, n_fields // 2, seed + 1, max_band=half)
    rng = np.random.default_rng(seed + 2)
    pg = pf[rng.permutation(len(pf))]
    n = grid.quad_points
    lam_half = grid.multiplier_power(0.5)
    lam_mhalf = grid.multiplier_power(-0.5)
    f_ph = to_physical(pf, grid, n)
    g_ph = to_physical(pg, grid, n)
    fg = from_physical(f_ph * g_ph, grid)
    lhs_prod = _lp(lam_half * fg, grid, 2)
    lf = to_physical(lam_half * pf, grid, n)
    lg = to_physical(lam_half * pg, grid, n)
    rhs_prod = _phys_lp(f_ph, 4) * _phys_lp(lg, 4) + _phys_lp(g_ph, 4) * _phys_lp(lf, 4)
    comm = to_physical(lam_half * fg, grid, n) - f_ph * lg
    grad = np.sqrt(
        to_physical(1j * grid.k1 * pf, grid, n) ** 2 + to_physical(1j * grid.k2 * pf, grid, n) ** 2
    )
    rhs_comm = _phys_lp(grad, 4) * _phys_lp(to_physical(lam_mhalf * pg, grid, n), 4) + _phys_lp(g_ph, 4) * _phys_lp(lf, 4)
    out["product"] = float(np.max(lhs_prod / rhs_prod))
    out["commutator"] = float(np.max(_phys_lp(comm, 2) / rhs_comm))
    return out


def load_constants():
    text = resources.files("sqg").joinpath("data", DATA_FILE).read_text()
    return json.loads(text)


def empirical_constants(M, p):
    """(C_S_hat, C_R_hat) for grid size M and exponent p from the frozen table.

    For p not tabulated the nearest tabulated exponent at or above p is used.
    """
    table = load_constants()
    key = str(int(M))
    if key not in table:
        raise KeyError(f"no frozen constants for M={M}; available {sorted(table)}")
    entry = table[key]
    ps = sorted(float(q) for q in entry["sobolev"])
    above = [q for q in ps if q >= p - 1e-12]
    q = above[0] if above else ps[-1]
    return entry["sobolev"][f"{q:g}"]["C_S"], entry["riesz"][f"{q:g}"]


def main(argv=None):
    ap = argparse.ArgumentParser(description="regenerate the frozen empirical constants")
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--n-fields", type=int, default=400)
    ap.add_argument("--out", type=Path, default=Path(__file__).parent / "data" / DATA_FILE)
    args = ap.parse_args(argv)
    table = {str(m): measure_constants(GridSpec(m), args.n_fields) for m in args.sizes}
    args.out.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    print(json.dumps(table, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
