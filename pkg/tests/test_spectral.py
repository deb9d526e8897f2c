import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqg.spectral import (
    GridMismatchError,
    GridSpec,
    SpectralField,
    apply_lambda_s,
    ball_mask,
    dealiased_product,
    from_physical,
    inner,
    lp_norm,
    poisson_filter,
    random_field,
    read_snapshot,
    riesz_perp,
    sobolev_norm,
    write_snapshot,
)

from .conftest import rand

seeds = st.integers(0, 2**32 - 1)


def brute_product(a, b, grid):
    """O(M^4) convolution of two coefficient arrays, truncated to the retained set."""
    M = grid.M
    out = np.zeros((M, M), dtype=complex)
    k1, k2 = grid.k1, grid.k2
    idx = np.argwhere(grid.retained)
    for i, j in idx:
        for p, q in idx:
            s1 = int(k1[i, j] + k1[p, q])
            s2 = int(k2[i, j] + k2[p, q])
            if max(abs(s1), abs(s2)) <= grid.kmax and (s1, s2) != (0, 0):
                out[s1 % M, s2 % M] += a[i, j] * b[p, q]
    return out / (2 * math.pi)


def test_grid_validation():
    with pytest.raises(ValueError, match="even integer"):
        GridSpec(15)
    with pytest.raises(ValueError, match="padding_factor"):
        GridSpec(16, Fraction(5, 4))
    with pytest.raises(ValueError, match="quad_points"):
        GridSpec(16, quad_points=10)
    g = GridSpec(16)
    assert g.padded_size == 24 and g.quad_points == 48 and g.kmax == 7


def test_nyquist_and_mean_removed(grid16):
    c = np.ones((16, 16), dtype=complex)
    f = SpectralField(grid16, c)
    assert f.coeffs[0, 0] == 0 and not np.any(f.coeffs[8, :]) and not np.any(f.coeffs[:, 8])
    with pytest.raises(ValueError):
        f.coeffs[1, 1] = 2.0


def test_single_mode_physical_values(grid16):
    f = SpectralField.single_mode(grid16, (2, 1), "sin", 0.5)
    x1, x2 = grid16.physical_grid()
    assert np.allclose(f.to_physical(), 0.5 * np.sin(2 * x1 + x2), atol=1e-14)
    # |0.5 sin|_{L^2}^2 = 0.25 * 2 pi^2
    assert math.isclose(sobolev_norm(f, 0.0) ** 2, 0.25 * 2 * math.pi**2, rel_tol=1e-14)
    with pytest.raises(ValueError):
        SpectralField.single_mode(grid16, (8, 0))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_physical_roundtrip_and_hermitian(seed):
    grid = GridSpec(16)
    f = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    assert f.is_hermitian(1e-15)
    g = SpectralField.from_physical(grid, f.to_physical())
    assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-14
    assert np.max(np.abs(from_physical(f.to_physical(40), grid) - f.coeffs)) < 1e-14


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(-2, 2), st.floats(-2, 2))
def test_lambda_composition(seed, a, b):
    grid = GridSpec(16)
    f = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    lhs = apply_lambda_s(apply_lambda_s(f, a), b).coeffs
    rhs = apply_lambda_s(f, a + b).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([2.0, 3.0, 4.0, 6.0]))
def test_parseval_and_lp_order(seed, p):
    grid = GridSpec(16)
    f = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    assert math.isclose(lp_norm(f, 2.0), sobolev_norm(f, 0.0), rel_tol=1e-12)
    # Holder on a domain of area 4 pi^2: |f|_2 <= (4 pi^2)^{1/2 - 1/p} |f|_p
    assert lp_norm(f, 2.0) <= (4 * math.pi**2) ** (0.5 - 1 / p) * lp_norm(f, p) * (1 + 1e-12)


def test_riesz_examples(grid16):
    # theta = cos(x1): u = R^perp theta = (0, sin x1)... check against the symbol
    th = SpectralField.single_mode(grid16, (1, 0), "cos")
    u1, u2 = riesz_perp(th)
    x1, x2 = grid16.physical_grid()
    assert np.allclose(u1.to_physical(), 0.0, atol=1e-14)
    assert np.allclose(u2.to_physical(), np.sin(x1), atol=1e-14)
    th = SpectralField.single_mode(grid16, (0, 1), "cos")
    u1, u2 = riesz_perp(th)
    assert np.allclose(u1.to_physical(), -np.sin(x2), atol=1e-14)
    assert np.allclose(u2.to_physical(), 0.0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_riesz_isometry_and_divergence(seed):
    grid = GridSpec(16)
    f = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    u1, u2 = riesz_perp(f)
    assert math.isclose(sobolev_norm(u1, 0) ** 2 + sobolev_norm(u2, 0) ** 2, sobolev_norm(f, 0) ** 2, rel_tol=1e-13)
    div = 1j * grid.k1 * u1.coeffs + 1j * grid.k2 * u2.coeffs
    assert np.max(np.abs(div)) < 1e-13


def test_dealiased_product_matches_brute_force():
    grid = GridSpec(8)
    rng = np.random.default_rng(5)
    a, b = rand(grid, rng), rand(grid, rng)
    fast = dealiased_product(SpectralField(grid, a), SpectralField(grid, b)).coeffs
    assert np.max(np.abs(fast - brute_product(a, b, grid))) < 1e-15


def test_product_to_sum(grid16):
    a = SpectralField.single_mode(grid16, (1, 0), "cos")
    b = SpectralField.single_mode(grid16, (0, 2), "cos")
    # cos x1 cos 2x2 = (cos(x1+2x2) + cos(x1-2x2))/2
    expect = SpectralField.single_mode(grid16, (1, 2), "cos", 0.5) + SpectralField.single_mode(grid16, (1, -2), "cos", 0.5)
    assert np.max(np.abs(dealiased_product(a, b).coeffs - expect.coeffs)) < 1e-14


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(-1, 2), st.floats(-1, 2), st.floats(0, 1))
def test_interpolation_constant_one(seed, s0, s1, t):
    grid = GridSpec(16)
    f = SpectralField(grid, rand(grid, np.random.default_rng(seed)))
    s = (1 - t) * s0 + t * s1
    assert sobolev_norm(f, s) <= sobolev_norm(f, s0) ** (1 - t) * sobolev_norm(f, s1) ** t * (1 + 1e-12)


def test_inner_and_grid_mismatch(grid16):
    f = SpectralField.single_mode(grid16, (1, 1), "cos")
    assert math.isclose(inner(f, f), sobolev_norm(f, 0) ** 2)
    g = SpectralField.zeros(GridSpec(32))
    with pytest.raises(GridMismatchError):
        f + g
    with pytest.raises(GridMismatchError):
        inner(f, g)


def test_poisson_filter_and_ball(grid16):
    f = SpectralField.single_mode(grid16, (3, 4), "cos")
    assert np.allclose(poisson_filter(f, 0.2).coeffs, math.exp(-1.0) * f.coeffs)
    m = ball_mask(grid16, 2)
    assert m.sum() == 12  # |k| in {1, sqrt2, 2}: 4 + 4 + 4


def test_lp_norm_errors(grid16):
    with pytest.raises(ValueError):
        lp_norm(SpectralField.zeros(grid16), 0.5)
    assert lp_norm(SpectralField.zeros(grid16), 3.0) == 0.0


def test_snapshot_roundtrip(tmp_path, rng):
    grid = GridSpec(16, Fraction(2))
    f = random_field(grid, rng, amplitude=3.0)
    path = tmp_path / "a.sqgf"
    write_snapshot(path, f)
    g = read_snapshot(path)
    assert g.grid.M == 16 and g.grid.padding_factor == 2
    assert np.array_equal(g.coeffs, f.coeffs)
    raw = path.read_bytes()
    assert raw[:4] == b"SQGF"
    bad = tmp_path / "bad.sqgf"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_snapshot(bad)
