"""Fourier representation of zero-mean real fields on the torus [0, 2pi)^2.

Coefficients are stored as a full ``(M, M)`` complex array in numpy FFT order,
``coeffs[a, b]`` multiplying the orthonormal mode ``exp(i k.x) / (2 pi)`` with
``k = (fftfreq(M)[a] * M, fftfreq(M)[b] * M)``.  With this normalization
Parseval holds with constant one: ``|f|_{L^2}^2 = sum |c_k|^2``.

Retained wavenumbers satisfy ``|k_i| <= M/2 - 1``; the Nyquist row and column
and the ``k = 0`` coefficient are identically zero.

Array-level kernels (``to_physical``, ``from_physical``, ``product`` ...) act
on the trailing two axes so that ensembles can be processed as ``(B, M, M)``
stacks; batched transforms are bitwise identical to per-member transforms.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi

__all__ = [
    "GridSpec",
    "SpectralField",
    "GridMismatchError",
    "apply_lambda_s",
    "riesz_perp",
    "sobolev_norm",
    "lp_norm",
    "dealiased_product",
    "inner",
    "poisson_filter",
    "project_ball",
    "random_field",
    "write_snapshot",
    "read_snapshot",
]


class GridMismatchError(ValueError):
    pass


@lru_cache(maxsize=None)
def _wavenumbers(m):
    freq = np.fft.fftfreq(m) * m
    freq[m // 2] = 0.0  # Nyquist is never retained
    k1 = np.ascontiguousarray(np.broadcast_to(freq[:, None], (m, m)))
    k2 = np.ascontiguousarray(np.broadcast_to(freq[None, :], (m, m)))
    ksq = k1**2 + k2**2
    kabs = np.sqrt(ksq)
    mask = np.ones((m, m), dtype=bool)
    mask[m // 2, :] = False
    mask[:, m // 2] = False
    mask[0, 0] = False
    inv_kabs = np.zeros_like(kabs)
    inv_kabs[mask] = 1.0 / kabs[mask]
    neg = (-np.arange(m)) % m
    for a in (k1, k2, ksq, kabs, mask, inv_kabs):
        a.setflags(write=False)
    return k1, k2, ksq, kabs, mask, inv_kabs, neg


@dataclass(frozen=True)
class GridSpec:
    """Resolution and transform sizes.

    ``modes_per_dim`` is the FFT size M of the coefficient array.  Quadratic
    products are evaluated on a ``padded_size`` grid (at least 3M/2 points, so
    products of two retained fields are alias-free) and L^p norms on a
    ``quad_points`` grid.
    """

    modes_per_dim: int
    padding_factor: Fraction = Fraction(3, 2)
    quad_points: int | None = None

    def __post_init__(self):
        m = self.modes_per_dim
        if int(m) != m or m < 4 or m % 2:
            raise ValueError(f"modes_per_dim must be an even integer >= 4, got {m!r}")
        pad = Fraction(self.padding_factor).limit_denominator(1000)
        if pad < Fraction(3, 2):
            raise ValueError(f"padding_factor must be >= 3/2, got {pad}")
        object.__setattr__(self, "modes_per_dim", int(m))
        object.__setattr__(self, "padding_factor", pad)
        if self.quad_points is None:
            object.__setattr__(self, "quad_points", 2 * self.padded_size)
        q = self.quad_points
        if int(q) != q or q % 2 or q < self.padded_size:
            raise ValueError(
                f"quad_points must be even and >= padded size {self.padded_size}, got {q!r}"
            )
        object.__setattr__(self, "quad_points", int(q))

    @property
    def M(self):
        return self.modes_per_dim

    @property
    def padded_size(self):
        n = math.ceil(self.padding_factor * self.modes_per_dim)
        return n + (n % 2)

    @property
    def kmax(self):
        """Largest retained |k_i|."""
        return self.modes_per_dim // 2 - 1

    @property
    def k1(self):
        return _wavenumbers(self.M)[0]

    @property
    def k2(self):
        return _wavenumbers(self.M)[1]

    @property
    def ksq(self):
        return _wavenumbers(self.M)[2]

    @property
    def kabs(self):
        return _wavenumbers(self.M)[3]

    @property
    def retained(self):
        """Boolean mask of retained nonzero wavenumbers."""
        return _wavenumbers(self.M)[4]

    @property
    def inv_kabs(self):
        return _wavenumbers(self.M)[5]

    @property
    def neg_index(self):
        return _wavenumbers(self.M)[6]

    def multiplier_power(self, s):
        """|k|^s on retained modes, 0 elsewhere (s may be negative)."""
        out = np.zeros((self.M, self.M))
        mask = self.retained
        out[mask] = self.kabs[mask] ** s
        return out

    def physical_grid(self, n=None):
        n = self.padded_size if n is None else n
        x = np.arange(n) * (TWO_PI / n)
        return np.meshgrid(x, x, indexing="ij")

    def n_modes(self):
        return int(self.retained.sum())


# ---------------------------------------------------------------------------
# array kernels


def check_transform_size(grid, n):
    if n < grid.M:
        raise ValueError(f"transform size {n} smaller than M={grid.M}")


def to_physical(c, grid, n=None):
    """Point values on an n x n grid of the field(s) with coefficients ``c``."""
    n = grid.padded_size if n is None else n
    check_transform_size(grid, n)
    m = grid.M
    h = m // 2
    half = np.zeros(c.shape[:-2] + (n, n // 2 + 1), dtype=complex)
    half[..., :h, :h] = c[..., :h, :h]
    half[..., n - h + 1 :, :h] = c[..., m - h + 1 :, :h]
    return sfft.irfft2(half, s=(n, n)) * (n * n / TWO_PI)


def hermitian_full(half, grid):
    """Rebuild the full (M, M) array from its k2 >= 0 half, exactly Hermitian."""
    m = grid.M
    h = m // 2
    neg = grid.neg_index
    full = np.zeros(half.shape[:-2] + (m, m), dtype=complex)
    col0 = half[..., :, 0]
    full[..., :, 0] = 0.5 * (col0 + np.conj(col0[..., neg]))
    full[..., :, 1:h] = half[..., :, 1:h]
    full[..., :, h + 1 :] = np.conj(half[..., neg, h - 1 : 0 : -1])
    full[..., h, :] = 0.0
    full[..., :, h] = 0.0
    return full


def from_physical(f, grid, keep_mean=False):
    """Truncated Fourier coefficients of point values ``f`` on a square grid."""
    n = f.shape[-1]
    check_transform_size(grid, n)
    m = grid.M
    h = m // 2
    big = sfft.rfft2(f) * (TWO_PI / (n * n))
    half = np.zeros(f.shape[:-2] + (m, h), dtype=complex)
    half[..., :h, :] = big[..., :h, :h]
    half[..., m - h + 1 :, :] = big[..., n - h + 1 :, :h]
    full = hermitian_full(half, grid)
    if not keep_mean:
        full[..., 0, 0] = 0.0
    return full


def product(a, b, grid, keep_mean=False):
    """Alias-free retained coefficients of the pointwise product."""
    fa = to_physical(a, grid)
    fb = to_physical(b, grid)
    return from_physical(fa * fb, grid, keep_mean=keep_mean)


def riesz_perp_coeffs(c, grid):
    """(u1, u2) = (-R2 c, R1 c) with R_j symbol -i k_j/|k|."""
    inv = grid.inv_kabs
    u1 = 1j * grid.k2 * inv * c
    u2 = -1j * grid.k1 * inv * c
    return u1, u2


def advection_coeffs(u1, u2, c, grid):
    """-div(u c) for a divergence-free velocity (u1, u2), all given spectrally."""
    stack = np.stack((u1, u2, c))
    phys = to_physical(stack, grid)
    flux = np.stack((phys[0] * phys[2], phys[1] * phys[2]))
    fh = from_physical(flux, grid)
    return -1j * (grid.k1 * fh[0] + grid.k2 * fh[1])


def inner_coeffs(a, b):
    """L^2 inner product(s) over the trailing two axes."""
    return np.real(np.sum(np.conj(a) * b, axis=(-2, -1)))


def sobolev_sq(c, grid, s):
    w = grid.multiplier_power(2.0 * s)
    return np.sum(w * np.abs(c) ** 2, axis=(-2, -1))


def lp_norm_values(f, p):
    """L^p norm on the torus from equal-weight quadrature of point values."""
    n = f.shape[-1]
    if np.isinf(p):
        return np.max(np.abs(f), axis=(-2, -1))
    cell = (TWO_PI / n) ** 2
    return (cell * np.sum(np.abs(f) ** p, axis=(-2, -1))) ** (1.0 / p)


# ---------------------------------------------------------------------------
# field type


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable real zero-mean field; ``coeffs`` is read-only."""

    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = self.grid.M
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (m, m):
            raise ValueError(f"coefficient array must have shape {(m, m)}, got {c.shape}")
        c[0, 0] = 0.0
        c[m // 2, :] = 0.0
        c[:, m // 2] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors
    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.M, grid.M), dtype=complex))

    @classmethod
    def from_physical(cls, grid, values):
        values = np.asarray(values, dtype=float)
        return cls(grid, from_physical(values, grid))

    @classmethod
    def from_function(cls, grid, func):
        """Sample ``func(x1, x2)`` on the padded grid and project."""
        x1, x2 = grid.physical_grid()
        return cls.from_physical(grid, func(x1, x2))

    @classmethod
    def single_mode(cls, grid, k, kind="cos", amplitude=1.0):
        """``amplitude * cos(k.x)`` or ``amplitude * sin(k.x)`` (unnormalized trig I/O)."""
        k1, k2 = k
        if max(abs(k1), abs(k2)) > grid.kmax or (k1, k2) == (0, 0):
            raise ValueError(f"mode {k} not retained on grid M={grid.M}")
        c = np.zeros((grid.M, grid.M), dtype=complex)
        a, b = k1 % grid.M, k2 % grid.M
        na, nb = (-k1) % grid.M, (-k2) % grid.M
        # cos = (e + e*)/2, sin = (e - e*)/(2i); orthonormal basis carries 1/(2 pi)
        if kind == "cos":
            c[a, b] += np.pi * amplitude
            c[na, nb] += np.pi * amplitude
        elif kind == "sin":
            c[a, b] += -1j * np.pi * amplitude
            c[na, nb] += 1j * np.pi * amplitude
        else:
            raise ValueError(f"unknown mode kind {kind!r}")
        return cls(grid, c)

    def to_physical(self, n=None):
        return to_physical(self.coeffs, self.grid, n)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def is_hermitian(self, atol=0.0):
        c = self.coeffs
        neg = self.grid.neg_index
        mirror = np.conj(c[np.ix_(neg, neg)])
        return bool(np.max(np.abs(c - mirror), initial=0.0) <= atol)


def common_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {g} vs {f.grid}")
    return g


def apply_lambda_s(f, s):
    """Fractional power Lambda^s = (-Laplacian)^{s/2}: multiplier |k|^s."""
    return SpectralField(f.grid, f.grid.multiplier_power(s) * f.coeffs)


def riesz_perp(theta):
    """SQG velocity u = R^perp theta = (-R2 theta, R1 theta)."""
    u1, u2 = riesz_perp_coeffs(theta.coeffs, theta.grid)
    return SpectralField(theta.grid, u1), SpectralField(theta.grid, u2)


def sobolev_norm(f, s):
    return float(np.sqrt(sobolev_sq(f.coeffs, f.grid, s)))


def inner(f, g):
    common_grid(f, g)
    return float(inner_coeffs(f.coeffs, g.coeffs))


def lp_norm(f, p):
    """L^p(T^2) norm from equal-weight quadrature on the grid's quad points."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if not np.any(f.coeffs):
        return 0.0
    return float(lp_norm_values(f.to_physical(f.grid.quad_points), p))


def dealiased_product(f, g):
    grid = common_grid(f, g)
    return SpectralField(grid, product(f.coeffs, g.coeffs, grid))


def poisson_filter(f, delta):
    """Convolution with the periodic Poisson kernel: multiplier exp(-delta |k|)."""
    return SpectralField(f.grid, np.exp(-delta * f.grid.kabs) * f.coeffs)


def ball_mask(grid, n):
    """Modes with 0 < |k| <= n."""
    return grid.retained & (grid.ksq <= n * n + 1e-9)


def project_ball(f, n):
    return SpectralField(f.grid, np.where(ball_mask(f.grid, n), f.coeffs, 0.0))


def random_coeffs(grid, rng, slope=2.0, band=None, size=None):
    """Gaussian coefficients with E|c_k|^2 ~ |k|^-2*slope, unit L^2 norm.

    ``band`` restricts to max(|k1|, |k2|) <= band.
    """
    shape = (grid.M, grid.M) if size is None else (size, grid.M, grid.M)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    neg = grid.neg_index
    herm = 0.5 * (raw + np.conj(raw[..., neg, :][..., :, neg]))
    mask = grid.retained
    if band is not None:
        mask = mask & (np.maximum(np.abs(grid.k1), np.abs(grid.k2)) <= band)
    amp = np.zeros((grid.M, grid.M))
    amp[mask] = grid.kabs[mask] ** (-slope)
    c = herm * amp
    c[..., 0, 0] = 0.0
    norm = np.sqrt(np.sum(np.abs(c) ** 2, axis=(-2, -1), keepdims=True))
    return c / norm


def random_field(grid, rng, slope=2.0, band=None, amplitude=1.0):
    """Random band-limited field with L^2 norm ``amplitude``."""
    return SpectralField(grid, amplitude * random_coeffs(grid, rng, slope, band))


# ---------------------------------------------------------------------------
# snapshot files

_MAGIC = b"SQGF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def write_snapshot(path, f):
    """Binary snapshot: header (magic, version, M, padding num/den), then
    little-endian float64 (re, im) pairs over the full M x M array in
    row-major FFT order."""
    g = f.grid
    pad = g.padding_factor
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, g.M, pad.numerator, pad.denominator))
        fh.write(np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes())


def read_snapshot(path, quad_points=None):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, m, num, den = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    body = data[_HEADER.size :]
    if len(body) != 16 * m * m:
        raise ValueError(f"{path}: expected {16 * m * m} payload bytes, got {len(body)}")
    grid = GridSpec(m, Fraction(num, den), quad_points)
    coeffs = np.frombuffer(body, dtype="<c16").reshape(m, m)
    return SpectralField(grid, coeffs)
