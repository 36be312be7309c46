"""Sine-Galerkin representation of Dirichlet functions on (0, 1).

A field is stored by its coefficients ``u_k`` against the orthonormal basis
``e_k(xi) = sqrt(2) sin(k pi xi)``, k = 1..N.  The operator ``A = -d^2/dxi^2``
is diagonal in this basis with eigenvalues ``(k pi)^2``.

Quadratic products are evaluated pseudo-spectrally on the interior grid
``xi_j = j / M``.  With ``2M > 3N`` the trapezoid sums used for the
projections are exact, so the Galerkin nonlinearity is alias-free and
``<B(u), u> = 0`` holds to roundoff.

The array-level helpers (``nonlinearity``, ``nonlinearity_jvp``, ...) act on
the last axis and broadcast over leading axes; the solvers use them directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

__all__ = [
    "SpectralField",
    "GridField",
    "wavenumbers",
    "eigenvalues",
    "dealias_grid_size",
    "sobolev_norm",
    "apply_fractional_A",
    "semigroup_apply",
    "burgers_nonlinearity",
    "inner",
    "to_grid",
    "from_grid",
    "nonlinearity",
    "nonlinearity_jvp",
    "nonlinearity_vjp",
]

SQRT2 = np.sqrt(2.0)


def wavenumbers(n_modes: int) -> np.ndarray:
    """Return ``k pi`` for k = 1..n_modes."""
    return np.pi * np.arange(1, n_modes + 1, dtype=float)


def eigenvalues(n_modes: int) -> np.ndarray:
    """Return the eigenvalues ``(k pi)^2`` of A for k = 1..n_modes."""
    return wavenumbers(n_modes) ** 2


def dealias_grid_size(n_modes: int) -> int:
    """Smallest M with 2M > 3N, the alias-free size for quadratic products."""
    return 3 * n_modes // 2 + 1


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable vector of sine coefficients ``(u_1, ..., u_N)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size == 0:
            raise ValueError("SpectralField needs at least one mode")
        if not np.all(np.isfinite(c)):
            raise ValueError("SpectralField coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, n_modes: int) -> "SpectralField":
        return cls(np.zeros(n_modes))

    @classmethod
    def mode(cls, k: int, n_modes: int, amplitude: float = 1.0) -> "SpectralField":
        """``amplitude * e_k`` truncated to ``n_modes``."""
        if not 1 <= k <= n_modes:
            raise ValueError(f"mode index {k} outside 1..{n_modes}")
        c = np.zeros(n_modes)
        c[k - 1] = amplitude
        return cls(c)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    def resized(self, n_modes: int) -> "SpectralField":
        """Truncate or zero-pad to ``n_modes``."""
        c = np.zeros(n_modes)
        m = min(n_modes, self.n_modes)
        c[:m] = self.coeffs[:m]
        return SpectralField(c)

    def __call__(self, xi) -> np.ndarray:
        """Evaluate the field at arbitrary points of [0, 1]."""
        xi = np.asarray(xi, dtype=float)
        k = wavenumbers(self.n_modes)
        return SQRT2 * np.sin(np.multiply.outer(xi, k)) @ self.coeffs

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs)

    def __repr__(self) -> str:
        return f"SpectralField(n_modes={self.n_modes}, coeffs={np.array2string(self.coeffs, threshold=6)})"


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples at the interior points ``xi_j = j / M``, j = 1..M-1."""

    values: np.ndarray
    m_grid: int

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.m_grid - 1:
            raise ValueError(f"expected {self.m_grid - 1} interior samples, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def points(self) -> np.ndarray:
        return np.arange(1, self.m_grid) / self.m_grid


def _check_same(u: SpectralField, v: SpectralField):
    if u.n_modes != v.n_modes:
        raise ValueError(f"mode count mismatch: {u.n_modes} vs {v.n_modes}")


def inner(u: SpectralField, v: SpectralField) -> float:
    """L^2 inner product (Parseval in the orthonormal sine basis)."""
    _check_same(u, v)
    return float(u.coeffs @ v.coeffs)


def sobolev_norm(u: SpectralField, r: float) -> float:
    """``(sum_k (k pi)^(2r) u_k^2)^(1/2)``; any real ``r`` is allowed."""
    w = wavenumbers(u.n_modes) ** r
    return float(np.linalg.norm(w * u.coeffs))


def apply_fractional_A(u: SpectralField, s: float) -> SpectralField:
    """Apply ``A^s``: coefficient k is multiplied by ``(k pi)^(2s)``."""
    return SpectralField(wavenumbers(u.n_modes) ** (2.0 * s) * u.coeffs)


def semigroup_apply(u: SpectralField, t: float) -> SpectralField:
    """Heat semigroup ``exp(-tA)``."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    return SpectralField(np.exp(-eigenvalues(u.n_modes) * t) * u.coeffs)


# --- array-level transforms -------------------------------------------------

def _pad(a: np.ndarray, length: int) -> np.ndarray:
    n = a.shape[-1]
    if n > length:
        raise ValueError(f"grid too coarse: {n} modes need M >= {n + 1}")
    if n == length:
        return a
    pad = [(0, 0)] * (a.ndim - 1) + [(0, length - n)]
    return np.pad(a, pad)


def _grid_values(coeffs: np.ndarray, m_grid: int) -> np.ndarray:
    # DST-I of length M-1: y_j = 2 sum_k c_k sin(pi j k / M)
    return fft.dst(_pad(coeffs, m_grid - 1), type=1, axis=-1) / SQRT2


def _sine_project(values: np.ndarray, n_modes: int) -> np.ndarray:
    m_grid = values.shape[-1] + 1
    return fft.dst(values, type=1, axis=-1)[..., :n_modes] / (SQRT2 * m_grid)


def _derivative_project(values: np.ndarray, n_modes: int) -> np.ndarray:
    """Sine coefficients of ``d/dxi g`` for g given on the interior grid.

    g is assumed to vanish at both ends, so integrating by parts gives
    ``<g', e_k> = -sqrt(2) k pi int g cos(k pi xi)``.
    """
    m_grid = values.shape[-1] + 1
    lead = values.shape[:-1]
    z = np.zeros(lead + (1,))
    padded = np.concatenate([z, values, z], axis=-1)
    y = fft.dct(padded, type=1, axis=-1)[..., 1 : n_modes + 1]
    return -wavenumbers(n_modes) * y / (SQRT2 * m_grid)


def _derivative_grid(coeffs: np.ndarray, m_grid: int) -> np.ndarray:
    """Values of ``d/dxi u`` (a cosine series) at the interior grid points."""
    n = coeffs.shape[-1]
    lead = coeffs.shape[:-1]
    c = np.zeros(lead + (m_grid + 1,))
    c[..., 1 : n + 1] = wavenumbers(n) * coeffs
    y = fft.dct(c, type=1, axis=-1)
    return y[..., 1:m_grid] / SQRT2


def nonlinearity(coeffs: np.ndarray, m_grid: int | None = None) -> np.ndarray:
    """Galerkin projection of ``B(u) = (1/2) d/dxi (u^2)`` on coefficient arrays."""
    n = coeffs.shape[-1]
    m_grid = m_grid or dealias_grid_size(n)
    g = _grid_values(coeffs, m_grid)
    return _derivative_project(0.5 * g * g, n)


def nonlinearity_jvp(u: np.ndarray, v: np.ndarray, m_grid: int | None = None) -> np.ndarray:
    """Directional derivative ``B'(u) v = P d/dxi (u v)``."""
    n = u.shape[-1]
    m_grid = m_grid or dealias_grid_size(n)
    return _derivative_project(_grid_values(u, m_grid) * _grid_values(v, m_grid), n)


def nonlinearity_vjp(u: np.ndarray, w: np.ndarray, m_grid: int | None = None) -> np.ndarray:
    """Adjoint action ``B'(u)^T w = -P(u * d/dxi w)``."""
    n = u.shape[-1]
    m_grid = m_grid or dealias_grid_size(n)
    prod = _grid_values(u, m_grid) * _derivative_grid(w, m_grid)
    return -_sine_project(prod, n)


def burgers_nonlinearity(u: SpectralField, m_grid: int | None = None) -> SpectralField:
    """Dealiased ``P_N (1/2) d/dxi (u^2)`` as a SpectralField."""
    m_grid = m_grid or dealias_grid_size(u.n_modes)
    if 2 * m_grid <= 3 * u.n_modes:
        raise ValueError(f"grid M={m_grid} aliases the quadratic term for N={u.n_modes}")
    return SpectralField(nonlinearity(u.coeffs, m_grid))


def to_grid(u: SpectralField, m_grid: int | None = None) -> GridField:
    """Evaluate u at the interior grid; needs ``M >= N + 1``."""
    m_grid = m_grid or dealias_grid_size(u.n_modes)
    return GridField(_grid_values(u.coeffs, m_grid), m_grid)


def from_grid(g: GridField, n_modes: int) -> SpectralField:
    """Discrete sine projection onto modes 1..n_modes."""
    if n_modes > g.m_grid - 1:
        raise ValueError(f"cannot recover {n_modes} modes from M={g.m_grid}")
    return SpectralField(_sine_project(g.values, n_modes))
