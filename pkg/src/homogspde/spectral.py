"""Real trigonometric basis on the circle and spectral/grid transforms.

Coordinates are stored against the orthonormal basis

    e_1 = 1/sqrt(2 pi),  e_{2k} = sin(kx)/sqrt(pi),  e_{2k+1} = cos(kx)/sqrt(pi)

so a field in H_m is an array of m reals, ``coeffs[i-1]`` multiplying ``e_i``.
Grids are uniform, ``x_j = 2 pi j / N``.  Transforms are dense O(N m) matrix
products, which is the fast path for the modest m used here and batches
naturally over leading axes (one row per trajectory).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


class ResolutionError(ValueError):
    """Grid too coarse for the requested number of modes."""


class InvalidIndexError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralField:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("coeffs must be a non-empty 1-d array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def m(self) -> int:
        return self.coeffs.size


@dataclass(frozen=True)
class GridField:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not is_power_of_two(v.size):
            raise ValueError("grid size must be a power of two")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return grid_points(self.N)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def grid_points(N: int) -> np.ndarray:
    return TWO_PI * np.arange(N) / N


def wavenumbers(m: int) -> np.ndarray:
    """Wavenumber k of each basis index 1..m (0 for the constant mode)."""
    i = np.arange(1, m + 1)
    return i // 2


def max_wavenumber(m: int) -> int:
    return m // 2


def basis_eval(i: int, x):
    """Value of e_i at angle(s) x."""
    if i < 1:
        raise InvalidIndexError(f"basis index must be >= 1, got {i}")
    x = np.asarray(x, dtype=float)
    if i == 1:
        return np.full_like(x, 1.0 / np.sqrt(TWO_PI))[()]
    k = i // 2
    trig = np.sin if i % 2 == 0 else np.cos
    return (trig(k * x) / np.sqrt(np.pi))[()]


def basis_derivative_eval(i: int, x):
    """Value of (e_i)' at angle(s) x."""
    if i < 1:
        raise InvalidIndexError(f"basis index must be >= 1, got {i}")
    x = np.asarray(x, dtype=float)
    if i == 1:
        return np.zeros_like(x)[()]
    k = i // 2
    if i % 2 == 0:
        return (k * np.cos(k * x) / np.sqrt(np.pi))[()]
    return (-k * np.sin(k * x) / np.sqrt(np.pi))[()]


@lru_cache(maxsize=64)
def _tables(m: int, N: int):
    x = grid_points(N)
    vals = np.stack([basis_eval(i, x) for i in range(1, m + 1)])
    ders = np.stack([basis_derivative_eval(i, x) for i in range(1, m + 1)])
    for a in (vals, ders):
        a.setflags(write=False)
    return vals, ders


class Discretization:
    """Cached synthesis/projection matrices for a fixed (m, N) pair.

    ``synth`` maps coefficient arrays of shape (..., m) to grid values of
    shape (..., N); ``project`` is the quadrature projection back.
    """

    def __init__(self, m: int, N: int):
        if m < 1:
            raise ValueError("m must be >= 1")
        if not is_power_of_two(N):
            raise ResolutionError(f"N must be a power of two, got {N}")
        if m > N - 1:
            raise ResolutionError(f"m={m} modes cannot be resolved on N={N} points")
        self.m = m
        self.N = N
        self.k = wavenumbers(m)
        self.x = grid_points(N)
        vals, ders = _tables(m, N)
        self.E = vals            # (m, N): e_i(x_j)
        self.dE = ders           # (m, N): e_i'(x_j)
        self.ddE = -(self.k**2)[:, None] * vals
        self.P = (TWO_PI / N) * vals.T  # (N, m)

    def synth(self, c):
        return np.asarray(c) @ self.E

    def synth_dx(self, c):
        return np.asarray(c) @ self.dE

    def synth_dxx(self, c):
        return np.asarray(c) @ self.ddE

    def project(self, u):
        return np.asarray(u) @ self.P

    def deriv(self, c):
        return spectral_derivative(c)

    def quad(self, u):
        return (TWO_PI / self.N) * np.sum(u, axis=-1)


def spectral_derivative(c):
    """Exact derivative in coefficient space (batched over leading axes).

    sin(kx) -> k cos(kx), cos(kx) -> -k sin(kx).  For even m the top sine
    mode has no cosine partner in H_m and its derivative is truncated.
    """
    c = np.asarray(c, dtype=float)
    m = c.shape[-1]
    out = np.zeros_like(c)
    ks = np.arange(1, (m - 1) // 2 + 1)
    sin_idx = 2 * ks - 1  # array slot of e_{2k}
    cos_idx = 2 * ks      # array slot of e_{2k+1}
    out[..., cos_idx] = ks * c[..., sin_idx]
    out[..., sin_idx] = -ks * c[..., cos_idx]
    return out


def project(f: GridField, m: int) -> SpectralField:
    if m > f.N - 1:
        raise ResolutionError(f"cannot project onto {m} modes from N={f.N} points")
    if m < 1:
        raise ValueError("m must be >= 1")
    vals, _ = _tables(m, f.N)
    return SpectralField((TWO_PI / f.N) * vals @ f.values)


def synthesize(f: SpectralField, N: int) -> GridField:
    if not is_power_of_two(N):
        raise ResolutionError(f"N must be a power of two, got {N}")
    if N < 2 * (max_wavenumber(f.m) + 1):
        raise ResolutionError(f"N={N} undersamples a field with m={f.m}")
    vals, _ = _tables(f.m, N)
    return GridField(f.coeffs @ vals)


def derivative(f: SpectralField) -> SpectralField:
    return SpectralField(spectral_derivative(f.coeffs))


def quadrature(f: GridField) -> float:
    return float(TWO_PI / f.N * np.sum(f.values))


def norms(f, p: float | None = None) -> dict:
    """L2 norm, H1 seminorm, and (grid input only) L1 norm and L^p p-th power.

    For a SpectralField the L2 norm is the Euclidean norm of the coefficients
    and the H1 seminorm that of the derivative coefficients.
    """
    if isinstance(f, SpectralField):
        k = wavenumbers(f.m)
        return {
            "l2": float(np.linalg.norm(f.coeffs)),
            "h1_semi": float(np.linalg.norm(k * f.coeffs)),
        }
    if isinstance(f, GridField):
        v = f.values
        h = TWO_PI / f.N
        out = {"l2": float(np.sqrt(h * np.sum(v * v))), "l1": float(h * np.sum(np.abs(v)))}
        d = _grid_derivative(v)
        out["h1_semi"] = float(np.sqrt(h * np.sum(d * d)))
        if p is not None:
            out["lp_pow"] = float(h * np.sum(np.abs(v) ** p))
        return out
    raise TypeError(f"expected SpectralField or GridField, got {type(f).__name__}")


def _grid_derivative(v: np.ndarray) -> np.ndarray:
    N = v.size
    vh = np.fft.rfft(v)
    k = np.arange(vh.size)
    if N % 2 == 0:
        vh[-1] = 0.0  # Nyquist mode has no resolvable derivative
    return np.fft.irfft(1j * k * vh, n=N)


def basis_sums(n: int, N: int) -> dict:
    """Pointwise sums over the 2n+1 noise modes on an N-point grid.

    Returns arrays for sum e_i e_i', sum e_i^2 and sum (e_i')^2; the latter two
    are constant in x, equal to (2n+1)/(2 pi) and n(n+1)(2n+1)/(6 pi).
    """
    x = grid_points(N)
    S = 2 * n + 1
    e = np.stack([basis_eval(i, x) for i in range(1, S + 1)]) if S > 0 else np.zeros((0, N))
    de = np.stack([basis_derivative_eval(i, x) for i in range(1, S + 1)])
    return {
        "e_de": np.sum(e * de, axis=0),
        "e_sq": np.sum(e * e, axis=0),
        "de_sq": np.sum(de * de, axis=0),
    }


def noise_constant(n: int) -> float:
    """c_Q = sum_{i<=2n+1} e_i(x)^2, computed from the basis at x = 0."""
    S = 2 * n + 1
    return float(sum(basis_eval(i, 0.0) ** 2 for i in range(1, S + 1)))
