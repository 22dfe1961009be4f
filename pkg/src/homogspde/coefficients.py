"""Noise-shape families g, their derivatives, the integral G(x) = int_0^x g'^2,
and the constants (kappa, tail constant) that the homogenization estimates use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

QUAD_TOL = 1e-10


class CertificationError(RuntimeError):
    """A shape integral could not be evaluated to the required tolerance."""


class RegimeError(ValueError):
    """Operation not defined for the shape's regime (e.g. tail of a power law)."""


@dataclass(frozen=True)
class NoiseShape:
    """Immutable description of a noise shape.

    ``g``, ``gprime`` and ``G`` are vectorized callables.  ``regime`` is
    ``"bounded"`` (g, g' bounded and g' square integrable) or ``"power"``
    (g(z) = |z|**gamma).  ``support`` bounds the support of g' when known;
    quadratures clip to it.
    """

    kind: str
    g: Callable
    gprime: Callable
    G: Callable
    kappa: float
    regime: str
    sup_g: float
    sup_gprime: float
    gamma: Optional[float] = None
    support: tuple = (-math.inf, math.inf)
    breakpoints: tuple = ()
    meta: dict = field(default_factory=dict)

    def gprime_sq(self, z):
        gp = self.gprime(z)
        return gp * gp

    def diffusivity_bound(self, z_cap: float = math.inf) -> float:
        """sup |g'|^2 over |z| <= z_cap (only the power regime needs the cap)."""
        if self.regime == "power":
            if not math.isfinite(z_cap):
                return math.inf
            return self.gamma**2 * z_cap ** (2 * self.gamma - 2)
        return self.sup_gprime**2


# --- canonical shape g(z) = |z| / sqrt(1 + z^2) -------------------------

def _canon_g(z):
    z = np.asarray(z, dtype=float)
    return np.abs(z) / np.sqrt(1.0 + z * z)


def _canon_gprime(z):
    # sign(0) = 0 makes g'(0) = 0: noise is literally off at critical points
    z = np.asarray(z, dtype=float)
    return np.sign(z) * (1.0 + z * z) ** -1.5


def _canon_G(x):
    x = np.asarray(x, dtype=float)
    q = 1.0 + x * x
    return x / (4.0 * q * q) + 3.0 * x / (8.0 * q) + 0.375 * np.arctan(x)


def make_canonical() -> NoiseShape:
    return NoiseShape(
        kind="canonical",
        g=_canon_g,
        gprime=_canon_gprime,
        G=_canon_G,
        kappa=3.0 * math.pi / 16.0,
        regime="bounded",
        sup_g=1.0,
        sup_gprime=1.0,
        meta={"gprime_at_zero": 0.0, "kink": 0.0},
    )


# --- power shape g(z) = |z|^gamma ---------------------------------------

def _power_g(z, gamma):
    return np.abs(np.asarray(z, dtype=float)) ** gamma


def _power_gprime(z, gamma):
    z = np.asarray(z, dtype=float)
    return gamma * np.abs(z) ** (gamma - 1.0) * np.sign(z)


def _power_G(x, gamma):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * gamma**2 * np.abs(x) ** (2 * gamma - 1) / (2 * gamma - 1)


def make_power(gamma: float) -> NoiseShape:
    if not gamma > 1:
        raise ValueError(f"power shape needs gamma > 1, got {gamma}")
    gamma = float(gamma)
    return NoiseShape(
        kind="power",
        g=partial(_power_g, gamma=gamma),
        gprime=partial(_power_gprime, gamma=gamma),
        G=partial(_power_G, gamma=gamma),
        kappa=math.inf,
        regime="power",
        sup_g=math.inf,
        sup_gprime=math.inf,
        gamma=gamma,
        meta={"energy_coefficient": (gamma - 1) ** 2 / (2 * gamma - 1)},
    )


# --- constant shape (additive noise, OU reduction) -----------------------

def _const_g(z, c):
    return np.full_like(np.asarray(z, dtype=float), c)


def _zero(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def make_constant(c: float) -> NoiseShape:
    c = float(c)
    return NoiseShape(
        kind="constant",
        g=partial(_const_g, c=c),
        gprime=_zero,
        G=_zero,
        kappa=0.0,
        regime="bounded",
        sup_g=abs(c),
        sup_gprime=0.0,
        support=(0.0, 0.0),
        meta={"c": c},
    )


# --- user supplied shapes ------------------------------------------------

def make_custom(g, gprime, G=None, *, sup_g=None, sup_gprime=None,
                support=(-math.inf, math.inf), breakpoints=(), name="custom") -> NoiseShape:
    """Shape from user callables; G defaults to cached adaptive quadrature.

    Sup norms not given are estimated on a dense sample of [-50, 50].
    """
    gv = np.vectorize(g, otypes=[float]) if not _is_vectorized(g) else g
    gpv = np.vectorize(gprime, otypes=[float]) if not _is_vectorized(gprime) else gprime
    lo, hi = support

    if G is None:
        @lru_cache(maxsize=100_000)
        def _G_scalar(x: float) -> float:
            a, b = (0.0, x) if x >= 0 else (x, 0.0)
            a, b = max(a, lo), min(b, hi)
            if a >= b:
                return 0.0
            pts = [p for p in breakpoints if a < p < b] or None
            val, _ = integrate.quad(lambda y: float(gpv(y)) ** 2, a, b,
                                    epsabs=QUAD_TOL, epsrel=QUAD_TOL, points=pts, limit=200)
            return val if x >= 0 else -val

        def G(x):
            x = np.asarray(x, dtype=float)
            return np.vectorize(lambda t: _G_scalar(float(t)), otypes=[float])(x)[()]

    sample = np.linspace(-50, 50, 20001)
    if sup_g is None:
        sup_g = float(np.max(np.abs(gv(sample))))
    if sup_gprime is None:
        sup_gprime = float(np.max(np.abs(gpv(sample))))
    shape = NoiseShape(kind=name, g=gv, gprime=gpv, G=G, kappa=0.0, regime="bounded",
                       sup_g=float(sup_g), sup_gprime=float(sup_gprime),
                       support=(float(lo), float(hi)), breakpoints=tuple(breakpoints))
    object.__setattr__(shape, "kappa", kappa_of(shape))
    return shape


def _is_vectorized(f) -> bool:
    try:
        out = f(np.array([0.25, 0.5]))
        return np.shape(out) == (2,)
    except Exception:
        return False


def make_tabulated(z, gz, name="tabulated") -> NoiseShape:
    """Shape from samples (z_j, g(z_j)), ascending z.

    g is a monotone cubic (PCHIP) interpolant held constant outside the
    table, so g' vanishes there.  G integrates the squared derivative of the
    interpolant exactly (piecewise polynomial antiderivative).
    """
    z = np.asarray(z, dtype=float)
    gz = np.asarray(gz, dtype=float)
    if z.ndim != 1 or z.size < 2 or z.shape != gz.shape:
        raise ValueError("table needs at least two (z, g) rows")
    if np.any(np.diff(z) <= 0):
        raise ValueError("table z column must be strictly ascending")
    pchip = interpolate.PchipInterpolator(z, gz, extrapolate=False)
    dp = pchip.derivative()
    # square each cubic-derivative piece (degree 2 -> 4)
    c = dp.c  # (3, n_intervals), highest power first
    sq = np.zeros((5, c.shape[1]))
    for j in range(c.shape[1]):
        sq[:, j] = np.polymul(c[:, j], c[:, j])
    gsq = interpolate.PPoly(sq, dp.x, extrapolate=False)
    anti = gsq.antiderivative()
    z0_anchor = float(np.clip(0.0, z[0], z[-1]))
    a0 = float(anti(z0_anchor))
    zmin, zmax = float(z[0]), float(z[-1])
    right = float(anti(zmax) - a0)
    left = float(a0 - anti(zmin))
    return NoiseShape(
        kind=name,
        g=partial(_tab_g, pchip, zmin, zmax),
        gprime=partial(_tab_gprime, dp, zmin, zmax),
        G=partial(_tab_G, anti, a0, zmin, zmax),
        kappa=min(right, left), regime="bounded",
        sup_g=float(np.max(np.abs(gz))),
        sup_gprime=float(np.max(np.abs(dp(np.linspace(zmin, zmax, 4001))))),
        support=(float(zmin), float(zmax)), breakpoints=tuple(float(t) for t in z),
    )


def _tab_g(pchip, zmin, zmax, x):
    return pchip(np.clip(np.asarray(x, dtype=float), zmin, zmax))


def _tab_gprime(dp, zmin, zmax, x):
    x = np.asarray(x, dtype=float)
    inside = (x >= zmin) & (x <= zmax)
    return np.where(inside, np.nan_to_num(dp(np.clip(x, zmin, zmax))), 0.0)


def _tab_G(anti, a0, zmin, zmax, x):
    return anti(np.clip(np.asarray(x, dtype=float), zmin, zmax)) - a0


def load_table(path) -> NoiseShape:
    """Read a two-column whitespace table (z, g(z)); '#' starts a comment."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    return make_tabulated(data[:, 0], data[:, 1], name="tabulated")


# --- certification --------------------------------------------------------

def _gprime_sq_integral(ns: NoiseShape, a: float, b: float) -> float:
    lo, hi = ns.support
    a, b = max(a, lo), min(b, hi)
    if not a < b:
        return 0.0
    f = lambda y: float(ns.gprime_sq(y))
    finite = math.isfinite(a) and math.isfinite(b)
    pts = [p for p in ns.breakpoints if a < p < b] if finite else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(f, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                             points=pts or None, limit=400, full_output=1)
    val, err = out[0], out[1]
    if len(out) > 3 or not math.isfinite(val) or err > 1e3 * QUAD_TOL * max(1.0, abs(val)):
        raise CertificationError(f"quadrature of |g'|^2 on [{a}, {b}] did not converge "
                                 f"(value {val}, error estimate {err})")
    return val


def kappa_of(ns: NoiseShape) -> float:
    """min of the two half-line integrals of |g'|^2, by quadrature."""
    if ns.regime != "bounded":
        raise RegimeError("kappa is only defined for bounded shapes")
    return min(_gprime_sq_integral(ns, 0.0, math.inf),
               _gprime_sq_integral(ns, -math.inf, 0.0))


def certify_tail(ns: NoiseShape, z_grid) -> dict:
    """Estimate C in  (int_{-inf}^{-z} + int_z^inf) |g'|^2 <= C / z  over z_grid."""
    if ns.regime != "bounded":
        raise RegimeError("tail condition requires g' in L^2 (bounded regime)")
    z_grid = np.asarray(z_grid, dtype=float)
    if np.any(z_grid <= 0):
        raise ValueError("z_grid must be positive")
    c_hat = 0.0
    for z in z_grid:
        tail = (_gprime_sq_integral(ns, z, math.inf)
                + _gprime_sq_integral(ns, -math.inf, -z))
        c_hat = max(c_hat, z * tail)
    return {"C_hat": c_hat, "pass": math.isfinite(c_hat)}
