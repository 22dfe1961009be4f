"""Ito-form right-hand side of the extremum-rescaled stochastic heat equation.

The model on the circle is

    d psi = (A psi + c_Q |g'|^2(psi_x/eps) psi_xx / (2 eps^2)) dt
            + g(psi_x/eps) dW^Q,          W^Q = sum_{i<=2n+1} beta^i e_i,

where c_Q = sum_i e_i(x)^2 = (2n+1)/(2 pi) is the Stratonovich-to-Ito
constant of the truncated noise, computed from the basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, partial
from typing import Callable, Optional

import numpy as np

from .coefficients import NoiseShape, make_canonical
from .spectral import (
    Discretization,
    GridField,
    InvalidIndexError,
    SpectralField,
    TWO_PI,
    max_wavenumber,
    noise_constant,
    wavenumbers,
)


@dataclass(frozen=True)
class OperatorSpec:
    """Fourier-multiplier operator: A acts on the k-frequency pair by a_k.

    ``alpha`` and ``beta`` are the recorded dissipativity constants; the
    discrete check is a_k <= -alpha k^2 + beta for 1 <= k <= kmax.
    """

    multiplier: Callable[[np.ndarray], np.ndarray]
    alpha: float
    beta: float = 0.0
    nu: Optional[float] = None
    a0: float = 0.0
    label: str = "custom"

    def values(self, kmax: int) -> np.ndarray:
        k = np.arange(kmax + 1, dtype=float)
        a = np.asarray(self.multiplier(k), dtype=float).copy()
        a[0] = self.a0
        return a

    def dissipativity_violations(self, kmax: int) -> list[str]:
        out = []
        if not self.alpha > 0:
            out.append(f"dissipativity requires alpha > 0, got {self.alpha}")
        a = self.values(kmax)
        for k in range(1, kmax + 1):
            bound = -self.alpha * k * k + self.beta
            if a[k] > bound + 1e-12 * max(1.0, abs(bound)):
                out.append(f"dissipativity fails at k={k}: a_k={a[k]:.6g} > {bound:.6g}")
        return out


def _laplacian_multiplier(k, nu):
    return -nu * k * k


def laplacian(nu: float = 0.1, a0: float = 0.0) -> OperatorSpec:
    """A = nu d_xx, optionally with a different multiplier a0 on the constant mode."""
    return OperatorSpec(multiplier=partial(_laplacian_multiplier, nu=nu), alpha=nu, beta=0.0,
                        nu=nu, a0=a0, label="laplacian")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "ito-euler-if"          # or "stratonovich-heun"
    dt: Optional[float] = None            # None: automatic from stability_dt
    safety: float = 0.25
    diag_stride: int = 1
    correction_form: str = "flux"         # or "pointwise"

    def __post_init__(self):
        if self.scheme not in ("ito-euler-if", "stratonovich-heun"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.correction_form not in ("flux", "pointwise"):
            raise ValueError(f"unknown correction form {self.correction_form!r}")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if self.diag_stride < 1:
            raise ValueError("diag_stride must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")


def default_psi0(m: int) -> SpectralField:
    """sin x + 0.5 cos 2x, as coordinates in H_m."""
    c = np.zeros(m)
    sp = math.sqrt(math.pi)
    if m >= 2:
        c[1] = sp
    if m >= 5:
        c[4] = 0.5 * sp
    return SpectralField(c)


@dataclass(frozen=True)
class ModelConfig:
    n: int = 2
    eps: float = 0.1
    m: int = 33
    N: int = 128
    op: OperatorSpec = field(default_factory=laplacian)
    shape: NoiseShape = field(default_factory=make_canonical)
    psi0: Optional[SpectralField] = None
    T: float = 0.5
    stepper: StepperConfig = field(default_factory=StepperConfig)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.N < 4 * (max_wavenumber(self.m) + 1):
            raise ValueError(f"N={self.N} violates the oversampling rule N >= 4(m//2 + 1)")
        if self.N & (self.N - 1):
            raise ValueError("N must be a power of two")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.psi0 is None:
            object.__setattr__(self, "psi0", default_psi0(self.m))
        elif self.psi0.m != self.m:
            raise ValueError(f"psi0 has {self.psi0.m} modes, config has m={self.m}")

    @property
    def n_modes(self) -> int:
        return 2 * self.n + 1

    @property
    def c_Q(self) -> float:
        return noise_constant(self.n)

    @property
    def kmax(self) -> int:
        return max_wavenumber(self.m)

    def with_(self, **kw) -> "ModelConfig":
        if "m" in kw and "psi0" not in kw:
            kw["psi0"] = None
        return replace(self, **kw)


# --- single-field operations ---------------------------------------------

def apply_A(f: SpectralField, op: OperatorSpec) -> SpectralField:
    a = op.values(max_wavenumber(f.m))
    return SpectralField(a[wavenumbers(f.m)] * f.coeffs)


def _grid_slopes(psi: SpectralField, cfg: ModelConfig):
    d = Discretization(psi.m, cfg.N)
    return d, d.synth_dx(psi.coeffs), d.synth_dxx(psi.coeffs)


def ito_correction(psi: SpectralField, cfg: ModelConfig) -> GridField:
    """c_Q |g'|^2(psi_x/eps) psi_xx / (2 eps^2) on the N-point grid."""
    _, ux, uxx = _grid_slopes(psi, cfg)
    z = ux / cfg.eps
    return GridField(cfg.c_Q * cfg.shape.gprime_sq(z) * uxx / (2.0 * cfg.eps**2))


def diffusion_row(psi: SpectralField, i: int, cfg: ModelConfig) -> SpectralField:
    """pi_m(g(psi_x/eps) e_i), evaluated on the oversampled grid."""
    if not 1 <= i <= cfg.n_modes:
        raise InvalidIndexError(f"noise mode {i} outside 1..{cfg.n_modes}")
    d, ux, _ = _grid_slopes(psi, cfg)
    e_i = Discretization(max(i, 1), cfg.N).E[i - 1]
    return SpectralField(d.project(cfg.shape.g(ux / cfg.eps) * e_i))


def weak_drift(psi: SpectralField, phi: SpectralField, cfg: ModelConfig) -> float:
    """(psi, A* phi) - (c_Q/2) (phi_x/eps, G(psi_x/eps)).

    A is a symmetric Fourier multiplier, so A* = A.
    """
    m = max(psi.m, phi.m)
    p = np.zeros(m); p[: psi.m] = psi.coeffs
    q = np.zeros(m); q[: phi.m] = phi.coeffs
    a = cfg.op.values(max_wavenumber(m))[wavenumbers(m)]
    linear = float(np.dot(p, a * q))
    d = Discretization(m, cfg.N)
    z = d.synth_dx(p) / cfg.eps
    phix = d.synth_dx(q)
    flux = d.quad(phix / cfg.eps * cfg.shape.G(z))
    return linear - 0.5 * cfg.c_Q * float(flux)


def strong_drift_pairing(psi: SpectralField, phi: SpectralField, cfg: ModelConfig) -> float:
    """(apply_A(psi) + ito_correction(psi), phi) by grid quadrature."""
    d = Discretization(psi.m, cfg.N)
    dphi = Discretization(phi.m, cfg.N)
    lin = d.synth(apply_A(psi, cfg.op).coeffs)
    corr = ito_correction(psi, cfg).values
    return float(d.quad((lin + corr) * dphi.synth(phi.coeffs)))


# --- batched kernel used by the integrator --------------------------------

class StateEval:
    """Grid quantities of one batch state, each computed at most once."""

    def __init__(self, kernel: "GalerkinKernel", C: np.ndarray):
        self.kernel = kernel
        self.C = C

    @cached_property
    def ux(self):
        return self.kernel.d.synth_dx(self.C)

    @cached_property
    def uxx(self):
        return self.kernel.d.synth_dxx(self.C)

    @cached_property
    def z(self):
        return self.ux / self.kernel.eps

    @cached_property
    def gz(self):
        return self.kernel.shape.g(self.z)

    @cached_property
    def Gz(self):
        return self.kernel.shape.G(self.z)


class GalerkinKernel:
    """Precomputed operators for evaluating the Galerkin right-hand side on a
    batch of coefficient rows ``C`` with shape (B, m)."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.d = Discretization(cfg.m, cfg.N)
        self.a = cfg.op.values(cfg.kmax)[self.d.k]
        self.eps = cfg.eps
        self.c_Q = cfg.c_Q
        self.shape = cfg.shape
        S = cfg.n_modes
        noise = Discretization(max(S, 1), cfg.N)
        self.E_noise = noise.E[:S]     # (S, N)
        self.dE_noise = noise.dE[:S]
        self.gamma = cfg.shape.gamma if cfg.shape.regime == "power" else 1.0

    def evaluate(self, C) -> StateEval:
        return StateEval(self, np.asarray(C, dtype=float))

    def exp_A(self, dt: float) -> np.ndarray:
        return np.exp(self.a * dt)

    def correction(self, ev: StateEval, form: str = "flux"):
        """Coefficients of pi_m of the Ito correction drift."""
        if form == "flux":
            # |g'|^2(z) psi_xx / eps^2 = d_x G(psi_x/eps) / eps; differentiate after projecting
            return (0.5 * self.c_Q / self.eps) * self.d.deriv(self.d.project(ev.Gz))
        return self.d.project(self.c_Q * self.shape.gprime_sq(ev.z) * ev.uxx / (2.0 * self.eps**2))

    def noise_field(self, dW):
        """sum_i dW_i e_i on the grid; dW has shape (B, S)."""
        return dW @ self.E_noise

    def diffusion(self, ev: StateEval, dW):
        return self.d.project(ev.gz * self.noise_field(dW))

    def diffusion_sum(self, ev: StateEval):
        """sum_i |pi_m(g e_i)|^2 per row."""
        rows = (ev.gz[:, None, :] * self.E_noise) @ self.d.P
        return np.sum(rows * rows, axis=(1, 2))

    def work_A(self, C):
        """(A psi, psi) per row."""
        return np.sum(self.a * C * C, axis=-1)

    def dissipation(self, ev: StateEval):
        """int (psi_x/eps) G(psi_x/eps) dx per row."""
        return self.d.quad(ev.z * ev.Gz)
