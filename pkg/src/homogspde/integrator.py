"""Time stepping of the Galerkin system with counter-based noise.

Default scheme ("ito-euler-if"): the linear operator is applied exactly
through exp(a_k dt), the Ito correction drift and the noise explicitly:

    C_{j+1} = exp(a dt) * (C_j + dt * corr(C_j) + pi_m(g(psi_x/eps) dW^Q))

"stratonovich-heun" integrates the Stratonovich form (no correction drift)
with a Heun predictor formed pointwise on the collocation grid, and exists
as an independent check on the Ito correction constant.

Noise: trajectory (master_seed, index) owns the Philox stream keyed by that
pair; step j reads the j-th block of 4 * ceil((2n+1)/4) words, each mapped
to a standard normal by the inverse CDF, so any increment can be regenerated
from (seed, step) alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .estimators import TrajectoryDiagnostics
from .model import GalerkinKernel, ModelConfig, StateEval, StepperConfig  # noqa: F401  (re-export)
from .spectral import SpectralField

DT_FLOOR = 1e-9
_HALF_ULP = 2.0**-54


class BlowUpError(FloatingPointError):
    """State became non-finite; carries the step index and partial diagnostics."""

    def __init__(self, step: int, diagnostics: Optional[TrajectoryDiagnostics] = None,
                 message: str = ""):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrajectorySeed:
    master_seed: int
    trajectory_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        if not 0 <= self.trajectory_index < 2**64:
            raise ValueError("trajectory_index must be a nonnegative 64-bit integer")


# --- noise ----------------------------------------------------------------

def _words_per_step(n_modes: int) -> int:
    return 4 * max(1, math.ceil(n_modes / 4))


def _generator(seed: TrajectorySeed, first_step: int, n_modes: int) -> Generator:
    bg = Philox(key=np.array([seed.master_seed, seed.trajectory_index], dtype=np.uint64))
    if first_step:
        bg.advance(first_step * _words_per_step(n_modes) // 4)
    return Generator(bg)


def standard_normals(seed: TrajectorySeed, first_step: int, count: int, n_modes: int) -> np.ndarray:
    """Standard normals for steps first_step .. first_step+count-1, shape (count, n_modes)."""
    W = _words_per_step(n_modes)
    u = _generator(seed, first_step, n_modes).random((count, W))[:, :n_modes]
    return ndtri(u + _HALF_ULP)


def noise_increment(seed: TrajectorySeed, step: int, dt: float, n_modes: int) -> np.ndarray:
    """Brownian increments of the 2n+1 noise modes over step ``step``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return math.sqrt(dt) * standard_normals(seed, step, 1, n_modes)[0]


class BatchNoise:
    """Lock-step increment source for a batch of trajectories.

    ``refine = r`` makes each step sum 2**r consecutive fine draws, so runs at
    dt and dt / 2**r see the same Brownian path.
    """

    def __init__(self, seeds: Sequence[TrajectorySeed], n_modes: int, refine: int = 0,
                 chunk: int = 512, zero: bool = False):
        self.seeds = list(seeds)
        self.S = n_modes
        self.sub = 2**refine
        self.chunk = chunk
        self.zero = zero
        self.W = _words_per_step(n_modes)
        self.gens = [_generator(s, 0, n_modes) for s in self.seeds]
        self.buf = np.empty((len(self.seeds), 0, n_modes))
        self.pos = 0

    def _fill(self, need: int):
        count = max(need, self.chunk)
        fresh = np.stack([g.random((count, self.W))[:, : self.S] for g in self.gens])
        self.buf = np.concatenate([self.buf[:, self.pos:], ndtri(fresh + _HALF_ULP)], axis=1)
        self.pos = 0

    def next(self, dt: float) -> np.ndarray:
        B = len(self.seeds)
        if self.zero:
            return np.zeros((B, self.S))
        if self.buf.shape[1] - self.pos < self.sub:
            self._fill(self.sub)
        z = self.buf[:, self.pos: self.pos + self.sub]
        self.pos += self.sub
        return math.sqrt(dt / self.sub) * np.sum(z, axis=1)


# --- step size -------------------------------------------------------------

def _nu_eff(cfg: ModelConfig) -> float:
    if cfg.op.nu is not None:
        return cfg.op.nu
    k = np.arange(1, cfg.kmax + 1)
    a = cfg.op.values(cfg.kmax)[1:]
    return float(max(0.0, np.max(-a / k**2))) if k.size else 0.0


def max_slope(cfg: ModelConfig, C=None) -> float:
    """max |psi_x| / eps over the grid (and batch rows)."""
    k = GalerkinKernel(cfg)
    C = cfg.psi0.coeffs if C is None else C
    return float(np.max(np.abs(k.d.synth_dx(C)))) / cfg.eps


def diffusivity(cfg: ModelConfig, z_cap: Optional[float] = None) -> float:
    """D_max = nu + c_Q sup|g'|^2 / (2 eps^2)."""
    if cfg.shape.regime == "power" and z_cap is None:
        z_cap = max_slope(cfg)
    sup = cfg.shape.diffusivity_bound(math.inf if z_cap is None else z_cap)
    return _nu_eff(cfg) + cfg.c_Q * sup / (2.0 * cfg.eps**2)


def _power_diffusivity(cfg: ModelConfig, z: np.ndarray) -> np.ndarray:
    g = cfg.shape.gamma
    return _nu_eff(cfg) + cfg.c_Q * g * g * z ** (2 * g - 2) / (2.0 * cfg.eps**2)


def stability_dt(cfg: ModelConfig, z_cap: Optional[float] = None) -> float:
    """safety * 2 / (D_max * kmax^2).

    For the power regime sup|g'|^2 is taken over |z| <= z_cap, defaulting to
    the largest initial slope.
    """
    kmax = max(cfg.kmax, 1)
    return cfg.stepper.safety * 2.0 / (diffusivity(cfg, z_cap) * kmax**2)


def resolve_dt(cfg: ModelConfig) -> tuple[int, float]:
    """(number of steps, step size) covering [0, T] exactly with dt <= requested."""
    dt = cfg.stepper.dt if cfg.stepper.dt is not None else stability_dt(cfg)
    if cfg.T == 0:
        return 0, dt
    n = math.ceil(cfg.T / dt - 1e-9)
    return n, cfg.T / n


# --- single step -------------------------------------------------------------

def advance(kernel: GalerkinKernel, C: np.ndarray, dW: np.ndarray, dt: float,
            scheme: str = "ito-euler-if", form: str = "flux", ev: Optional[StateEval] = None) -> np.ndarray:
    """One step on a batch of coefficient rows C (B, m) with increments dW (B, S)."""
    ev = kernel.evaluate(C) if ev is None else ev
    expA = kernel.exp_A(dt)
    noise = kernel.noise_field(dW)
    if scheme == "ito-euler-if":
        return expA * (C + dt * kernel.correction(ev, form) + kernel.d.project(ev.gz * noise))
    if scheme == "stratonovich-heun":
        shape, eps = kernel.shape, kernel.eps
        dnoise = dW @ kernel.dE_noise
        # d_x of the Euler predictor, by the chain rule on the grid
        ux_pred = (ev.ux + dt * kernel.d.synth_dx(kernel.a * C)
                   + shape.gprime(ev.z) * ev.uxx / eps * noise + ev.gz * dnoise)
        g_pred = shape.g(ux_pred / eps)
        return expA * (C + kernel.d.project(0.5 * (ev.gz + g_pred) * noise))
    raise ValueError(f"unknown scheme {scheme!r}")


def step(psi: SpectralField, cfg: ModelConfig, seed: TrajectorySeed, step_index: int,
         dt: Optional[float] = None) -> SpectralField:
    """Advance psi by one step of the configured scheme using the noise of
    ``step_index`` from ``seed``'s stream."""
    if dt is None:
        dt = resolve_dt(cfg)[1]
    kernel = GalerkinKernel(cfg)
    dW = noise_increment(seed, step_index, dt, cfg.n_modes)[None, :]
    out = advance(kernel, psi.coeffs[None, :], dW, dt, cfg.stepper.scheme,
                  cfg.stepper.correction_form)[0]
    if not np.all(np.isfinite(out)):
        raise BlowUpError(step_index)
    return SpectralField(out)


# --- trajectories ------------------------------------------------------------

class _Recorder:
    def __init__(self, kernel: GalerkinKernel, B: int):
        self.k = kernel
        self.rows = []
        self.acc = np.zeros((5, B))
        self.prev = None

    def accumulate(self, ev: StateEval, dt: float):
        """Trapezoidal update of the running time integrals over one (sub)step."""
        k = self.k
        aux = np.abs(ev.ux)
        f = np.stack([k.work_A(ev.C), k.dissipation(ev), k.diffusion_sum(ev),
                      k.d.quad(aux), k.d.quad(aux ** (2.0 * k.gamma))])
        if self.prev is not None:
            self.acc += 0.5 * dt * (self.prev + f)
        self.prev = f

    def record(self, t: float, ev: StateEval):
        d = self.k.d
        C, aux = ev.C, np.abs(ev.ux)
        self.rows.append((
            t,
            np.sum(C * C, axis=-1),
            np.sum((d.k * C) ** 2, axis=-1),
            d.quad(aux),
            d.quad(aux ** (2.0 * self.k.gamma)),
            C[:, 0] / math.sqrt(2.0 * math.pi),
            *(a.copy() for a in self.acc),
        ))

    def diagnostics(self, b, seed, eps, final_state=None, final_noise=None, failed=None):
        cols = list(zip(*self.rows))
        times = np.array(cols[0])
        series = [np.array([r[b] for r in col]) for col in cols[1:]]
        return TrajectoryDiagnostics(times, *series, seed=(seed.master_seed, seed.trajectory_index),
                                     eps=eps, final_state=final_state,
                                     final_noise=final_noise, failed_step=failed)


@dataclass
class BatchResult:
    completed: list          # TrajectoryDiagnostics of finished trajectories, index order
    failed: list             # (trajectory_index, step, partial TrajectoryDiagnostics)
    dt: float
    n_steps: int
    halvings: int = 0


def simulate_batch(cfg: ModelConfig, seeds: Sequence[TrajectorySeed], *, dt: Optional[float] = None,
                   refine: int = 0, zero_noise: bool = False) -> BatchResult:
    """Integrate a batch of trajectories in lock step.

    ``dt`` overrides the configured step (used for common random numbers
    across eps and for dt-refinement studies with ``refine``).  A trajectory
    whose state turns non-finite is frozen, reported in ``failed`` with its
    partial diagnostics, and excluded from the rest of the run.
    """
    kernel = GalerkinKernel(cfg)
    B = len(seeds)
    C = np.tile(cfg.psi0.coeffs, (B, 1))
    if dt is None:
        n_steps, dt = resolve_dt(cfg)
    else:
        n_steps = 0 if cfg.T == 0 else math.ceil(cfg.T / dt - 1e-9)
        dt = cfg.T / n_steps if n_steps else dt
    noise = BatchNoise(seeds, cfg.n_modes, refine=refine, zero=zero_noise)
    scheme, form = cfg.stepper.scheme, cfg.stepper.correction_form
    stride = cfg.stepper.diag_stride
    power = cfg.shape.regime == "power"
    kmax2 = max(cfg.kmax, 1) ** 2
    cfl = 2.0 * cfg.stepper.safety
    rec = _Recorder(kernel, B)
    alive = np.ones(B, dtype=bool)
    failed_at = np.full(B, -1)
    W_total = np.zeros((B, cfg.n_modes))
    halvings = 0

    ev = kernel.evaluate(C)
    rec.accumulate(ev, 0.0)
    rec.record(0.0, ev)
    for j in range(1, n_steps + 1):
        if power:
            # substeps of dt / 2**level; the level rises whenever the
            # slope-dependent CFL bound is violated and resets at the next
            # base step so that dt recovers once slopes come down
            level, remaining = 0, 1.0
            while remaining > 0 and alive.any():
                zrow = np.max(np.abs(ev.ux), axis=-1) / cfg.eps
                # rows that would need a substep below the floor fail alone
                hopeless = alive & (DT_FLOOR * _power_diffusivity(cfg, zrow) * kmax2 > cfl)
                if hopeless.any():
                    alive[hopeless] = False
                    failed_at[hopeless] = j
                    C = np.where(alive[:, None], C, 0.0)
                    ev = kernel.evaluate(C)
                    if not alive.any():
                        break
                zc = float(np.max(zrow[alive]))
                while (dt / 2**level) * diffusivity(cfg, zc) * kmax2 > cfl:
                    level += 1
                    halvings += 1
                frac = min(1.0 / 2**level, remaining)
                h = dt * frac
                dW = noise.next(h)
                W_total += dW
                C = advance(kernel, C, dW, h, scheme, form, ev)
                C = _screen(C, alive, failed_at, j)
                ev = kernel.evaluate(C)
                rec.accumulate(ev, h)
                remaining -= frac
        else:
            dW = noise.next(dt)
            W_total += dW
            C = advance(kernel, C, dW, dt, scheme, form, ev)
            C = _screen(C, alive, failed_at, j)
            ev = kernel.evaluate(C)
            rec.accumulate(ev, dt)
        if j % stride == 0 or j == n_steps:
            rec.record(j * dt, ev)
        if not alive.any():
            break

    completed, failed = [], []
    for b, s in enumerate(seeds):
        if alive[b]:
            completed.append(rec.diagnostics(b, s, cfg.eps, C[b].copy(), W_total[b].copy()))
        else:
            d = rec.diagnostics(b, s, cfg.eps, failed=int(failed_at[b]))
            keep = max(1, int(np.sum(d.times < failed_at[b] * dt - 0.5 * dt)))
            failed.append((s.trajectory_index, int(failed_at[b]), d.truncated(keep)))
    return BatchResult(completed, failed, dt, n_steps, halvings)


def _screen(C, alive, failed_at, j):
    """Freeze rows that became non-finite (or exploded past 1e150)."""
    bad = alive & ~np.all(np.isfinite(C) & (np.abs(C) < 1e150), axis=-1)
    if bad.any():
        alive[bad] = False
        failed_at[bad] = j
    if not alive.all():
        C = np.where(alive[:, None], C, 0.0)
    return C


def simulate(cfg: ModelConfig, seed: TrajectorySeed, **kw) -> TrajectoryDiagnostics:
    """Integrate one trajectory to T; deterministic in (cfg, seed)."""
    res = simulate_batch(cfg, [seed], **kw)
    if res.failed:
        _, j, partial = res.failed[0]
        raise BlowUpError(j, partial)
    return res.completed[0]
