"""Diagnostic functionals per trajectory and Monte Carlo statistics over ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

Z95 = 1.959963984540054


class AlignmentError(ValueError):
    """Trajectories do not share a common time axis."""


class DegenerateFitError(ValueError):
    pass


@dataclass
class TrajectoryDiagnostics:
    """Recorded series for one trajectory.

    Ledger series are cumulative time integrals from 0 to each record time:
    ``work_A`` = int (A psi, psi) ds, ``dissipation`` = int int (psi_x/eps)
    G(psi_x/eps) dx ds, ``diffusion_input`` = int sum_i |pi_m(g e_i)|^2 ds.
    ``grad_l1_int`` and ``grad_l2g_int`` integrate the gradient functionals
    at step resolution; when absent, integrals fall back to the trapezoid
    over the record times.
    """

    times: np.ndarray
    l2_sq: np.ndarray
    h1_sq: np.ndarray
    grad_l1: np.ndarray
    grad_l2g: np.ndarray
    mean: np.ndarray
    work_A: np.ndarray
    dissipation: np.ndarray
    diffusion_input: np.ndarray
    grad_l1_int: Optional[np.ndarray] = None
    grad_l2g_int: Optional[np.ndarray] = None
    seed: tuple = (0, 0)
    eps: float = math.nan
    final_state: Optional[np.ndarray] = None
    final_noise: Optional[np.ndarray] = None
    failed_step: Optional[int] = None

    @property
    def energy_ledger(self) -> dict:
        return {
            "l2_sq": self.l2_sq,
            "work_A": self.work_A,
            "dissipation": self.dissipation,
            "l2_sq0": np.full_like(self.l2_sq, self.l2_sq[0]),
            "diffusion_input": self.diffusion_input,
        }

    def truncated(self, n: int) -> "TrajectoryDiagnostics":
        cut = {k: getattr(self, k)[:n] for k in SERIES if getattr(self, k) is not None}
        return TrajectoryDiagnostics(**cut, seed=self.seed, eps=self.eps,
                                     final_state=None, final_noise=None,
                                     failed_step=self.failed_step)


SERIES = ("times", "l2_sq", "h1_sq", "grad_l1", "grad_l2g", "mean",
          "work_A", "dissipation", "diffusion_input", "grad_l1_int", "grad_l2g_int")


@dataclass
class SeriesStat:
    times: np.ndarray
    mean: np.ndarray
    ci_half: np.ndarray
    count: int


@dataclass
class EnsembleSummary:
    functionals: dict = field(default_factory=dict)   # name -> SeriesStat
    I: dict = field(default_factory=dict)             # eps -> (value, ci_half)
    fits: list = field(default_factory=list)
    martingale: Optional[dict] = None
    excluded: int = 0


def mean_ci(samples, axis: int = 0):
    """Sample mean and 95% normal-approximation half-width along ``axis``."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[axis]
    mu = np.mean(x, axis=axis)
    if n < 2:
        return mu, np.full_like(mu, np.inf)
    sd = np.std(x, axis=axis, ddof=1)
    return mu, Z95 * sd / math.sqrt(n)


def _stack(ens: Sequence[TrajectoryDiagnostics], name: str) -> np.ndarray:
    if not ens:
        raise ValueError("empty ensemble")
    # fixed reduction order: results do not depend on how the list was assembled
    ens = sorted(ens, key=lambda d: tuple(d.seed))
    t0 = ens[0].times
    for d in ens[1:]:
        if d.times.shape != t0.shape or not np.array_equal(d.times, t0):
            raise AlignmentError("trajectories have different time axes")
    return np.stack([getattr(d, name) for d in ens])


def series_stat(ens, name: str) -> SeriesStat:
    X = _stack(ens, name)
    mu, ci = mean_ci(X)
    return SeriesStat(ens[0].times, mu, ci, len(ens))


def _trapezoid_rows(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if t.size < 2:
        return np.zeros(y.shape[0])
    return np.sum(0.5 * (y[:, 1:] + y[:, :-1]) * np.diff(t), axis=-1)


def time_integral(ens, name: str):
    """Trapezoidal time integral of the ensemble mean of ``name`` with its CI.

    The CI comes from the spread of per-trajectory integrals, which is the
    correct propagation since the integral is linear in the series.
    """
    cumulative = name + "_int"
    if all(getattr(d, cumulative, None) is not None for d in ens):
        per_traj = _stack(ens, cumulative)[:, -1]
    else:
        per_traj = _trapezoid_rows(_stack(ens, name), ens[0].times)
    mu, ci = mean_ci(per_traj)
    return float(mu), float(ci)


def gradient_l1_integral(ens):
    """int_0^T E |psi_x|_{L^1} ds, with 95% half-width."""
    return time_integral(ens, "grad_l1")


def gradient_power_integral(ens):
    """int_0^T E |psi_x|^{2 gamma}_{L^{2 gamma}} ds, with 95% half-width."""
    return time_integral(ens, "grad_l2g")


def energy_expression(ens, c_Q: float) -> np.ndarray:
    """Per-trajectory |psi|^2(t) - 2 int (A psi, psi) + c_Q int int z G(z)."""
    return (_stack(ens, "l2_sq") - 2.0 * _stack(ens, "work_A")
            + c_Q * _stack(ens, "dissipation"))


def energy_balance(ens, c_Q: float) -> SeriesStat:
    """Residual LHS(t) - RHS(t) of the Ito energy identity.

    LHS is ``energy_expression``; RHS is |psi_0|^2 + int sum_i |pi_m(g e_i)|^2.
    The residual has mean zero up to the time discretization error.
    """
    lhs = energy_expression(ens, c_Q)
    rhs = _stack(ens, "l2_sq")[:, :1] + _stack(ens, "diffusion_input")
    mu, ci = mean_ci(lhs - rhs)
    return SeriesStat(ens[0].times, mu, ci, len(ens))


def energy_sandwich(ens, c_Q: float, n_modes: int, sup_g: float) -> dict:
    """Check the energy expression between |psi_0|^2 and
    |psi_0|^2 + (2n+1) sup|g|^2 t at every record, up to 3 CI half-widths."""
    lhs = energy_expression(ens, c_Q)
    mu, ci = mean_ci(lhs)
    t = ens[0].times
    e0 = float(np.mean(_stack(ens, "l2_sq")[:, 0]))
    # rounding allowance: at t = 0 the CI is exactly zero
    slack = 3.0 * ci + 1e-12 * max(1.0, abs(e0))
    lower = e0 - slack
    upper = e0 + n_modes * sup_g**2 * t + slack
    return {
        "times": t, "mean": mu, "ci_half": ci, "lower": lower, "upper": upper,
        "lower_ok": bool(np.all(mu >= lower)), "upper_ok": bool(np.all(mu <= upper)),
    }


def mean_martingale(ens, s_idx=None, t_idx=None) -> dict:
    """Ensemble mean of M(t) = (1/2pi) int psi, the conserved-mean check, and
    sample correlations of M(t) - M(s) with M(s) over (s, t) index pairs.

    Pairs default to a 5 x 5 grid: s at record fractions 0.1..0.5 of the
    horizon and t at 0.6..1.0.
    """
    M = _stack(ens, "mean")
    mu, ci = mean_ci(M)
    t = ens[0].times
    m0 = float(np.mean(M[:, 0]))
    if s_idx is None or t_idx is None:
        n = t.size - 1
        s_idx = [round(n * f / 10) for f in (1, 2, 3, 4, 5)]
        t_idx = [round(n * f / 10) for f in (6, 7, 8, 9, 10)]
    pairs = []
    for si in s_idx:
        for ti in t_idx:
            if ti <= si:
                continue
            a = M[:, ti] - M[:, si]
            b = M[:, si]
            sa, sb = np.std(a), np.std(b)
            corr = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb)) if sa > 0 and sb > 0 else 0.0
            pairs.append((float(t[si]), float(t[ti]), corr))
    bound = 3.0 / math.sqrt(len(ens))
    dev = np.abs(mu - m0)
    return {
        "times": t, "mean": mu, "ci_half": ci, "M0": m0,
        "mean_ok": bool(np.all(dev <= 3.0 * ci + 1e-12 * max(1.0, abs(m0)))),
        "pairs": pairs, "bound": bound,
        "orthogonal_ok": bool(all(abs(c) <= bound for _, _, c in pairs)),
    }


def scaling_fit(I_values: dict, expected_slope: float, min_span: float = 4.0) -> dict:
    """Least-squares slope of log I against log eps.

    ``I_values`` maps eps to (I, ci_half) or to a bare I.  ``pass`` requires
    slope >= 0.7 * expected_slope and I nonincreasing as eps decreases,
    allowing overlap within the CI.
    """
    if len(I_values) < 3:
        raise ValueError("need at least 3 eps values")
    eps = np.array(sorted(I_values), dtype=float)
    vals = [I_values[e] for e in eps]
    I = np.array([v[0] if isinstance(v, tuple) else v for v in vals], dtype=float)
    ci = np.array([v[1] if isinstance(v, tuple) else 0.0 for v in vals], dtype=float)
    if eps.max() / eps.min() < min_span * (1 - 1e-12):
        raise ValueError(f"eps grid must span at least a factor of {min_span:g}")
    if np.any(I <= 0) or not np.all(np.isfinite(I)):
        raise DegenerateFitError("scaling fit needs positive finite I values")
    x, y = np.log(eps), np.log(I)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    # eps ascending: I must not decrease beyond the combined CI
    monotone = bool(np.all(I[1:] + ci[1:] + ci[:-1] >= I[:-1]))
    strict = bool(np.all(I[1:] > I[:-1]))
    return {
        "eps": eps, "I": I, "ci_half": ci, "slope": float(slope), "intercept": float(intercept),
        "r2": float(r2), "monotone": monotone, "strictly_monotone": strict,
        "pass": bool(slope >= 0.7 * expected_slope and monotone),
    }
