import math

import numpy as np
import pytest

from homogspde.coefficients import make_canonical, make_constant, make_power
from homogspde.integrator import (
    BatchNoise,
    BlowUpError,
    TrajectorySeed,
    advance,
    diffusivity,
    noise_increment,
    resolve_dt,
    simulate,
    simulate_batch,
    stability_dt,
    standard_normals,
    step,
)
from homogspde.model import GalerkinKernel, ModelConfig, StepperConfig, laplacian
from homogspde.spectral import SpectralField

SQPI = math.sqrt(math.pi)
SMALL = dict(n=1, m=9, N=32)


def test_stability_dt_canonical_default():
    cfg = ModelConfig(n=2, eps=0.1, m=33)
    assert diffusivity(cfg) == pytest.approx(0.1 + 5 / (2 * math.pi) / 0.02, rel=1e-12)
    assert diffusivity(cfg) == pytest.approx(39.9, abs=0.05)
    assert stability_dt(cfg) == pytest.approx(4.9e-5, rel=0.01)
    assert stability_dt(cfg.with_(eps=0.05)) / stability_dt(cfg) == pytest.approx(0.25, rel=0.01)


def test_stability_dt_constant_shape_is_linear_cfl():
    cfg = ModelConfig(shape=make_constant(1.0))
    assert diffusivity(cfg) == pytest.approx(0.1)
    assert stability_dt(cfg) == pytest.approx(0.25 * 2 / (0.1 * 16**2))


def test_stability_dt_power_uses_slope_cap():
    cfg = ModelConfig(shape=make_power(2.0), eps=0.2)
    d1 = diffusivity(cfg, z_cap=1.0)
    assert d1 == pytest.approx(0.1 + cfg.c_Q * 4 / (2 * 0.04))
    assert stability_dt(cfg, z_cap=2.0) < stability_dt(cfg, z_cap=1.0)


def test_noise_increment_moments():
    seed = TrajectorySeed(123, 4)
    dt = 0.01
    z = math.sqrt(dt) * standard_normals(seed, 0, 100_000, 5)
    x = z[:, 0]
    assert abs(x.mean()) <= 3 * math.sqrt(dt / 1e5)
    assert x.var() == pytest.approx(dt, rel=0.05)
    # modes are uncorrelated
    assert abs(np.corrcoef(z.T)[0, 1]) < 0.02


def test_noise_increment_is_a_counter():
    seed = TrajectorySeed(99, 7)
    block = standard_normals(seed, 0, 40, 5)
    for k in (0, 1, 17, 39):
        np.testing.assert_array_equal(noise_increment(seed, k, 1.0, 5), block[k])
    np.testing.assert_array_equal(noise_increment(seed, 3, 0.5, 5), noise_increment(seed, 3, 0.5, 5))
    assert not np.array_equal(noise_increment(TrajectorySeed(99, 8), 3, 0.5, 5),
                              noise_increment(seed, 3, 0.5, 5))
    with pytest.raises(ValueError):
        noise_increment(seed, 0, 0.0, 5)
    with pytest.raises(ValueError):
        TrajectorySeed(-1, 0)


def test_batch_noise_matches_counter_and_refines():
    seeds = [TrajectorySeed(5, i) for i in range(3)]
    bn = BatchNoise(seeds, 3, chunk=4)
    draws = np.stack([bn.next(0.25) for _ in range(10)], axis=1)
    for b, s in enumerate(seeds):
        np.testing.assert_allclose(draws[b], 0.5 * standard_normals(s, 0, 10, 3), rtol=1e-15)
    fine = BatchNoise(seeds, 3)
    coarse = BatchNoise(seeds, 3, refine=2)
    f = sum(fine.next(0.1) for _ in range(4))
    np.testing.assert_allclose(coarse.next(0.4), f, rtol=1e-12, atol=1e-15)


def test_step_zero_noise_is_exact_heat_decay():
    cfg = ModelConfig(**SMALL, shape=make_constant(1.0))
    kernel = GalerkinKernel(cfg)
    c = np.arange(1.0, 10.0)
    dt = 0.013
    out = advance(kernel, c[None], np.zeros((1, 3)), dt)[0]
    k = np.arange(1, 10) // 2
    np.testing.assert_allclose(out, c * np.exp(-0.1 * k**2 * dt), rtol=1e-15)


def test_step_constant_shape_is_ou_transition():
    cfg = ModelConfig(**SMALL, shape=make_constant(0.8))
    seed = TrajectorySeed(1, 2)
    psi = SpectralField(np.r_[0.0, SQPI, np.zeros(7)])
    dt = 0.01
    out = step(psi, cfg, seed, 5, dt=dt)
    dW = noise_increment(seed, 5, dt, 3)
    decay = math.exp(-0.1 * dt)
    assert out.coeffs[1] == pytest.approx(decay * (SQPI + 0.8 * dW[1]), rel=1e-13)
    assert out.coeffs[0] == pytest.approx(0.8 * dW[0], rel=1e-13)
    assert out.coeffs[2] == pytest.approx(decay * 0.8 * dW[2], rel=1e-13)
    np.testing.assert_allclose(out.coeffs[3:], 0.0, atol=1e-15)


def test_critical_profile_is_a_fixed_point():
    cfg = ModelConfig(**SMALL, psi0=SpectralField(np.r_[2.5, np.zeros(8)]), T=0.05)
    for scheme in ("ito-euler-if", "stratonovich-heun"):
        d = simulate(cfg.with_(stepper=StepperConfig(scheme=scheme)), TrajectorySeed(0, 0))
        np.testing.assert_array_equal(d.final_state, cfg.psi0.coeffs)


def test_step_blowup():
    cfg = ModelConfig(**SMALL, shape=make_power(3.0))
    with np.errstate(all="ignore"):
        with pytest.raises(BlowUpError) as err:
            step(SpectralField(np.full(9, 1e120)), cfg, TrajectorySeed(0, 0), 11, dt=1e-3)
    assert err.value.step == 11


def test_simulate_T0_and_step_count():
    cfg = ModelConfig(**SMALL, T=0.0)
    d = simulate(cfg, TrajectorySeed(0, 0))
    assert d.times.tolist() == [0.0]
    cfg = ModelConfig(**SMALL, T=0.1, stepper=StepperConfig(dt=0.003, diag_stride=5))
    n, dt = resolve_dt(cfg)
    assert n == math.ceil(0.1 / 0.003) and dt <= 0.003
    d = simulate(cfg, TrajectorySeed(0, 0))
    assert d.times[-1] == pytest.approx(0.1)
    assert len(d.times) == 1 + n // 5 + (n % 5 != 0)


def test_simulate_is_deterministic():
    cfg = ModelConfig(**SMALL, T=0.05)
    a = simulate(cfg, TrajectorySeed(8, 3))
    b = simulate(cfg, TrajectorySeed(8, 3))
    for name in ("l2_sq", "grad_l1", "mean", "work_A", "dissipation"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(a.final_state, b.final_state)


def test_batch_equals_individual_runs():
    cfg = ModelConfig(**SMALL, T=0.05)
    seeds = [TrajectorySeed(8, i) for i in range(4)]
    batch = simulate_batch(cfg, seeds).completed
    for s, d in zip(seeds, batch):
        np.testing.assert_allclose(simulate(cfg, s).final_state, d.final_state, rtol=1e-12, atol=1e-14)


def test_failed_trajectory_is_isolated(monkeypatch):
    cfg = ModelConfig(**SMALL, T=0.02, stepper=StepperConfig(dt=0.001))
    original = BatchNoise.next
    calls = {"n": 0}

    def poisoned(self, dt):
        out = original(self, dt)
        calls["n"] += 1
        if calls["n"] == 4:
            out[1] = np.inf
        return out

    monkeypatch.setattr(BatchNoise, "next", poisoned)
    with np.errstate(all="ignore"):
        res = simulate_batch(cfg, [TrajectorySeed(0, i) for i in range(3)])
    assert [f[0] for f in res.failed] == [1]
    assert res.failed[0][1] == 4
    assert [d.seed[1] for d in res.completed] == [0, 2]
    monkeypatch.undo()
    clean = simulate_batch(cfg, [TrajectorySeed(0, 0), TrajectorySeed(0, 2)]).completed
    np.testing.assert_allclose(res.completed[1].final_state, clean[1].final_state, rtol=1e-12)


def test_power_case_substeps_survive_large_base_step():
    cfg = ModelConfig(**SMALL, shape=make_power(2.0), eps=0.3, T=0.02)
    res = simulate_batch(cfg, [TrajectorySeed(2, i) for i in range(3)], dt=0.01)
    assert not res.failed and res.halvings > 0
    assert np.all(np.isfinite(res.completed[0].final_state))


def test_power_case_floor_fails_only_hopeless_rows():
    c = np.zeros(9)
    c[1] = 3000.0
    cfg = ModelConfig(**SMALL, shape=make_power(2.0), eps=0.3, T=0.01, psi0=SpectralField(c))
    res = simulate_batch(cfg, [TrajectorySeed(2, 0)], dt=0.005)
    assert [f[0] for f in res.failed] == [0]
    with pytest.raises(BlowUpError):
        simulate(cfg, TrajectorySeed(2, 0), dt=0.005)


def test_ito_and_stratonovich_agree_as_dt_shrinks():
    base = ModelConfig(n=1, m=9, N=32, eps=0.5, T=0.1,
                       stepper=StepperConfig(correction_form="pointwise", diag_stride=10**6))
    seeds = [TrajectorySeed(11, i) for i in range(16)]
    dt0 = stability_dt(base) / 16
    gaps = []
    for r in range(3):
        out = [np.stack([d.final_state for d in simulate_batch(
            base.with_(stepper=StepperConfig(scheme=s, correction_form="pointwise", diag_stride=10**6)),
            seeds, dt=dt0 / 2**r, refine=2 - r).completed]) for s in ("ito-euler-if", "stratonovich-heun")]
        gaps.append(np.sqrt(np.mean(np.sum((out[0] - out[1]) ** 2, axis=1))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_weak_form_residual_shrinks_with_dt():
    cfg = ModelConfig(n=1, m=9, N=32, eps=0.5, T=0.1)
    k = GalerkinKernel(cfg)
    phis = np.zeros((3, 9))
    phis[0, 1], phis[1, 4], phis[2, 5], phis[2, 2] = 1.0, 1.0, 0.5, 1.0
    phix, phiv = k.d.synth_dx(phis), k.d.synth(phis)
    seeds = [TrajectorySeed(3, i) for i in range(32)]
    R = 4
    rms = []
    for r in (0, 2, 4):
        n = 2**r * 20
        dt = cfg.T / n
        noise = BatchNoise(seeds, 3, refine=R - r)
        C = np.tile(cfg.psi0.coeffs, (32, 1))
        C0, acc = C.copy(), np.zeros((32, 3))
        for _ in range(n):
            ev, dW = k.evaluate(C), noise.next(dt)
            drift = C @ (k.a * phis).T - 0.5 * cfg.c_Q * k.d.quad(ev.Gz[:, None] * phix[None] / cfg.eps)
            acc += dt * drift + k.d.quad((ev.gz * k.noise_field(dW))[:, None] * phiv[None])
            C = advance(k, C, dW, dt, ev=ev)
        rms.append(np.sqrt(np.mean(((C - C0) @ phis.T - acc) ** 2)))
    # O(dt^{1/2}) or better: two halvings shrink it by at least a factor 2
    assert rms[1] <= rms[0] / 2 and rms[2] <= rms[1] / 2


def test_stepper_config_validation():
    for bad in (dict(scheme="rk4"), dict(correction_form="x"), dict(safety=0.0),
                dict(diag_stride=0), dict(dt=-1.0)):
        with pytest.raises(ValueError):
            StepperConfig(**bad)
