"""Gradient decay rate on a horizon long enough for every eps on the grid
to homogenize (at T = 0.5 only eps = 0.1 gets there)."""

from homogspde.estimators import gradient_l1_integral, scaling_fit
from homogspde.experiments import run_ensemble
from homogspde.integrator import stability_dt
from homogspde.model import ModelConfig, StepperConfig


def test_canonical_rate_long_horizon():
    base = ModelConfig(T=2.0, stepper=StepperConfig(diag_stride=1000))
    grid = (0.4, 0.2, 0.1)
    dt = stability_dt(base.with_(eps=min(grid)))
    I = {}
    for e in grid:
        run = run_ensemble(base.with_(eps=e), 2024, 50, dt=dt)
        assert not run.failed
        I[e] = gradient_l1_integral(run.completed)
    fit = scaling_fit(I, 1.0)
    assert fit["pass"] and fit["strictly_monotone"]
    assert fit["slope"] >= 0.7
