"""
Gradient decay as eps shrinks
=============================

The time integral of E|psi_x|_{L^1} should scale like eps once the state
has homogenized. Runs at every eps share one step size and one set of
seeds (common random numbers). The horizon is 2, because on short horizons
the largest eps has not homogenized yet.
"""

from homogspde.estimators import gradient_l1_integral, scaling_fit
from homogspde.experiments import run_ensemble
from homogspde.integrator import stability_dt
from homogspde.model import ModelConfig, StepperConfig

base = ModelConfig(T=2.0, stepper=StepperConfig(diag_stride=1000))
grid = (0.4, 0.2, 0.1)
dt = stability_dt(base.with_(eps=min(grid)))

I = {}
for eps in grid:
    run = run_ensemble(base.with_(eps=eps), 2024, 30, dt=dt, workers=2)
    I[eps] = gradient_l1_integral(run.completed)
    print(f"eps={eps}: I={I[eps][0]:.4f} +- {I[eps][1]:.4f}")

fit = scaling_fit(I, 1.0)
print(f"slope {fit['slope']:.3f}, R^2 {fit['r2']:.4f}, monotone {fit['monotone']}")
