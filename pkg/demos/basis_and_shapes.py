"""
Basis, projections and noise shapes
===================================

The spectral basis is orthonormal on [0, 2 pi]. The noise constant and the
other basis sums come straight from it. Each noise shape carries its
closed-form antiderivative G and the constant kappa.
"""

import math

import numpy as np

from homogspde.coefficients import certify_tail, kappa_of, make_canonical, make_power
from homogspde.spectral import (GridField, basis_sums, derivative, grid_points, noise_constant,
                                project, synthesize)

# %%
# Project a smooth function, differentiate in coefficient space, and go back
# to the grid.
N, m = 64, 17
x = grid_points(N)
f = project(GridField(np.sin(3 * x) + 0.5 * np.cos(x)), m)
df = synthesize(derivative(f), N)
print("max derivative error:", np.max(np.abs(df.values - (3 * np.cos(3 * x) - 0.5 * np.sin(x)))))

# %%
# The basis sums are constant in x. The mixed sum vanishes.
for n in (1, 2, 4):
    s = basis_sums(n, 128)
    print(f"n={n}: c_Q={noise_constant(n):.6f} (2n+1)/(2pi)={(2*n+1)/(2*math.pi):.6f} "
          f"max|sum e e'|={np.max(np.abs(s['e_de'])):.1e}")

# %%
# Canonical shape g(z) = |z|/sqrt(1+z^2): kappa = 3 pi/16, with a 1/z tail.
canon = make_canonical()
print("kappa:", kappa_of(canon), "vs", 3 * math.pi / 16)
print("tail constant:", certify_tail(canon, [1, 10, 100])["C_hat"])

# %%
# The power shape |z|^gamma has unbounded g', so it needs a slope cap.
power = make_power(2.0)
print("G(2) for gamma=2:", float(power.G(2.0)), "diffusivity bound at |z|<=1:",
      power.diffusivity_bound(1.0))
