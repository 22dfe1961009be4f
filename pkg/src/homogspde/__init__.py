"""Spectral-Galerkin Monte Carlo for the stochastic heat equation on the circle
with noise rescaled at the extrema of the solution."""

__version__ = "0.1.0"
