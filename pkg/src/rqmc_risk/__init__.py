"""Randomized quasi-Monte Carlo sample-based solvers for risk-averse stochastic programs."""

__version__ = "0.1.0"
