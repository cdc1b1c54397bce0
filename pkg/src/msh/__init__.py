"""Discrete free-discontinuity energies on stochastic lattices."""

__version__ = "0.1.0"
