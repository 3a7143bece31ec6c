"""Microcanonical Monte Carlo for the discrete lattice vortex model."""

__version__ = "0.1.0"
