"""Numerical laboratory for spectral inequalities, propagation of smallness
and null-controllability of Schrödinger-type heat equations on 1D/2D grids."""

__version__ = "0.1.0"
