"""Closed-form reference values used across the test suite."""
import math

import numpy as np


def dirichlet_interval_eigenvalues(length: float, count: int) -> np.ndarray:
    """Eigenvalues ``(k pi / L)^2`` of ``-u''`` on ``(0, L)`` with Dirichlet conditions."""
    k = np.arange(1, count + 1)
    return (k * math.pi / length) ** 2


def neumann_interval_eigenvalues(length: float, count: int) -> np.ndarray:
    k = np.arange(0, count)
    return (k * math.pi / length) ** 2


def torus_eigenvalues(length: float, count: int) -> np.ndarray:
    """``(2 pi m / L)^2`` with multiplicity two for ``m >= 1``."""
    m = np.repeat(np.arange(0, count), 2)[1 : count + 1]
    return (2 * math.pi * m / length) ** 2


def cosh_multiplier(x: np.ndarray, V: float) -> np.ndarray:
    """Solution of ``-phi'' + V phi = 0`` on (0, 1) with ``phi = 1`` at both ends."""
    s = math.sqrt(V)
    return np.cosh(s * (x - 0.5)) / math.cosh(s / 2)


HALF_INTERVAL_L2_CONSTANT = math.sqrt(2.0)
"""Best L2 constant for the first sine mode on (0, pi) observed on (0, pi/2)."""


def hadamard_exponent(r1: float, r2: float, r3: float) -> float:
    """Exponent of the Hadamard three-circle inequality."""
    return math.log(r3 / r2) / math.log(r3 / r1)


def scalar_hum_cost(lam: float, a0: float, T: float) -> float:
    """Minimal L2 cost of steering the scalar ODE ``y' = -lam y + g`` from ``a0`` to zero."""
    gram = -math.expm1(-2 * lam * T) / (2 * lam)
    return (math.exp(-lam * T) * a0) ** 2 / gram


def cantor_measure(length: float, generation: int, ratio: float) -> float:
    return length * (2 * ratio) ** generation
