"""Doubling an interval into a circle.

The interval ``(a, b)`` with ``n`` cells becomes a torus of length
``2 (b - a)`` with ``2 n`` cells: torus cell ``i < n`` is base cell ``i``
and torus cell ``2n - 1 - i`` is its mirror image. Coefficients are
reflected evenly. Dirichlet eigenvectors extend oddly across the two
seams and Neumann eigenvectors evenly. Because the seams sit on cell
faces, the reflection reproduces the ghost-cell boundary rows exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import BoundaryCondition, CoefficientField, Domain, assemble
from .spectral import EigenSystem, eigendecompose

__all__ = ["DoubledSystem", "ExtensionReport", "double", "mirror", "verify_extension"]


def mirror(u: np.ndarray, parity: float = 1.0) -> np.ndarray:
    """Concatenate ``u`` with its reversal times ``parity``."""
    u = np.asarray(u, dtype=float)
    return np.concatenate([u, parity * u[::-1]])


@dataclass(frozen=True, eq=False)
class DoubledSystem:
    bc: BoundaryCondition
    base_domain: Domain
    domain: Domain
    base_coeff: CoefficientField
    coeff: CoefficientField
    base: EigenSystem | None = None
    doubled: EigenSystem | None = None

    @property
    def parity(self) -> float:
        return -1.0 if self.bc is BoundaryCondition.DIRICHLET else 1.0

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Odd (Dirichlet) or even (Neumann) extension of a base field."""
        return mirror(u, self.parity)

    def with_spectra(self, k_base: int, k_doubled: int | None = None) -> "DoubledSystem":
        if k_doubled is None:
            k_doubled = min(2 * k_base + 2, self.domain.size)
        base = eigendecompose(assemble(self.base_domain, self.bc, self.base_coeff), k_base)
        doubled = eigendecompose(assemble(self.domain, "periodic", self.coeff), k_doubled)
        return DoubledSystem(self.bc, self.base_domain, self.domain, self.base_coeff, self.coeff, base, doubled)


def double(domain: Domain, bc, coeff: CoefficientField) -> DoubledSystem:
    """Glue two mirrored copies of an interval into a torus of twice the length."""
    bc = BoundaryCondition(bc)
    if domain.kind != "interval":
        raise ValueError("only intervals can be doubled")
    if bc is BoundaryCondition.PERIODIC:
        raise ValueError("a periodic problem has nothing to double")
    n = domain.n[0]
    L = domain.lengths[0]
    torus = Domain.torus1d(2 * L, 2 * n)
    # torus face n + m corresponds to base face n - m
    a_x = np.concatenate([coeff.a_x, coeff.a_x[-2::-1]])
    tc = CoefficientField(torus, a_x, mirror(coeff.V), mirror(coeff.kappa), shift=coeff.shift)
    return DoubledSystem(bc, domain, torus, coeff, tc)


@dataclass(frozen=True)
class ExtensionReport:
    """Per-mode rows ``(k, lambda_k, residual, gap, relative_gap, seam, norm_plus, norm_minus)``."""

    rows: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.rows[:, 2].max())

    @property
    def max_relative_gap(self) -> float:
        return float(self.rows[:, 4].max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lambda", "residual", "gap", "relative_gap", "seam", "norm_plus", "norm_minus"])
            for r in self.rows:
                w.writerow([int(r[0])] + [f"{v:.12e}" for v in r[1:]])


def verify_extension(ds: DoubledSystem, k_max: int) -> ExtensionReport:
    """Check that reflected base modes are eigenvectors of the doubled operator.

    ``residual`` is ``||K phi~ - lambda phi~||_kappa / (1 + |lambda|)`` with
    ``phi~`` normalised on the doubled circle; ``gap`` is the distance of
    ``lambda_k`` to the nearest doubled eigenvalue; ``seam`` is the largest
    seam face value (mean of the two adjacent cells) for Dirichlet, and
    the largest jump across a seam for Neumann.
    """
    if ds.base is None or ds.doubled is None or ds.base.count < k_max:
        ds = ds.with_spectra(k_max)
    base, dbl = ds.base, ds.doubled
    op = dbl.op
    n = ds.base_domain.n[0]
    rows = []
    for k in range(k_max):
        lam = base.values[k]
        ext = ds.extend(base.vectors[:, k])
        norm_plus = float(np.sqrt(np.sum(ext[:n] ** 2 * op.weights[:n])))
        norm_minus = float(np.sqrt(np.sum(ext[n:] ** 2 * op.weights[n:])))
        phi = ext / np.sqrt(norm_plus**2 + norm_minus**2)
        r = op.apply(phi) - lam * phi
        res = float(np.sqrt(np.sum(r * r * op.weights))) / (1 + abs(lam))
        gap = float(np.min(np.abs(dbl.values - lam)))
        rel = gap / max(abs(lam), 1.0)
        if ds.bc is BoundaryCondition.DIRICHLET:
            seam = max(abs(ext[n - 1] + ext[n]), abs(ext[0] + ext[-1])) / 2
        else:
            seam = max(abs(ext[n - 1] - ext[n]), abs(ext[0] - ext[-1]))
        rows.append([k + 1, lam, res, gap, rel, seam, norm_plus, norm_minus])
    return ExtensionReport(np.asarray(rows, float))
