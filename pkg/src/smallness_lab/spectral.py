"""Eigendecomposition, spectral projectors, the heat propagator and the
ghost-dimension lift ``F(x, y) = sinh(sqrt(H) y) / sqrt(H) Pi f``."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import CoefficientField, SparseOperator, flux_divergence

__all__ = [
    "EigenSystem",
    "GhostField",
    "eigendecompose",
    "ghost_lift",
    "ghost_residual",
    "heat_evolve",
    "project",
    "sinh_kernel",
]

DENSE_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenpairs of ``K`` with kappa-orthonormal vectors.

    ``values`` are eigenvalues of the assembled operator. When the
    coefficient field was shifted by ``shift`` (see
    :func:`smallness_lab.multiplier.shift_nonneg`), ``physical_values``
    subtracts it again; cutoffs are always compared against those.
    """

    values: np.ndarray
    vectors: np.ndarray  # (N, k), columns are modes
    weights: np.ndarray
    shift: float
    op: SparseOperator

    @property
    def count(self) -> int:
        return self.values.size

    @property
    def physical_values(self) -> np.ndarray:
        return self.values - self.shift

    def span_size(self, cutoff: float) -> int:
        """Number of modes with physical eigenvalue ``<= cutoff`` (ties included)."""
        return int(np.searchsorted(self.physical_values, cutoff, side="right"))

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """kappa-inner products ``<u, phi_k>`` for all computed modes."""
        return self.vectors.T @ (np.asarray(u, dtype=float) * self.weights)

    def synthesize(self, coef: np.ndarray) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        return self.vectors[:, : coef.size] @ coef

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.sum(u * u * self.weights)))

    def to_csv(self, path) -> None:
        """Write rows ``k, lambda_k, phi_k(cell 0), phi_k(cell 1), ...``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lambda"] + [f"cell{i}" for i in range(self.vectors.shape[0])])
            for k in range(self.count):
                w.writerow([k + 1, f"{self.physical_values[k]:.15e}"] + [f"{v:.15e}" for v in self.vectors[:, k]])


def _normalise_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(op: SparseOperator, k_max: int | None = None) -> EigenSystem:
    """Lowest ``k_max`` eigenpairs of ``K`` (all of them when ``None``).

    Works on ``D^{-1/2} S D^{-1/2}``: dense ``eigh`` up to 2000 unknowns,
    shift-invert Lanczos above.
    """
    N = op.dimension
    if k_max is None:
        k_max = N
    k_max = int(k_max)
    if k_max < 1 or k_max > N:
        raise ValueError(f"k_max={k_max} must lie in [1, {N}]")
    dinv = 1.0 / np.sqrt(op.weights)
    B = sp.diags(dinv) @ op.matrix @ sp.diags(dinv)
    if N <= DENSE_LIMIT or k_max >= N - 1:
        M = B.toarray()
        M = 0.5 * (M + M.T)
        vals, psi = sla.eigh(M, subset_by_index=[0, k_max - 1])
    else:
        # Gershgorin lower bound as a shift strictly below the spectrum
        Bc = B.tocsr()
        diag = Bc.diagonal()
        off = np.asarray(abs(Bc).sum(axis=1)).ravel() - np.abs(diag)
        sigma = float(np.min(diag - off)) - 1.0
        vals, psi = spla.eigsh(Bc, k=k_max, sigma=sigma, which="LM", tol=1e-13)
        order = np.argsort(vals)
        vals, psi = vals[order], psi[:, order]
    vectors = _normalise_signs(psi * dinv[:, None])
    K = op.matrix
    res = (K @ vectors) / op.weights[:, None] - vectors * vals[None, :]
    res_norm = np.sqrt(np.sum(res * res * op.weights[:, None], axis=0))
    bad = np.flatnonzero(res_norm > 1e-8 * (1 + np.abs(vals)))
    if bad.size:
        raise RuntimeError(
            f"eigenpair {int(bad[0]) + 1} residual {res_norm[bad[0]]:.2e} above tolerance"
        )
    return EigenSystem(vals, vectors, op.weights, float(op.coeff.shift), op)


def project(es: EigenSystem, u: np.ndarray, cutoff: float) -> np.ndarray:
    """Spectral projector onto modes with physical eigenvalue ``<= cutoff``."""
    m = es.span_size(cutoff)
    if m == 0:
        return np.zeros_like(np.asarray(u, dtype=float))
    V = es.vectors[:, :m]
    return V @ (V.T @ (u * es.weights))


def heat_evolve(es: EigenSystem, u0: np.ndarray, t: float) -> np.ndarray:
    """``sum_k exp(-lambda_k t) <u0, phi_k> phi_k`` over all computed modes."""
    if t < 0:
        raise ValueError("heat_evolve needs t >= 0")
    c = es.coefficients(u0)
    return es.vectors @ (np.exp(-es.physical_values * t) * c)


def sinh_kernel(lam: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``s(lambda, y) = sinh(sqrt(lambda) y) / sqrt(lambda)``, shape ``(len(y), len(lam))``.

    Evaluated on ``|y|`` and multiplied by ``sign(y)`` so the result is
    exactly odd; small arguments use ``y (1 + lambda y^2 / 6)``.
    """
    lam = np.asarray(lam, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(lam < 0):
        raise ValueError("sinh kernel needs lambda >= 0")
    ay = np.abs(y)[:, None]
    r = np.sqrt(lam)[None, :]
    arg = r * ay
    small = arg < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.sinh(arg) / np.where(r > 0, r, 1.0)
    series = ay * (1.0 + lam[None, :] * ay**2 / 6.0)
    return np.sign(y)[:, None] * np.where(small, series, big)


@dataclass(frozen=True, eq=False)
class GhostField:
    """Lifted field on ``domain x [-Y, Y]``.

    ``values`` has shape ``(m_y, N)``: row ``j`` is ``F(., y_grid[j])``.
    """

    base: EigenSystem
    cutoff: float
    coefficients: np.ndarray
    lambdas: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray

    @property
    def Y(self) -> float:
        return float(self.y_grid[-1])

    @property
    def dy(self) -> float:
        return float(self.y_grid[1] - self.y_grid[0])

    def zero_index(self) -> int:
        return int(self.y_grid.size // 2)

    def y_derivative_at_zero(self) -> np.ndarray:
        j = self.zero_index()
        return (self.values[j + 1] - self.values[j - 1]) / (2 * self.dy)

    def sup_norm_bound(self) -> float:
        """``Y exp(Y sqrt(Lambda_max)) ||Pi f||_kappa``, a bound on ``sup_y ||F(., y)||_kappa``."""
        lam_max = float(self.lambdas.max()) if self.lambdas.size else 0.0
        return self.Y * np.exp(self.Y * np.sqrt(lam_max)) * float(np.linalg.norm(self.coefficients))


def ghost_lift(es: EigenSystem, f: np.ndarray, cutoff: float, Y: float = 2.0, m_y: int = 81) -> GhostField:
    """Lift the projection ``Pi_cutoff f`` into one extra dimension.

    ``m_y`` must be odd so that ``y = 0`` is a grid point.
    """
    if Y <= 0:
        raise ValueError("Y must be positive")
    if m_y < 3 or m_y % 2 == 0:
        raise ValueError("m_y must be an odd count >= 3")
    m = es.span_size(cutoff)
    lam = es.values[:m].copy()
    lam[(lam < 0) & (lam > -1e-12 * max(1.0, abs(es.values).max()))] = 0.0
    if np.any(lam < 0):
        raise ValueError(
            f"retained eigenvalue {lam.min():g} is negative; shift V first with multiplier.shift_nonneg"
        )
    coef = es.coefficients(f)[:m]
    half = np.linspace(0.0, Y, m_y // 2 + 1)
    y = np.concatenate([-half[:0:-1], half])
    S = sinh_kernel(lam, y)
    values = (S * coef[None, :]) @ es.vectors[:, :m].T
    return GhostField(es, float(cutoff), coef, lam, y, values)


def ghost_residual(gf: GhostField, coeff: CoefficientField) -> float:
    """Max interior residual of the lifted equation, relative to ``max|F|``.

    The spatial part uses the stencil evaluator of the grid module and
    the ``y`` part a centred second difference.
    """
    es = gf.base
    if coeff.domain != es.op.domain:
        raise ValueError("ghost field and coefficient field live on different grids")
    scale = np.abs(gf.values).max()
    if scale == 0:
        return 0.0
    F = gf.values
    kappa = coeff.kappa
    bc = es.op.bc
    dy2 = gf.dy**2
    worst = 0.0
    for j in range(1, F.shape[0] - 1):
        spatial = flux_divergence(coeff, bc, F[j])
        r = spatial - kappa * (F[j + 1] - 2 * F[j] + F[j - 1]) / dy2 + kappa * coeff.V * F[j]
        worst = max(worst, float(np.abs(r).max()))
    return worst / scale
