"""Computational domains, Lipschitz coefficient fields and the discrete
Schrödinger operator.

The operator is a cell-centred finite-volume discretisation of

    H u = -(1/kappa) div(kappa A grad u) + V u

written as ``K = D_w^{-1} S`` with ``S`` symmetric and ``w = kappa * |cell|``,
so ``K`` is self-adjoint for the weighted inner product
``<f, g>_kappa = sum_i f_i g_i w_i``.

Fields are flat arrays of length ``domain.size`` in C order over the cell
index ``(i, j)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "BoundaryCondition",
    "CoefficientField",
    "Domain",
    "IndefiniteOperatorError",
    "SparseOperator",
    "assemble",
    "boundary_values",
    "factorize_dirichlet",
    "flux_divergence",
    "solve_dirichlet",
]


class CoefficientInvariantError(ValueError):
    """A sampled coefficient breaks positivity, symmetry or a declared bound."""


class IndefiniteOperatorError(RuntimeError):
    """Raised when a Dirichlet system cannot be solved (V >= 0 violated)."""


class BoundaryCondition(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    PERIODIC = "periodic"


def _as_bc(bc) -> BoundaryCondition:
    try:
        return BoundaryCondition(bc)
    except ValueError:
        raise ValueError(f"unknown boundary condition {bc!r}") from None


@dataclass(frozen=True)
class Domain:
    """Interval, rectangle or flat 1D torus with a uniform cell grid.

    Parameters
    ----------
    kind
        ``"interval"``, ``"rectangle"`` or ``"torus1d"``.
    bounds
        ``(a, b)`` for 1D kinds, ``(a, b, c, d)`` for the rectangle
        ``(a, b) x (c, d)``. A torus of length ``L`` has bounds ``(0, L)``.
    n
        Cells per axis.
    """

    kind: str
    bounds: tuple
    n: tuple

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle", "torus1d"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        d = 2 if self.kind == "rectangle" else 1
        if len(self.bounds) != 2 * d or len(self.n) != d:
            raise ValueError("bounds/n do not match the domain dimension")
        for ax in range(d):
            lo, hi = self.bounds[2 * ax], self.bounds[2 * ax + 1]
            if not hi > lo:
                raise ValueError("empty domain")
            if int(self.n[ax]) < 4:
                raise ValueError("need at least 4 cells per axis")
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "n", tuple(int(k) for k in self.n))

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> "Domain":
        return cls("interval", (a, b), (n,))

    @classmethod
    def rectangle(cls, a: float, b: float, c: float, d: float, n) -> "Domain":
        n = (n, n) if np.isscalar(n) else tuple(n)
        return cls("rectangle", (a, b, c, d), n)

    @classmethod
    def torus1d(cls, length: float, n: int) -> "Domain":
        return cls("torus1d", (0.0, length), (n,))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus1d"

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def h(self) -> tuple:
        return tuple((self.bounds[2 * k + 1] - self.bounds[2 * k]) / self.n[k] for k in range(self.dim))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def lengths(self) -> tuple:
        return tuple(self.bounds[2 * k + 1] - self.bounds[2 * k] for k in range(self.dim))

    def axis_centers(self, axis: int) -> np.ndarray:
        lo = self.bounds[2 * axis]
        return lo + (np.arange(self.n[axis]) + 0.5) * self.h[axis]

    def axis_faces(self, axis: int) -> np.ndarray:
        lo = self.bounds[2 * axis]
        return lo + np.arange(self.n[axis] + 1) * self.h[axis]

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(size, dim)``."""
        grids = np.meshgrid(*[self.axis_centers(k) for k in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def coordinates(self) -> tuple:
        """Cell-centre coordinate arrays, one flat array per axis."""
        c = self.centers()
        return tuple(c[:, k] for k in range(self.dim))

    def grid_view(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).reshape(self.shape)

    def distance_to_boundary(self) -> np.ndarray:
        """Distance from every cell centre to the boundary (inf on the torus)."""
        if self.periodic:
            return np.full(self.size, np.inf)
        c = self.centers()
        dist = np.full(self.size, np.inf)
        for k in range(self.dim):
            lo, hi = self.bounds[2 * k], self.bounds[2 * k + 1]
            dist = np.minimum(dist, np.minimum(c[:, k] - lo, hi - c[:, k]))
        return dist

    def boundary_faces(self):
        """Boundary faces ordered along the boundary.

        Returns ``(cells, axis, points)``: the adjacent cell, the normal axis
        and the face midpoint for every boundary face. In 2D the faces run
        counter-clockwise starting at the lower-left corner.
        """
        if self.periodic:
            return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 1))
        if self.dim == 1:
            a, b = self.bounds
            return np.array([0, self.n[0] - 1]), np.array([0, 0]), np.array([[a], [b]])
        nx, ny = self.n
        a, b, c, d = self.bounds
        xc, yc = self.axis_centers(0), self.axis_centers(1)
        idx = np.arange(self.size).reshape(nx, ny)
        cells = np.concatenate([idx[:, 0], idx[-1, :], idx[::-1, -1], idx[0, ::-1]])
        axis = np.concatenate([np.ones(nx, int), np.zeros(ny, int), np.ones(nx, int), np.zeros(ny, int)])
        pts = np.concatenate(
            [
                np.stack([xc, np.full(nx, c)], 1),
                np.stack([np.full(ny, b), yc], 1),
                np.stack([xc[::-1], np.full(nx, d)], 1),
                np.stack([np.full(ny, a), yc[::-1]], 1),
            ]
        )
        return cells, axis, pts


def _evaluate(f, points: Sequence[np.ndarray], shape) -> np.ndarray:
    if callable(f):
        out = np.asarray(f(*points), dtype=float)
        return np.broadcast_to(out, shape).copy()
    return np.full(shape, float(f))


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Sampled coefficients ``A``, ``V``, ``kappa`` with their constants.

    ``a_x`` holds ``A11`` on the faces normal to x (shape ``(nx+1,)`` or
    ``(nx+1, ny)``), ``a_y`` holds ``A22`` on the faces normal to y and
    ``a_xy`` holds ``A12`` at the grid vertices. ``V`` and ``kappa`` live at
    cell centres. ``shift`` records a constant already added to ``V``.
    """

    domain: Domain
    a_x: np.ndarray
    V: np.ndarray
    kappa: np.ndarray
    a_y: np.ndarray | None = None
    a_xy: np.ndarray | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    shift: float = 0.0
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        dom = self.domain
        V = np.asarray(self.V, dtype=float).reshape(dom.size)
        kappa = np.asarray(self.kappa, dtype=float).reshape(dom.size)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "kappa", kappa)
        if np.any(~np.isfinite(V)) or np.any(~np.isfinite(kappa)):
            raise CoefficientInvariantError("non-finite coefficient sample")
        bad = np.flatnonzero(kappa <= 0)
        if bad.size:
            raise CoefficientInvariantError(f"kappa must be positive; cell {int(bad[0])} has kappa={kappa[bad[0]]:g}")
        if dom.dim == 1:
            a_x = np.asarray(self.a_x, dtype=float).reshape(dom.n[0] + 1)
            if dom.periodic and a_x[0] != a_x[-1]:
                raise ValueError("periodic coefficient must agree on the wrap face")
            object.__setattr__(self, "a_x", a_x)
        else:
            nx, ny = dom.n
            object.__setattr__(self, "a_x", np.asarray(self.a_x, dtype=float).reshape(nx + 1, ny))
            a_y = self.a_y if self.a_y is not None else np.ones((nx, ny + 1))
            object.__setattr__(self, "a_y", np.asarray(a_y, dtype=float).reshape(nx, ny + 1))
            a_xy = self.a_xy if self.a_xy is not None else np.zeros((nx + 1, ny + 1))
            object.__setattr__(self, "a_xy", np.asarray(a_xy, dtype=float).reshape(nx + 1, ny + 1))
        est1, est2 = self.estimate_constants()
        if self.lambda1 is None:
            object.__setattr__(self, "lambda1", est1)
        elif est1 > self.lambda1 * (1 + 1e-12):
            self._report_ellipticity_violation()
        if self.lambda2 is None:
            object.__setattr__(self, "lambda2", est2)
        elif est2 > self.lambda2 * (1 + 1e-9) + 1e-9:
            raise CoefficientInvariantError(f"discrete Lipschitz quotient {est2:g} exceeds declared Lambda2={self.lambda2:g}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, domain: Domain, A: float = 1.0, V: float = 0.0, kappa: float = 1.0, **kw) -> "CoefficientField":
        return cls.from_functions(domain, A=A, V=V, kappa=kappa, **kw)

    @classmethod
    def from_functions(
        cls,
        domain: Domain,
        A: float | Callable = 1.0,
        V: float | Callable = 0.0,
        kappa: float | Callable = 1.0,
        A22: float | Callable | None = None,
        A12: float | Callable = 0.0,
        **kw,
    ) -> "CoefficientField":
        """Sample closed-form coefficients.

        ``A`` is either the scalar/callable ``A11`` (isotropic when ``A22``
        is omitted) or, in 2D, a callable returning ``(..., 2, 2)`` matrices.
        Callables receive one coordinate array per axis.
        """
        cells = domain.coordinates()
        Vc = _evaluate(V, cells, (domain.size,))
        kc = _evaluate(kappa, cells, (domain.size,))
        if domain.dim == 1:
            xf = domain.axis_faces(0)
            a_x = _evaluate(A, (xf,), xf.shape)
            if domain.periodic:
                a_x[-1] = a_x[0]
            return cls(domain, a_x, Vc, kc, **kw)
        xc, yc = domain.axis_centers(0), domain.axis_centers(1)
        xf, yf = domain.axis_faces(0), domain.axis_faces(1)
        Xx, Yx = np.meshgrid(xf, yc, indexing="ij")
        Xy, Yy = np.meshgrid(xc, yf, indexing="ij")
        Xv, Yv = np.meshgrid(xf, yf, indexing="ij")
        if callable(A) and np.ndim(A(np.zeros(1), np.zeros(1))) >= 3:
            # full matrix field
            def entry(X, Y, i, j):
                M = np.asarray(A(X.ravel(), Y.ravel()), dtype=float)
                if not np.allclose(M[..., 0, 1], M[..., 1, 0], rtol=0, atol=1e-14):
                    k = int(np.argmax(np.abs(M[..., 0, 1] - M[..., 1, 0])))
                    raise CoefficientInvariantError(f"non-symmetric A sample at point {k}")
                return M[..., i, j].reshape(X.shape)

            a_x, a_y, a_xy = entry(Xx, Yx, 0, 0), entry(Xy, Yy, 1, 1), entry(Xv, Yv, 0, 1)
        else:
            a_x = _evaluate(A, (Xx, Yx), Xx.shape)
            a_y = _evaluate(A if A22 is None else A22, (Xy, Yy), Xy.shape)
            a_xy = _evaluate(A12, (Xv, Yv), Xv.shape)
        return cls(domain, a_x, Vc, kc, a_y=a_y, a_xy=a_xy, **kw)

    @classmethod
    def from_cell_samples(
        cls, domain: Domain, A11, V, kappa, A12=None, A22=None, A21=None, **kw
    ) -> "CoefficientField":
        """Build face coefficients from cell-centre samples.

        Diagonal entries are averaged harmonically across each face, the
        off-diagonal entry arithmetically onto interior vertices.
        """
        A11 = np.asarray(A11, dtype=float).reshape(domain.shape)
        if A21 is not None and A12 is not None:
            diff = np.abs(np.asarray(A12, float).ravel() - np.asarray(A21, float).ravel())
            if np.any(diff > 1e-14):
                raise CoefficientInvariantError(f"non-symmetric A sample at cell {int(np.argmax(diff))}")
        if domain.dim == 1:
            a = A11
            a_x = np.empty(domain.n[0] + 1)
            a_x[1:-1] = _harmonic(a[:-1], a[1:])
            if domain.periodic:
                a_x[0] = a_x[-1] = _harmonic(a[-1], a[0])
            else:
                a_x[0], a_x[-1] = a[0], a[-1]
            return cls(domain, a_x, V, kappa, **kw)
        nx, ny = domain.n
        A22 = A11 if A22 is None else np.asarray(A22, dtype=float).reshape(domain.shape)
        a_x = np.empty((nx + 1, ny))
        a_x[1:-1] = _harmonic(A11[:-1], A11[1:])
        a_x[0], a_x[-1] = A11[0], A11[-1]
        a_y = np.empty((nx, ny + 1))
        a_y[:, 1:-1] = _harmonic(A22[:, :-1], A22[:, 1:])
        a_y[:, 0], a_y[:, -1] = A22[:, 0], A22[:, -1]
        a_xy = np.zeros((nx + 1, ny + 1))
        if A12 is not None:
            A12 = np.asarray(A12, dtype=float).reshape(domain.shape)
            a_xy[1:-1, 1:-1] = 0.25 * (A12[:-1, :-1] + A12[1:, :-1] + A12[:-1, 1:] + A12[1:, 1:])
        return cls(domain, a_x, V, kappa, a_y=a_y, a_xy=a_xy, **kw)

    # -- derived data -----------------------------------------------------

    def with_V(self, V, shift: float | None = None) -> "CoefficientField":
        return CoefficientField(
            self.domain, self.a_x, V, self.kappa, a_y=self.a_y, a_xy=self.a_xy,
            lambda1=self.lambda1, lambda2=self.lambda2,
            shift=self.shift if shift is None else shift,
        )

    def _vertex_matrices(self):
        """Per-vertex (A11, A22, A12) at interior vertices (2D only)."""
        a11 = 0.5 * (self.a_x[:, :-1] + self.a_x[:, 1:])  # (nx+1, ny-1)
        a22 = 0.5 * (self.a_y[:-1, :] + self.a_y[1:, :])  # (nx-1, ny+1)
        return a11[1:-1, :], a22[:, 1:-1], self.a_xy[1:-1, 1:-1]

    def ellipticity_extremes(self):
        """Smallest and largest eigenvalue of the sampled A."""
        if self.domain.dim == 1:
            return float(self.a_x.min()), float(self.a_x.max())
        lo = min(self.a_x.min(), self.a_y.min())
        hi = max(self.a_x.max(), self.a_y.max())
        a11, a22, a12 = self._vertex_matrices()
        if a11.size:
            mean = 0.5 * (a11 + a22)
            rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12**2)
            lo = min(lo, (mean - rad).min())
            hi = max(hi, (mean + rad).max())
        return float(lo), float(hi)

    def estimate_constants(self):
        """Estimate ``(Lambda1, Lambda2)`` from the samples."""
        lo, hi = self.ellipticity_extremes()
        if lo <= 0:
            raise CoefficientInvariantError(f"A is not positive definite on the grid ({self._first_bad_face()})")
        lam1 = max(hi, 1.0 / lo, self.kappa.max(), 1.0 / self.kappa.min())
        dom = self.domain
        quotients = [0.0]
        if dom.dim == 1:
            h = dom.h[0]
            quotients.append(np.abs(np.diff(self.a_x)).max() / h)
            k = self.kappa
            kd = np.diff(np.append(k, k[0]) if dom.periodic else k)
            quotients.append(np.abs(kd).max() / h if kd.size else 0.0)
        else:
            hx, hy = dom.h
            k = self.kappa.reshape(dom.shape)
            for arr in (self.a_x, self.a_y, self.a_xy, k):
                quotients.append(np.abs(np.diff(arr, axis=0)).max() / hx)
                quotients.append(np.abs(np.diff(arr, axis=1)).max() / hy)
        return float(lam1), float(max(quotients))

    def _first_bad_face(self) -> str:
        bad = np.flatnonzero(self.a_x.ravel() <= 0)
        if bad.size:
            return f"x-face {int(bad[0])} has A11={self.a_x.ravel()[bad[0]]:g}"
        if self.domain.dim == 2:
            bad = np.flatnonzero(self.a_y.ravel() <= 0)
            if bad.size:
                return f"y-face {int(bad[0])} has A22={self.a_y.ravel()[bad[0]]:g}"
            return "an interior vertex has a non-positive eigenvalue"
        return "unknown location"

    def _report_ellipticity_violation(self):
        lam1 = self.lambda1
        k = self.kappa
        bad = np.flatnonzero((k > lam1 * (1 + 1e-12)) | (k < (1 - 1e-12) / lam1))
        if bad.size:
            raise CoefficientInvariantError(f"kappa outside [1/Lambda1, Lambda1] at cell {int(bad[0])}")
        ax = self.a_x.ravel()
        bad = np.flatnonzero((ax > lam1 * (1 + 1e-12)) | (ax < (1 - 1e-12) / lam1))
        if bad.size:
            raise CoefficientInvariantError(f"A violates ellipticity bound Lambda1={lam1:g} at x-face {int(bad[0])}")
        raise CoefficientInvariantError(f"A violates ellipticity bound Lambda1={lam1:g}")

    @property
    def V_sup(self) -> float:
        return float(np.abs(self.V).max())


# -- face tables shared by assembly and the stencil evaluator --------------


def _face_tables(coeff: CoefficientField, bc: BoundaryCondition):
    """Interior and boundary face tables.

    Returns ``(left, right, trans)`` for interior faces and
    ``(cells, trans, bindex)`` for boundary faces, where ``trans`` is
    ``kappa_face * A_face * |face| / h`` and ``bindex`` indexes
    ``domain.boundary_faces()``.
    """
    dom = coeff.domain
    kappa = coeff.kappa
    vol = dom.cell_volume
    if dom.dim == 1:
        n = dom.n[0]
        h = dom.h[0]
        cells = np.arange(n)
        left, right = cells[:-1], cells[1:]
        k_face = _harmonic(kappa[:-1], kappa[1:])
        trans = k_face * coeff.a_x[1:-1] * vol / h**2
        if dom.periodic:
            left = np.append(left, n - 1)
            right = np.append(right, 0)
            trans = np.append(trans, _harmonic(kappa[-1], kappa[0]) * coeff.a_x[0] * vol / h**2)
            return (left, right, trans), (np.zeros(0, int), np.zeros(0), np.zeros(0, int))
        b_cells = np.array([0, n - 1])
        b_trans = kappa[b_cells] * coeff.a_x[[0, n]] * vol / h**2
        return (left, right, trans), (b_cells, b_trans, np.array([0, 1]))
    nx, ny = dom.n
    hx, hy = dom.h
    idx = np.arange(dom.size).reshape(nx, ny)
    k = kappa.reshape(nx, ny)
    lx = idx[:-1, :].ravel()
    rx = idx[1:, :].ravel()
    tx = (_harmonic(k[:-1, :], k[1:, :]) * coeff.a_x[1:-1, :]).ravel() * vol / hx**2
    ly = idx[:, :-1].ravel()
    ry = idx[:, 1:].ravel()
    ty = (_harmonic(k[:, :-1], k[:, 1:]) * coeff.a_y[:, 1:-1]).ravel() * vol / hy**2
    left = np.concatenate([lx, ly])
    right = np.concatenate([rx, ry])
    trans = np.concatenate([tx, ty])
    # boundary faces in the order of Domain.boundary_faces()
    b_cells = np.concatenate([idx[:, 0], idx[-1, :], idx[::-1, -1], idx[0, ::-1]])
    b_coef = np.concatenate(
        [
            k[:, 0] * coeff.a_y[:, 0] / hy**2,
            k[-1, :] * coeff.a_x[-1, :] / hx**2,
            (k[:, -1] * coeff.a_y[:, -1])[::-1] / hy**2,
            (k[0, :] * coeff.a_x[0, :])[::-1] / hx**2,
        ]
    )
    return (left, right, trans), (b_cells, b_coef * vol, np.arange(b_cells.size))


def _cross_tables(coeff: CoefficientField):
    """Interior-vertex cross-term data: the 4 cells and vertex weight."""
    dom = coeff.domain
    nx, ny = dom.n
    idx = np.arange(dom.size).reshape(nx, ny)
    a12 = coeff.a_xy[1:-1, 1:-1]
    k = coeff.kappa.reshape(nx, ny)
    kv = 0.25 * (k[:-1, :-1] + k[1:, :-1] + k[:-1, 1:] + k[1:, 1:])
    weight = (kv * a12).ravel() * dom.cell_volume
    quad = np.stack(
        [idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()], axis=1
    )
    hx, hy = dom.h
    gx = np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * hx)
    gy = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * hy)
    return quad, weight, gx, gy


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Discrete operator ``K = D_w^{-1} S`` with ``S`` symmetric.

    Attributes
    ----------
    matrix
        The symmetric matrix ``S = D_w K`` (CSR).
    weights
        ``w_i = kappa_i * |cell|`` defining the kappa inner product.
    boundary_cells, boundary_coef
        Dirichlet coupling: boundary data ``g`` enters the right-hand side
        as ``boundary_coef * g`` on ``boundary_cells``.
    """

    domain: Domain
    bc: BoundaryCondition
    coeff: CoefficientField
    matrix: sp.csr_matrix
    weights: np.ndarray
    boundary_cells: np.ndarray
    boundary_coef: np.ndarray

    @property
    def dimension(self) -> int:
        return self.domain.size

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def K(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.weights) @ self.matrix

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u / self.weights

    def inner(self, u, v) -> float:
        return float(np.sum(u * v * self.weights))

    def boundary_rhs(self, boundary_data) -> np.ndarray:
        """Right-hand side contribution of Dirichlet data on boundary faces."""
        rhs = np.zeros(self.dimension)
        if self.boundary_cells.size == 0:
            return rhs
        g = boundary_values(self.domain, boundary_data)
        np.add.at(rhs, self.boundary_cells, self.boundary_coef * g)
        return rhs

    def residual(self, u, boundary_data=0.0, source=0.0) -> np.ndarray:
        """``K u - source`` with inhomogeneous Dirichlet data folded in."""
        r = (self.matrix @ u) / self.weights - source
        if self.bc is BoundaryCondition.DIRICHLET:
            r = r - self.boundary_rhs(boundary_data) / self.weights
        return r


def boundary_values(domain: Domain, boundary_data) -> np.ndarray:
    """Evaluate boundary data at the boundary face midpoints."""
    _, _, pts = domain.boundary_faces()
    if callable(boundary_data):
        return np.broadcast_to(
            np.asarray(boundary_data(*pts.T), dtype=float), (pts.shape[0],)
        ).astype(float)
    g = np.asarray(boundary_data, dtype=float)
    if g.ndim == 0:
        return np.full(pts.shape[0], float(g))
    if g.shape != (pts.shape[0],):
        raise ValueError(f"expected {pts.shape[0]} boundary values, got {g.shape}")
    return g


def assemble(domain: Domain, bc, coeff: CoefficientField) -> SparseOperator:
    """Assemble the finite-volume Schrödinger operator.

    Dirichlet faces use an odd ghost reflection, Neumann faces an even one,
    and the torus wraps around. The returned ``S = D_w K`` is symmetric
    entrywise by construction.
    """
    bc = _as_bc(bc)
    if coeff.domain != domain:
        raise ValueError("coefficient field lives on a different grid")
    if bc is BoundaryCondition.PERIODIC and not domain.periodic:
        raise ValueError("periodic boundary condition requires a torus domain")
    if domain.periodic and bc is not BoundaryCondition.PERIODIC:
        raise ValueError("the torus has no boundary; use bc='periodic'")
    N = domain.size
    (left, right, trans), (b_cells, b_trans, _) = _face_tables(coeff, bc)
    rows = [left, right, left, right]
    cols = [right, left, left, right]
    vals = [-trans, -trans, trans, trans]
    diag = coeff.V * coeff.kappa * domain.cell_volume
    if bc is BoundaryCondition.DIRICHLET:
        diag = diag.copy()
        np.add.at(diag, b_cells, 2.0 * b_trans)
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    if domain.dim == 2 and np.any(coeff.a_xy != 0):
        quad, weight, gx, gy = _cross_tables(coeff)
        local = np.outer(gx, gy) + np.outer(gy, gx)  # symmetric 4x4
        rows.append(np.repeat(quad, 4, axis=1).ravel())
        cols.append(np.tile(quad, (1, 4)).ravel())
        vals.append((weight[:, None] * local.ravel()[None, :]).ravel())
    S = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    S.sum_duplicates()
    # exact symmetry: average with the transpose (entries already agree up to summation order)
    S = ((S + S.T) * 0.5).tocsr()
    weights = coeff.kappa * domain.cell_volume
    if bc is BoundaryCondition.DIRICHLET:
        b_coef = 2.0 * b_trans
    else:
        b_cells, b_coef = np.zeros(0, int), np.zeros(0)
    return SparseOperator(domain, bc, coeff, S, weights, b_cells, b_coef)


def factorize_dirichlet(op: SparseOperator, rtol: float = 1e-10):
    """Factorise a Dirichlet operator once and return a solver.

    The returned callable ``solve(boundary_data=0.0, source=0.0)`` behaves
    like :func:`solve_dirichlet` and reuses the sparse LU factors.
    """
    if op.bc is not BoundaryCondition.DIRICHLET:
        raise ValueError("solve_dirichlet needs an operator assembled with dirichlet bc")
    try:
        lu = spla.splu(op.matrix.tocsc())
    except RuntimeError as exc:
        raise IndefiniteOperatorError(
            f"Dirichlet system is singular; min V = {op.coeff.V.min():g} (need V >= 0)"
        ) from exc

    def solve(boundary_data=0.0, source=0.0) -> np.ndarray:
        src = np.broadcast_to(np.asarray(source, dtype=float), (op.dimension,))
        rhs = op.weights * src + op.boundary_rhs(boundary_data)
        u = lu.solve(rhs)
        norm = np.linalg.norm(rhs)
        res = np.linalg.norm(op.matrix @ u - rhs) / max(norm, np.finfo(float).tiny)
        if not np.all(np.isfinite(u)) or (norm > 0 and res > rtol):
            raise IndefiniteOperatorError(
                f"Dirichlet solve residual {res:.2e} exceeds {rtol:g}; min V = {op.coeff.V.min():g}"
            )
        return u

    return solve


def solve_dirichlet(op: SparseOperator, boundary_data=0.0, source=0.0, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``K u = source`` in the domain with ``u = boundary_data`` on the boundary.

    Boundary data is imposed at boundary face midpoints (the ghost cell is
    the odd reflection about the prescribed value). ``boundary_data`` may be
    a scalar, a callable of the face coordinates or an array ordered as
    ``Domain.boundary_faces()``.
    """
    return factorize_dirichlet(op, rtol)(boundary_data, source)


def flux_divergence(coeff: CoefficientField, bc, u: np.ndarray, boundary_data=0.0) -> np.ndarray:
    """Stencil evaluation of ``-div(kappa A grad u)`` per unit cell volume.

    Works directly on the face arrays with explicit ghost values and does
    not touch the assembled matrix, so it serves as an independent check
    of :func:`assemble`.
    """
    bc = _as_bc(bc)
    dom = coeff.domain
    u = np.asarray(u, dtype=float)
    kappa = coeff.kappa
    if dom.dim == 1:
        h = dom.h[0]
        if bc is BoundaryCondition.PERIODIC:
            ext = np.concatenate([u[-1:], u, u[:1]])
            kext = np.concatenate([kappa[-1:], kappa, kappa[:1]])
        else:
            g = boundary_values(dom, boundary_data) if bc is BoundaryCondition.DIRICHLET else None
            if g is None:
                gl, gr = u[0], u[-1]
            else:
                gl, gr = 2 * g[0] - u[0], 2 * g[1] - u[-1]
            ext = np.concatenate([[gl], u, [gr]])
            kext = np.concatenate([kappa[:1], kappa, kappa[-1:]])
        kf = _harmonic(kext[:-1], kext[1:])
        flux = -kf * coeff.a_x * np.diff(ext) / h
        return np.diff(flux) / h
    nx, ny = dom.n
    hx, hy = dom.h
    U = u.reshape(nx, ny)
    K = kappa.reshape(nx, ny)
    if bc is BoundaryCondition.DIRICHLET:
        g = boundary_values(dom, boundary_data)
        gb, gr, gt, gl = g[:nx], g[nx : nx + ny], g[nx + ny : 2 * nx + ny][::-1], g[2 * nx + ny :][::-1]
        left, right = 2 * gl - U[0, :], 2 * gr - U[-1, :]
        bottom, top = 2 * gb - U[:, 0], 2 * gt - U[:, -1]
    else:
        left, right, bottom, top = U[0, :], U[-1, :], U[:, 0], U[:, -1]
    Ux = np.concatenate([left[None, :], U, right[None, :]], axis=0)
    Kx = np.concatenate([K[:1, :], K, K[-1:, :]], axis=0)
    fx = -_harmonic(Kx[:-1], Kx[1:]) * coeff.a_x * np.diff(Ux, axis=0) / hx
    Uy = np.concatenate([bottom[:, None], U, top[:, None]], axis=1)
    Ky = np.concatenate([K[:, :1], K, K[:, -1:]], axis=1)
    fy = -_harmonic(Ky[:, :-1], Ky[:, 1:]) * coeff.a_y * np.diff(Uy, axis=1) / hy
    out = np.diff(fx, axis=0) / hx + np.diff(fy, axis=1) / hy
    a12 = coeff.a_xy[1:-1, 1:-1]
    if np.any(a12 != 0):
        kv = 0.25 * (K[:-1, :-1] + K[1:, :-1] + K[:-1, 1:] + K[1:, 1:])
        dx = (U[1:, :-1] + U[1:, 1:] - U[:-1, :-1] - U[:-1, 1:]) / (2 * hx)
        dy = (U[:-1, 1:] + U[1:, 1:] - U[:-1, :-1] - U[1:, :-1]) / (2 * hy)
        q = kv * a12
        # half-gradient of sum_v 2 q (Dx u)(Dy u), scattered onto the 4 cells of each vertex
        cx = q * dy / (2 * hx)
        cy = q * dx / (2 * hy)
        cross = np.zeros_like(U)
        cross[:-1, :-1] += -cx - cy
        cross[1:, :-1] += cx - cy
        cross[:-1, 1:] += -cx + cy
        cross[1:, 1:] += cx + cy
        out = out + cross
    return out.ravel()
