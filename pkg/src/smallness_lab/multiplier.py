"""Positive multipliers and the reduction of a Schrödinger equation to
pure divergence form.

A positive solution ``phi`` of ``-div(A grad phi) + V phi = 0`` with
``phi = 1`` on the boundary turns solutions ``u`` into solutions
``v = u / phi`` of ``-div(phi^2 A grad v) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import CoefficientField, Domain, assemble, solve_dirichlet

__all__ = [
    "Multiplier",
    "MultiplierCertificationError",
    "Reduction",
    "build_multiplier",
    "reduce_to_divergence",
    "shift_nonneg",
]


class MultiplierCertificationError(RuntimeError):
    """The computed multiplier falls below its certified lower bound."""


def shift_nonneg(coeff: CoefficientField, only_if_negative: bool = False):
    """Add ``||V||_inf`` to ``V`` so that the new potential is nonnegative.

    Returns ``(shifted_coeff, shift)``. The shift accumulates in
    ``shifted_coeff.shift`` so downstream cutoffs can be translated back.
    With ``only_if_negative`` a potential that is already nonnegative is
    left alone and the shift is 0.
    """
    shift = coeff.V_sup
    if only_if_negative and coeff.V.min() >= 0:
        shift = 0.0
    return coeff.with_V(coeff.V + shift, shift=coeff.shift + shift), shift


@dataclass(frozen=True, eq=False)
class Multiplier:
    """Certified positive multiplier on the working subdomain.

    Attributes
    ----------
    phi
        The multiplier on every cell (the certificate applies on ``region``).
    region
        Boolean cell mask of the eroded subdomain.
    lower
        Certified lower bound ``c = min_region exp(-lambda_star (x1 - x0))``.
    lip
        ``max|phi| + max`` discrete gradient magnitude over ``region``.
    lambda_star
        Smallest rate for which ``exp(-lambda (x1 - x0))`` is a discrete subsolution.
    """

    domain: Domain
    coeff: CoefficientField
    phi: np.ndarray
    region: np.ndarray
    lower: float
    lip: float
    lambda_star: float
    x0: float
    rho: float
    residual: float
    fallback_used: bool = False

    def to_csv(self, path) -> None:
        c = self.domain.centers()
        with open(path, "w") as fh:
            fh.write(f"# lower={self.lower:.15e} lip={self.lip:.15e} lambda_star={self.lambda_star:.15e}\n")
            fh.write(",".join(["x", "y"][: self.domain.dim] + ["phi", "in_region"]) + "\n")
            for row, p, r in zip(c, self.phi, self.region):
                fh.write(",".join(f"{v:.12g}" for v in row) + f",{p:.15e},{int(r)}\n")


def _subsolution_defect(op, lam: float, x0: float) -> float:
    """Largest positive part of ``K psi`` for ``psi = exp(-lam (x1 - x0))``, relative."""
    dom = op.domain
    x1 = dom.centers()[:, 0]
    psi = np.exp(-lam * (x1 - x0))
    _, _, pts = dom.boundary_faces()
    g = np.exp(-lam * (pts[:, 0] - x0))
    rhs = np.zeros(dom.size)
    np.add.at(rhs, op.boundary_cells, op.boundary_coef * g)
    r = op.matrix @ psi - rhs
    scale = abs(op.matrix) @ psi
    np.add.at(scale, op.boundary_cells, op.boundary_coef * g)
    return float(np.max(r / np.maximum(scale, np.finfo(float).tiny)))


def _discrete_gradient(domain: Domain, phi: np.ndarray, region: np.ndarray) -> float:
    P = phi.reshape(domain.shape)
    R = region.reshape(domain.shape)
    best = 0.0
    for ax in range(domain.dim):
        d = np.diff(P, axis=ax) / domain.h[ax]
        both = np.logical_and(np.take(R, range(R.shape[ax] - 1), axis=ax), np.take(R, range(1, R.shape[ax]), axis=ax))
        if both.any():
            best = max(best, float(np.abs(d[both]).max()))
    return best


def build_multiplier(domain: Domain, bc, coeff: CoefficientField, rho: float, tol: float = 1e-10) -> Multiplier:
    """Solve for the multiplier and certify ``c <= phi <= 1`` on the eroded region.

    The multiplier problem always carries Dirichlet data ``phi = 1``,
    whatever ``bc`` the surrounding experiment uses. On the torus there
    is no boundary and only ``V = 0`` (where ``phi = 1``) is accepted.
    """
    if coeff.V.min() < 0:
        raise ValueError("build_multiplier needs V >= 0; apply shift_nonneg first")
    if domain.periodic:
        if np.any(coeff.V != 0):
            raise ValueError("on the torus a positive multiplier with phi = 1 exists only for V = 0")
        phi = np.ones(domain.size)
        region = np.ones(domain.size, bool)
        return Multiplier(domain, coeff, phi, region, 1.0, 1.0, 0.0, domain.bounds[0], rho, 0.0)
    op = assemble(domain, "dirichlet", coeff)
    phi = solve_dirichlet(op, 1.0, 0.0)
    region = domain.distance_to_boundary() >= rho / 2 - 1e-12
    if not region.any():
        raise ValueError(f"margin rho={rho:g} leaves no cells in the working subdomain")
    x0 = domain.bounds[0]

    def passes(lam):
        return _subsolution_defect(op, lam, x0) <= tol

    fallback = False
    if passes(0.0):
        lam_star = 0.0
    else:
        lo, hi = 0.0, 1.0
        while not passes(hi) and hi < 2.0**40:
            lo, hi = hi, 2 * hi
        if passes(hi):
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if passes(mid):
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-10 * hi:
                    break
            lam_star = hi
        else:
            lam1, lam2 = coeff.lambda1, coeff.lambda2
            lam_star = math.sqrt(lam1 * coeff.V_sup) + lam1 * lam2
            fallback = True
    # A defect accepted within ``tol`` is absorbed by a rate shift of order
    # sqrt(tol) per unit length, since the exponential's defect is quadratic
    # in the rate near the threshold.
    # With V = 0 the constant is an exact solution and needs no shift.
    if np.any(coeff.V > 0):
        width = domain.bounds[1] - domain.bounds[0]
        lam_star = lam_star + math.sqrt(tol) / width
    x1 = domain.centers()[:, 0]
    lower = float(np.exp(-lam_star * (x1[region] - x0)).min())
    slack = 1e-9
    below = np.flatnonzero(region & (phi < lower * (1 - slack)))
    if below.size:
        i = int(below[0])
        raise MultiplierCertificationError(
            f"multiplier {phi[i]:.6g} below certified bound {lower:.6g} at cell {i} "
            f"(x={domain.centers()[i]}); refine the grid"
        )
    above = np.flatnonzero(phi > 1 + slack)
    if above.size:
        i = int(above[0])
        raise MultiplierCertificationError(f"multiplier {phi[i]:.6g} exceeds 1 at cell {i}")
    lip = float(np.abs(phi[region]).max()) + _discrete_gradient(domain, phi, region)
    res = op.residual(phi, 1.0)
    residual = float(np.abs(res[region]).max())
    return Multiplier(domain, coeff, phi, region, lower, lip, float(lam_star), x0, rho, residual, fallback)


@dataclass(frozen=True, eq=False)
class Reduction:
    """Outcome of ``v = u / phi``.

    Unpacks as ``v, ahat = reduce_to_divergence(...)``.
    """

    v: np.ndarray
    ahat: CoefficientField
    residual_in: float
    residual_out: float
    constant: float
    ellipticity: tuple

    def __iter__(self):
        yield self.v
        yield self.ahat


def _interior(region: np.ndarray, domain: Domain) -> np.ndarray:
    """Region cells whose neighbours all lie in the region."""
    R = region.reshape(domain.shape)
    inner = R.copy()
    for ax in range(domain.dim):
        if domain.periodic:
            inner &= np.roll(R, 1, axis=ax) & np.roll(R, -1, axis=ax)
            continue
        sl_lo = [slice(None)] * domain.dim
        sl_hi = [slice(None)] * domain.dim
        sl_lo[ax], sl_hi[ax] = slice(1, None), slice(None, -1)
        nb = np.zeros_like(R)
        nb[tuple(sl_lo)] = R[tuple(sl_hi)]
        inner &= nb
        nb = np.zeros_like(R)
        nb[tuple(sl_hi)] = R[tuple(sl_lo)]
        inner &= nb
    return inner.ravel()


def reduce_to_divergence(u: np.ndarray, mult: Multiplier, coeff: CoefficientField, boundary_data=0.0) -> Reduction:
    """Divide by the multiplier and build ``Ahat = phi^2 A``.

    Face values of ``phi^2`` are the products ``phi_i phi_j`` of the two
    adjacent cells (the boundary value 1 on boundary faces), which makes
    the discrete identity
    ``div(Ahat grad v)_i = phi_i (H u)_i - u_i (H phi)_i`` exact for
    diagonal ``A``. Residuals are measured on region cells away from the
    region edge and normalised by sup norms over the region.
    """
    from .grid import flux_divergence

    dom = mult.domain
    if coeff.domain != dom or np.shape(u) != (dom.size,):
        raise ValueError("field, multiplier and coefficients must share a grid")
    u = np.asarray(u, dtype=float)
    phi = mult.phi
    v = u / phi
    P = phi.reshape(dom.shape)
    if dom.dim == 1:
        if dom.periodic:
            ext = np.concatenate([P[-1:], P, P[:1]])
        else:
            ext = np.concatenate([[1.0], P, [1.0]])
        a_x = coeff.a_x * ext[:-1] * ext[1:]
        ahat = CoefficientField(dom, a_x, np.zeros(dom.size), coeff.kappa)
    else:
        ex = np.concatenate([np.ones((1, P.shape[1])), P, np.ones((1, P.shape[1]))], 0)
        ey = np.concatenate([np.ones((P.shape[0], 1)), P, np.ones((P.shape[0], 1))], 1)
        a_x = coeff.a_x * ex[:-1] * ex[1:]
        a_y = coeff.a_y * ey[:, :-1] * ey[:, 1:]
        pv = np.ones((P.shape[0] + 1, P.shape[1] + 1))
        pv[1:-1, 1:-1] = (P[:-1, :-1] * P[1:, :-1] * P[:-1, 1:] * P[1:, 1:]) ** 0.5
        ahat = CoefficientField(dom, a_x, np.zeros(dom.size), coeff.kappa, a_y=a_y, a_xy=coeff.a_xy * pv)
    inner = _interior(mult.region, dom)
    bc = "periodic" if dom.periodic else "dirichlet"
    res_u = flux_divergence(coeff, bc, u, boundary_data) + coeff.kappa * coeff.V * u
    res_v = flux_divergence(ahat, bc, v, boundary_data)
    sup_u = float(np.abs(u[mult.region]).max()) or 1.0
    sup_v = float(np.abs(v[mult.region]).max()) or 1.0
    r_in = float(np.abs(res_u[inner]).max()) / sup_u if inner.any() else 0.0
    r_out = float(np.abs(res_v[inner]).max()) / sup_v if inner.any() else 0.0
    h = max(dom.h)
    # ellipticity of Ahat on faces touching the region
    lo, hi = ahat.ellipticity_extremes()
    if dom.dim == 1:
        R = mult.region
        faces = np.zeros(dom.n[0] + 1, bool)
        faces[:-1] |= R
        faces[1:] |= R
        lo, hi = float(ahat.a_x[faces].min()), float(ahat.a_x[faces].max())
    return Reduction(v, ahat, r_in, r_out, r_out / (r_in + h), (lo, hi))
