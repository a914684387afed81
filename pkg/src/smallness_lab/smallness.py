"""Empirical propagation-of-smallness checks.

Both checks fit a pair ``(C, alpha)`` such that, for every sample,

    sup_K |u| <= C (sup_E |u|)^alpha (sup_Omega |u|)^(1 - alpha).

Working with the normalised logarithms ``x = log(sE / sN)`` and
``y = log(sK / sN)`` the inequality reads ``y - alpha x <= log C``. The
default fit picks the ``alpha`` whose envelope ``max_i (y_i - alpha x_i)``
is tightest in the least-squares sense and then sets ``log C`` to that
maximum, so every sample satisfies the fitted inequality.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import ObservationSet
from .grid import BoundaryCondition, CoefficientField, Domain, assemble, factorize_dirichlet
from .multiplier import Multiplier
from .spectral import EigenSystem, ghost_lift, project

__all__ = [
    "PropagationReport",
    "fit_interpolation",
    "minimal_constant",
    "sample_solutions",
    "verify_gradient_smallness",
    "verify_three_sphere",
]

SLACK = 1.05


def sample_solutions(
    domain: Domain,
    bc,
    coeff: CoefficientField,
    count: int,
    seed: int,
    boundary_fns=None,
    smoothing: int = 3,
) -> list:
    """Solutions of ``-div(A grad u) + V u = 0`` with random Dirichlet data.

    Boundary data is standard normal per boundary face, smoothed by
    ``smoothing`` passes of a three-point moving average running along the
    boundary. When ``boundary_fns`` is given, each callable supplies the
    data of one sample instead and ``count``/``seed`` are ignored.
    """
    if BoundaryCondition(bc) is not BoundaryCondition.DIRICHLET:
        raise ValueError("solution samples are generated from Dirichlet data")
    if coeff.V.min() < 0:
        raise ValueError("sampling needs V >= 0; apply shift_nonneg first")
    op = assemble(domain, "dirichlet", coeff)
    solve = factorize_dirichlet(op)
    if boundary_fns is not None:
        return [solve(fn) for fn in boundary_fns]
    rng = np.random.default_rng(seed)
    nb = op.boundary_cells.size
    out = []
    for _ in range(count):
        g = rng.standard_normal(nb)
        for _ in range(smoothing):
            g = (np.roll(g, 1) + g + np.roll(g, -1)) / 3.0
        out.append(solve(g))
    return out


def _envelope_objective(alpha, x, y):
    r = y - alpha * x
    return float(np.sum((r - r.max()) ** 2))


def fit_interpolation(x: np.ndarray, y: np.ndarray):
    """Envelope fit and plain least-squares fit of ``y ≈ log C + alpha x``.

    Returns ``(alpha, C, lsq_alpha, lsq_C)``; ``alpha`` is restricted to
    ``[0, 1]``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    grid = np.linspace(0.0, 1.0, 2001)
    R = y[None, :] - grid[:, None] * x[None, :]
    obj = np.sum((R - R.max(axis=1, keepdims=True)) ** 2, axis=1)
    k = int(np.argmin(obj))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    alpha = grid[k]
    if hi > lo:
        res = minimize_scalar(_envelope_objective, bounds=(lo, hi), args=(x, y), method="bounded",
                              options={"xatol": 1e-10})
        if res.fun <= obj[k]:
            alpha = float(res.x)
    C = float(np.exp(np.max(y - alpha * x)))
    if x.size >= 2 and np.ptp(x) > 0:
        A = np.stack([np.ones_like(x), x], 1)
        (b0, b1), *_ = np.linalg.lstsq(A, y, rcond=None)
        lsq_alpha, lsq_C = float(b1), float(np.exp(b0))
    else:
        lsq_alpha, lsq_C = float("nan"), float("nan")
    return float(alpha), C, lsq_alpha, lsq_C


@dataclass(frozen=True, eq=False)
class PropagationReport:
    """Fitted interpolation inequality over a sample set.

    ``rows`` holds ``(sup_E, sup_K, sup_Omega, ratio)`` per sample, where
    ``ratio`` compares ``sup_K`` with the fitted right-hand side.
    """

    samples: int
    alpha_fit: float
    C_fit: float
    worst_ratio: float
    rows: np.ndarray
    lsq_alpha: float
    lsq_C: float
    lsq_worst_ratio: float
    flags: tuple = field(default_factory=tuple)
    label: str = "empirical fit"

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= SLACK and "unique-continuation violation" not in self.flags

    @property
    def degenerate(self) -> bool:
        return not 0.0 < self.alpha_fit < 1.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "sup_E", "sup_K", "sup_Omega", "ratio"])
            for i, r in enumerate(self.rows):
                w.writerow([i] + [f"{v:.12e}" for v in r])


def _report(sE, sK, sN, scale=None) -> PropagationReport:
    """Fit and flag; ``scale`` is the per-sample size that zero tests are relative to."""
    sE, sK, sN = (np.asarray(a, float) for a in (sE, sK, sN))
    scale = sN if scale is None else np.asarray(scale, float)
    flags = []
    live = (sN > 0) & (scale > 0)
    vanish = sE <= 1e-14 * scale
    uc = live & vanish & (sK > 1e-8 * scale)
    if uc.any():
        flags.append("unique-continuation violation")
    fit = live & ~vanish
    if fit.sum() == 0:
        raise ValueError("no sample with a nonzero trace on E")
    x = np.log(sE[fit] / sN[fit])
    y = np.log(np.maximum(sK[fit], np.finfo(float).tiny) / sN[fit])
    alpha, C, la, lc = fit_interpolation(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = C * sE**alpha * sN ** (1 - alpha)
        ratio = np.where(live & ~vanish, sK / rhs, 0.0)
        ratio = np.where(uc, np.inf, ratio)
        lsq_ratio = np.where(fit, sK / (lc * sE**la * sN ** (1 - la)), 0.0) if np.isfinite(la) else ratio
    worst = float(np.max(ratio)) if ratio.size else 0.0
    if worst > SLACK:
        flags.append("worst ratio above slack")
    if not 0.0 < alpha < 1.0:
        flags.append("degenerate exponent")
    rows = np.stack([sE, sK, sN, ratio], 1)
    return PropagationReport(int(sE.size), alpha, C, worst, rows, la, lc, float(np.max(lsq_ratio)), tuple(flags))


def _sup(u, mask):
    return float(np.abs(u[mask]).max()) if mask.any() else 0.0


def verify_three_sphere(samples, K: ObservationSet, E: ObservationSet, domain: Domain, omega: ObservationSet | None = None):
    """Fit the three-sphere inequality on solution samples.

    ``sup_Omega`` is taken over ``omega`` when given (e.g. a disk inside a
    square), otherwise over the whole grid.
    """
    if E.is_empty():
        raise ValueError("E has no cells at this resolution")
    full = omega.mask if omega is not None else np.ones(domain.size, bool)
    sE = [_sup(u, E.mask) for u in samples]
    sK = [_sup(u, K.mask) for u in samples]
    sN = [_sup(u, full) for u in samples]
    return _report(sE, sK, sN)


def minimal_constant(rows: np.ndarray, alpha: float) -> float:
    """Smallest ``C`` making every row pass at the given exponent."""
    sE, sK, sN = rows[:, 0], rows[:, 1], rows[:, 2]
    live = sN > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = sK[live] / (sE[live] ** alpha * sN[live] ** (1 - alpha))
    q = np.where(sK[live] == 0, 0.0, q)
    return float(np.max(q)) if q.size else 0.0


def lifted_w1inf_norm(gf, region: np.ndarray) -> float:
    """``max(|F|, |grad_{x,y} F|)`` over ``region x [-Y, Y]`` with centred differences."""
    dom = gf.base.op.domain
    F = gf.values.reshape((gf.y_grid.size,) + dom.shape)
    grads = np.gradient(F, gf.dy, *dom.h)
    mag = np.sqrt(sum(g * g for g in grads)).reshape(gf.y_grid.size, -1)
    vals = np.abs(gf.values)
    return float(max(vals[:, region].max(), mag[:, region].max()))


def verify_gradient_smallness(
    es: EigenSystem,
    samples,
    K: ObservationSet,
    E: ObservationSet,
    cutoff: float,
    mult: Multiplier | None = None,
    Y: float = 1.0,
    m_y: int = 21,
):
    """Fit the gradient form on lifted frequency-limited samples.

    Each sample ``f`` is lifted with :func:`ghost_lift`. The trace
    ``d/dy F(., 0)`` equals ``Pi f``, which is evaluated through the
    projector. The right-hand norm is the lifted ``W^{1,inf}`` surrogate
    over the multiplier's working region (the whole grid without one).
    """
    if E.is_empty():
        raise ValueError("E has no cells at this resolution")
    region = mult.region if mult is not None else np.ones(es.op.domain.size, bool)
    sE, sK, sN, scale = [], [], [], []
    for f in samples:
        gf = ghost_lift(es, f, cutoff, Y, m_y)
        trace = project(es, f, cutoff)
        sE.append(_sup(trace, E.mask))
        sK.append(_sup(trace, K.mask))
        sN.append(lifted_w1inf_norm(gf, region))
        scale.append(float(np.abs(trace).max()))
    if mult is not None and not (K.is_subset(ObservationSet(K.domain, region))):
        warnings.warn("K extends outside the multiplier's working region", stacklevel=2)
    return _report(sE, sK, sN, scale)
