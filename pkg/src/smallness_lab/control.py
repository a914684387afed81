"""Observability constants, minimal-norm (HUM) low-mode controls and the
Lebeau-Robbiano dyadic synthesis for

    y' + H y = h 1_omega.

States are handled through their coefficients in the computed
eigenbasis. A control on the span ``lambda_k <= Lambda`` has the form
``h(t) = sum_j g_j(t) phi_j`` restricted to ``omega``, and it feeds every
mode ``k`` through the coupling ``G_kj = <phi_j 1_omega, phi_k>_kappa``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ObservationSet
from .spectral import EigenSystem

__all__ = [
    "ControlBlock",
    "ControlTrajectory",
    "HUMControl",
    "UnobservableSpanError",
    "gramian",
    "lebeau_robbiano",
    "low_mode_control",
    "observability_constant",
    "simulate_controlled",
]


class UnobservableSpanError(RuntimeError):
    """Raised when a Lebeau-Robbiano block meets a singular Gramian."""


def _coupling(es: EigenSystem, oset: ObservationSet, rows: int, cols: int) -> np.ndarray:
    Phi = es.vectors[oset.mask]
    w = es.weights[oset.mask]
    return Phi[:, :rows].T @ (Phi[:, :cols] * w[:, None])


def _interval_kernel(sigma: np.ndarray, tau: float) -> np.ndarray:
    """``int_0^tau exp(-sigma s) ds`` evaluated stably, ``tau`` at ``sigma = 0``."""
    sigma = np.asarray(sigma, float)
    out = np.empty_like(sigma)
    small = np.abs(sigma * tau) < 1e-12
    out[small] = tau
    s = sigma[~small]
    out[~small] = -np.expm1(-s * tau) / s
    return out


def gramian(es: EigenSystem, oset: ObservationSet, cutoff: float, tau: float) -> np.ndarray:
    """Controllability Gramian ``W_jk = G_jk int_0^tau exp(-(lambda_j + lambda_k) s) ds``."""
    m = es.span_size(cutoff)
    lam = es.physical_values[:m]
    G = _coupling(es, oset, m, m)
    G = 0.5 * (G + G.T)
    W = G * _interval_kernel(lam[:, None] + lam[None, :], tau)
    return 0.5 * (W + W.T)


def _roundoff(W: np.ndarray) -> float:
    return 1e-13 * max(float(np.abs(W).max()), np.finfo(float).tiny) * W.shape[0]


def observability_constant(es: EigenSystem, oset: ObservationSet, T: float, cutoff: float) -> float:
    """Best constant in ``||u(T)||^2 <= C int_0^T ||u(t)||_omega^2 dt`` on the span.

    With ``u(t) = exp(-t H) u0`` both sides are quadratic forms in the
    initial coefficients: ``E^2`` on the left (``E = diag(exp(-lambda T))``)
    and the Gramian ``W`` on the right, so ``C = lambda_max(E W^-1 E)``.
    Returns ``inf`` when ``W`` is singular to round-off, 0 on an empty span.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    m = es.span_size(cutoff)
    if m == 0:
        return 0.0
    W = gramian(es, oset, cutoff, T)
    mu, V = np.linalg.eigh(W)
    if mu[0] <= _roundoff(W):
        return math.inf
    E = np.exp(-es.physical_values[:m] * T)
    B = (V.T * E[None, :]) / np.sqrt(mu)[:, None]  # Lambda^{-1/2} V' E
    return float(np.linalg.norm(B, 2) ** 2)


@dataclass(frozen=True, eq=False)
class HUMControl:
    """Minimal-norm control ``g(t) = -exp(-Lambda (t1 - t)) p`` on ``[t0, t1]``."""

    t0: float
    t1: float
    cutoff: float
    lambdas: np.ndarray
    p: np.ndarray
    cost: float
    target: np.ndarray
    observable: bool = True

    @property
    def span(self) -> int:
        return self.lambdas.size

    def coefficients(self, t: float) -> np.ndarray:
        """Control coefficients ``g_j(t)`` on the span."""
        if not self.t0 - 1e-14 <= t <= self.t1 + 1e-14:
            return np.zeros(self.span)
        return -np.exp(-self.lambdas * (self.t1 - t)) * self.p

    def field(self, es: EigenSystem, oset: ObservationSet, t: float) -> np.ndarray:
        h = es.vectors[:, : self.span] @ self.coefficients(t)
        return np.where(oset.mask, h, 0.0)

    def __iter__(self):
        yield self.p
        yield self.cost


def _solve_spd(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu, V = np.linalg.eigh(W)
    x = V @ ((V.T @ b) / mu)
    for _ in range(2):
        r = b - W @ x
        x = x + V @ ((V.T @ r) / mu)
    return x


def low_mode_control(es: EigenSystem, oset: ObservationSet, y0: np.ndarray, cutoff: float, t0: float, t1: float,
                     coeffs: np.ndarray | None = None) -> HUMControl:
    """HUM control steering the span below ``cutoff`` from ``y0`` at ``t0`` to zero at ``t1``.

    ``coeffs`` may supply the eigen-coefficients of ``y0`` directly. The
    returned ``cost`` is ``int ||h||^2_{L2(omega)} dt = target' W^-1 target``,
    or ``inf`` with ``observable=False`` when the Gramian is singular.
    """
    if t1 <= t0:
        raise ValueError("need t1 > t0")
    m = es.span_size(cutoff)
    lam = es.physical_values[:m]
    a0 = (es.coefficients(y0) if coeffs is None else np.asarray(coeffs, float))[:m]
    tau = t1 - t0
    target = np.exp(-lam * tau) * a0
    if m == 0 or not np.any(target):
        return HUMControl(t0, t1, cutoff, lam, np.zeros(m), 0.0, target)
    W = gramian(es, oset, cutoff, tau)
    if np.linalg.eigvalsh(W)[0] <= _roundoff(W):
        return HUMControl(t0, t1, cutoff, lam, np.full(m, np.nan), math.inf, target, observable=False)
    p = _solve_spd(W, target)
    cost = float(p @ W @ p)
    return HUMControl(t0, t1, cutoff, lam, p, cost, target)


def _apply_control(es: EigenSystem, coupling: np.ndarray, ctrl: HUMControl) -> np.ndarray:
    """Effect at ``t1`` on every mode of the control (coefficient vector)."""
    lam_all = es.physical_values
    m = ctrl.span
    K = _interval_kernel(lam_all[:, None] + ctrl.lambdas[None, :], ctrl.t1 - ctrl.t0)
    return -(coupling[:, :m] * K) @ ctrl.p


@dataclass(frozen=True, eq=False)
class ControlBlock:
    index: int
    cutoff: float
    start: float
    switch: float
    end: float
    control: HUMControl
    cost: float
    norm_start: float
    norm_end: float


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Lebeau-Robbiano run: blocks, checkpoints and cost ledger."""

    T: float
    blocks: list
    checkpoints: list  # coefficient vectors at block boundaries, starting with y0
    cost: float
    terminal_norm: float
    initial_norm: float
    tol: float
    terminal_coefficients: np.ndarray = field(repr=False, default=None)

    @property
    def relative_terminal_norm(self) -> float:
        return self.terminal_norm / self.initial_norm if self.initial_norm > 0 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "Lambda", "start", "switch", "end", "cost", "norm_start", "norm_end"])
            for b in self.blocks:
                w.writerow([b.index] + [f"{v:.12e}" for v in (b.cutoff, b.start, b.switch, b.end, b.cost,
                                                               b.norm_start, b.norm_end)])


def block_count(T: float, lambda0: float, tol: float) -> int:
    """Smallest ``J`` with ``exp(-Lambda_J (T - T_J) / 2) <= tol / 2``."""
    J = 0
    while math.exp(-lambda0 * 4.0**J * T * 2.0**-J / 2) > tol / 2:
        J += 1
        if J > 60:
            raise ValueError("schedule does not reach the tolerance")
    return J


def lebeau_robbiano(
    es: EigenSystem,
    oset: ObservationSet,
    y0: np.ndarray,
    T: float,
    lambda0: float = 100.0,
    tol: float = 1e-6,
    max_blocks: int = 12,
) -> ControlTrajectory:
    """Dyadic active/passive schedule on ``[0, T]``.

    Block ``j`` covers ``[T_j, T_{j+1}]`` with ``T_j = T (1 - 2^-j)``: a HUM
    control on the span ``Lambda_j = lambda0 4^j`` during the first half,
    free decay during the second. The last block decays until ``T``. The
    block count starts at :func:`block_count` and grows while the actual
    terminal norm exceeds ``tol ||y0||`` (controls excite the modes above
    each cutoff, which the a-priori rule ignores).
    """
    if not 0 < T:
        raise ValueError("T must be positive")
    lam = es.physical_values
    a_init = es.coefficients(y0)
    n0 = float(np.linalg.norm(a_init))
    coupling = _coupling(es, oset, es.count, es.count)
    J = block_count(T, lambda0, tol)
    while True:
        a = a_init.copy()
        blocks, checkpoints = [], [a.copy()]
        for j in range(J + 1):
            start = T * (1 - 2.0**-j)
            end = T if j == J else T * (1 - 2.0 ** -(j + 1))
            switch = start + 0.5 * T * 2.0 ** -(j + 1)
            cutoff = lambda0 * 4.0**j
            norm_start = float(np.linalg.norm(a))
            ctrl = low_mode_control(es, oset, None, cutoff, start, switch, coeffs=a)
            if not ctrl.observable:
                raise UnobservableSpanError(f"Gramian singular in block j={j} at Lambda_j={cutoff:g}")
            a = np.exp(-lam * (switch - start)) * a + _apply_control(es, coupling, ctrl)
            a = np.exp(-lam * (end - switch)) * a
            checkpoints.append(a.copy())
            blocks.append(ControlBlock(j, cutoff, start, switch, end, ctrl, ctrl.cost, norm_start,
                                       float(np.linalg.norm(a))))
        terminal = float(np.linalg.norm(a))
        if terminal <= tol * n0 or J >= max_blocks:
            break
        J += 1
    cost = float(sum(b.cost for b in blocks))
    return ControlTrajectory(T, blocks, checkpoints, cost, terminal, n0, tol, a)


def simulate_controlled(es: EigenSystem, oset: ObservationSet, trajectory, y0: np.ndarray):
    """Independent Duhamel evaluation of a controlled run.

    ``trajectory`` is a :class:`ControlTrajectory` or a single
    :class:`HUMControl`. Each control profile ``phi_j 1_omega`` is
    projected onto every eigenvector by explicit weighted sums, and the
    time integrals ``int exp(-lambda_k (t1 - s)) exp(-lambda_j (t1 - s)) ds``
    are evaluated in closed form. Returns ``(state_field, coefficients)``
    at the end of the run.
    """
    lam = es.physical_values
    w = es.weights
    a = np.array([float(np.sum(y0 * es.vectors[:, k] * w)) for k in range(es.count)])
    if isinstance(trajectory, HUMControl):
        segments = [(trajectory.t0, trajectory.t1, trajectory, trajectory.t1)]
    else:
        segments = [(b.start, b.switch, b.control, b.end) for b in trajectory.blocks]
    profiles = {}
    for t0, t1, ctrl, t_end in segments:
        tau = t1 - t0
        decayed = a * np.exp(-lam * tau)
        for j in range(ctrl.span):
            if ctrl.p[j] == 0:
                continue
            if j not in profiles:
                prof = np.where(oset.mask, es.vectors[:, j], 0.0)
                profiles[j] = np.array([float(np.sum(prof * es.vectors[:, k] * w)) for k in range(es.count)])
            rate = lam + ctrl.lambdas[j]
            with np.errstate(over="ignore", invalid="ignore"):
                integral = np.where(np.abs(rate) * tau < 1e-12, tau, (1.0 - np.exp(-rate * tau)) / rate)
            decayed = decayed - profiles[j] * ctrl.p[j] * integral
        a = decayed * np.exp(-lam * (t_end - t1))
    return es.vectors @ a, a
