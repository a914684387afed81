"""Acceptance suites.

Every criterion is a function returning a :class:`CriterionResult` with the
measured quantities it was judged on. ``fast`` skips the 2D three-sphere
sweep and the Lebeau-Robbiano T-sweep; ``full`` runs everything.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import (
    gramian,
    lebeau_robbiano,
    low_mode_control,
    observability_constant,
    simulate_controlled,
)
from .doubling import double, verify_extension
from .estimates import (
    SpectralConstantCurve,
    best_constant_l2,
    fit_sqrt_growth,
    replay_measurable_reduction,
)
from .geometry import ObservationSet, good_point_blocks, thickness
from .grid import CoefficientField, Domain, assemble
from .multiplier import build_multiplier, reduce_to_divergence
from .smallness import _report, sample_solutions, verify_gradient_smallness, verify_three_sphere
from .spectral import eigendecompose, ghost_lift, ghost_residual, project

__all__ = ["CriterionResult", "CRITERIA", "SUITES", "run_suite"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {vals} ({self.seconds:.1f}s)"


def _short(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


# ---------------------------------------------------------------------------
# 1-3: discretisation, projector, multiplier


def eigenvalue_oracle() -> dict:
    errs = {}
    for n in (200, 400):
        d = Domain.interval(0.0, math.pi, n)
        es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)), 10)
        k = np.arange(1, 11)
        errs[n] = np.abs(es.physical_values / k**2 - 1.0)
    factor = float(np.min(errs[200] / errs[400]))
    worst = float(errs[400].max())
    return {"max_rel_err": worst, "convergence_factor": factor, "passed": worst <= 0.01 and factor >= 3.5}


def projector_algebra(trials: int = 100, seed: int = 1) -> dict:
    rng = np.random.default_rng(seed)
    d = Domain.interval(0.0, 1.0, 120)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.4 * np.sin(5 * x), V=lambda x: 2 * x,
                                        kappa=lambda x: 1 + 0.5 * x * x)
    es = eigendecompose(assemble(d, "dirichlet", c))
    idem = adj = 0.0
    for _ in range(trials):
        cutoff = es.physical_values[rng.integers(0, es.count)]
        u, v = rng.standard_normal((2, d.size))
        pu = project(es, u, cutoff)
        idem = max(idem, es.norm(project(es, pu, cutoff) - pu) / es.norm(u))
        lhs = float(np.sum(pu * v * es.weights))
        rhs = float(np.sum(u * project(es, v, cutoff) * es.weights))
        adj = max(adj, abs(lhs - rhs) / (es.norm(u) * es.norm(v)))
    return {"idempotence": idem, "self_adjointness": adj, "passed": idem <= 1e-10 and adj <= 1e-10}


def multiplier_closed_form(n: int = 200) -> dict:
    d = Domain.interval(0.0, 1.0, n)
    c = CoefficientField.constant(d, V=4.0)
    m = build_multiplier(d, "dirichlet", c, rho=0.1)
    x = d.centers()[:, 0]
    exact = np.cosh(2 * (x - 0.5)) / math.cosh(1.0)
    err = float(np.abs(m.phi - exact).max())
    h = d.h[0]
    return {"max_err": err, "bound_5h2": 5 * h * h, "certified_c": m.lower, "min_phi": float(m.phi.min()),
            "passed": err <= 5 * h * h and m.lower <= m.phi.min()}


# ---------------------------------------------------------------------------
# 4-6: reduction, ghost lift, spectral constant


def _random_coefficients(domain: Domain, rng) -> CoefficientField:
    f1, f2, p1, p2 = rng.uniform(1, 6), rng.uniform(1, 6), rng.uniform(0, 6.3), rng.uniform(0, 6.3)
    amp, vamp = rng.uniform(0.1, 0.4), rng.uniform(0, 5)
    if domain.dim == 1:
        return CoefficientField.from_functions(
            domain, A=lambda x: 1 + amp * np.sin(f1 * x + p1), V=lambda x: vamp * (1 + np.cos(f2 * x + p2)))
    return CoefficientField.from_functions(
        domain,
        A=lambda x, y: 1 + amp * np.sin(f1 * x + p1) * np.cos(f2 * y),
        A22=lambda x, y: 1 + amp * np.cos(f2 * x + p2),
        V=lambda x, y: vamp * (1 + np.sin(f1 * y + p2)),
    )


def divergence_reduction(samples: int = 20, seed: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    worst_excess = worst_round = 0.0
    ok = True
    for i in range(samples):
        d = Domain.interval(0.0, 1.0, 200) if i < samples // 2 else Domain.rectangle(0, 1, 0, 1, 40)
        c = _random_coefficients(d, rng)
        u = sample_solutions(d, "dirichlet", c, 1, int(rng.integers(1 << 31)))[0]
        mult = build_multiplier(d, "dirichlet", c, rho=0.1)
        red = reduce_to_divergence(u, mult, c)
        h = max(d.h)
        excess = red.residual_out - (10 * red.residual_in + h)
        rt = float(np.abs(red.v * mult.phi - u).max() / max(np.abs(u).max(), 1e-300))
        worst_excess = max(worst_excess, excess)
        worst_round = max(worst_round, rt)
        ok &= excess <= 0 and rt <= 1e-12
    return {"max(res_out-10res_in-h)": worst_excess, "round_trip": worst_round, "passed": bool(ok)}


def _ghost_errors(n: int, m_y: int, samples: int, seed: int):
    d = Domain.interval(0.0, math.pi, n)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.3 * np.sin(x), V=lambda x: 1 + 0 * x,
                                        kappa=lambda x: 1 + 0.1 * np.cos(x))
    es = eigendecompose(assemble(d, "dirichlet", c), 30)
    cutoff = es.physical_values[19]
    rng = np.random.default_rng(seed)
    x = d.centers()[:, 0]
    res, dyerr, zero = [], [], 0.0
    for _ in range(samples):
        a = rng.standard_normal(25)
        f = sum(a[j] * np.sin((j + 1) * x) for j in range(25))
        gf = ghost_lift(es, f, cutoff, Y=0.5, m_y=m_y)
        res.append(ghost_residual(gf, c))
        pf = project(es, f, cutoff)
        dyerr.append(float(np.abs(gf.y_derivative_at_zero() - pf).max() / np.abs(pf).max()))
        zero = max(zero, float(np.abs(gf.values[gf.zero_index()]).max()))
    return np.array(res), np.array(dyerr), zero


def ghost_lift_check(samples: int = 10, seed: int = 5) -> dict:
    r1, e1, z1 = _ghost_errors(200, 81, samples, seed)
    r2, e2, z2 = _ghost_errors(400, 161, samples, seed)
    res_ratio = float(np.min(r1 / r2))
    dy_ratio = float(np.min(e1 / e2))
    zero = max(z1, z2)
    return {"residual_ratio": res_ratio, "dy_error_ratio": dy_ratio, "trace": zero,
            "passed": res_ratio >= 3 and dy_ratio >= 3 and zero == 0.0}


def spectral_constant_oracle() -> dict:
    d = Domain.interval(0.0, math.pi, 400)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)), 5)
    om = ObservationSet.from_boxes(d, [[0.0, math.pi / 2]])
    C = best_constant_l2(es, om, 1.0)
    return {"constant": C, "error": abs(C - math.sqrt(2)), "passed": abs(C - math.sqrt(2)) <= 1e-3}


# ---------------------------------------------------------------------------
# 7-9: growth law, three-sphere, gradient smallness


def growth_law(n: int = 256) -> dict:
    """Eight dyadic cutoffs per set.

    The fat Cantor window starts one octave lower: at ``Lambda = 128`` its
    Gram matrix is singular to roundoff and the constant is reported as
    infinite.
    """
    d = Domain.torus1d(2 * math.pi, n)
    es = eigendecompose(assemble(d, "periodic", CoefficientField.constant(d)), 200)
    sets = {
        "periodic": (ObservationSet.periodic(d, 2 * math.pi / 3, 0.5), 2.0 ** np.arange(0, 8)),
        "fat_cantor": (ObservationSet.fat_cantor(d, 8, 0.25), 2.0 ** np.arange(-1, 7)),
    }
    out, ok = {}, True
    for name, (s, lams) in sets.items():
        fit = fit_sqrt_growth(SpectralConstantCurve.measure(es, s, lams, "L2->L2", name))
        out[f"{name}_res_sqrt"] = fit.residual
        out[f"{name}_res_lin"] = fit.residual_linear
        out[f"{name}_b"] = fit.b
        ok &= fit.residual <= fit.residual_linear and fit.b > 0 and fit.used == lams.size
    out["gamma_periodic"] = thickness(sets["periodic"][0], math.pi).gamma
    out["measure_fraction_cantor"] = sets["fat_cantor"][0].measure() / (2 * math.pi)
    out["passed"] = bool(ok)
    return out


def hadamard_oracle(n: int = 400, r=(0.3, 0.6, 0.9)) -> dict:
    d = Domain.rectangle(-1, 1, -1, 1, n)
    c = CoefficientField.constant(d)
    fns = [(lambda x, y, k=k: np.real((x + 1j * y) ** k)) for k in range(13)]
    samples = sample_solutions(d, "dirichlet", c, 0, 0, boundary_fns=fns)
    E, K, Om = (ObservationSet.disk(d, (0.0, 0.0), rr) for rr in r)
    rep = verify_three_sphere(samples, K, E, d, omega=Om)
    expected = math.log(r[2] / r[1]) / math.log(r[2] / r[0])
    return {"alpha": rep.alpha_fit, "expected": expected, "worst_ratio": rep.worst_ratio,
            "passed": abs(rep.alpha_fit - expected) <= 0.05 and rep.worst_ratio <= 1.05}


def gradient_suite(seed: int = 7) -> dict:
    d = Domain.interval(0.0, 1.0, 400)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.25 * np.sin(3 * x), V=lambda x: 4 + np.cos(5 * x),
                                        kappa=lambda x: 1 + 0.2 * x)
    es = eigendecompose(assemble(d, "dirichlet", c), 60)
    mult = build_multiplier(d, "dirichlet", c, 10 * d.h[0])
    E = ObservationSet.fat_cantor(d, 8, 0.5, span=(0.1, 0.4))
    K = ObservationSet.from_boxes(d, [[0.6, 0.9]])
    rng = np.random.default_rng(seed)
    rows = []
    for idx in (4, 8, 12, 16, 20):
        cutoff = es.physical_values[idx - 1]
        S = []
        for _ in range(10):
            s = rng.uniform(0, 1)
            S.append(es.vectors[:, :idx] @ (rng.standard_normal(idx) * np.exp(-s * np.arange(idx))))
        rows.append(verify_gradient_smallness(es, S, K, E, cutoff, mult).rows)
    R = np.concatenate(rows)
    joint = _report(R[:, 0], R[:, 1], R[:, 2], np.ones(len(R)))
    cumulative = [_report(R[: 10 * k, 0], R[: 10 * k, 1], R[: 10 * k, 2], np.ones(10 * k)).alpha_fit
                  for k in range(1, 6)]
    spread = max(cumulative) - min(cumulative)
    return {"alpha": joint.alpha_fit, "worst_ratio": joint.worst_ratio, "cumulative_alpha": cumulative,
            "spread": spread,
            "passed": joint.passed and 0 < joint.alpha_fit < 1 and max(abs(a - joint.alpha_fit) for a in cumulative) <= 0.1}


# ---------------------------------------------------------------------------
# 10-12: control


def hum_exactness(seed: int = 10) -> dict:
    d = Domain.interval(0.0, 1.0, 200)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)), 40)
    om = ObservationSet.from_boxes(d, [[0.2, 0.6]])
    cutoff = es.physical_values[14]
    rng = np.random.default_rng(seed)
    y0 = rng.standard_normal(d.size)
    T = 0.05
    ctrl = low_mode_control(es, om, y0, cutoff, 0.0, T)
    _, a = simulate_controlled(es, om, ctrl, y0)
    rel = float(np.linalg.norm(a[:15]) / es.norm(y0))
    # single mode with full observation: scalar Gramian
    whole = ObservationSet.whole(d)
    lam1 = es.physical_values[0]
    single = low_mode_control(es, whole, es.vectors[:, 0], lam1, 0.0, T)
    W = -math.expm1(-2 * lam1 * T) / (2 * lam1)
    closed = math.exp(-2 * lam1 * T) / W
    rel_cost = abs(single.cost - closed) / closed
    return {"low_mode_terminal": rel, "single_mode_cost": single.cost, "closed_form": closed,
            "cost_rel_err": rel_cost, "passed": rel <= 1e-8 and rel_cost <= 1e-6}


def lebeau_robbiano_sweep(seed: int = 0) -> dict:
    d = Domain.interval(0.0, 1.0, 100)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)))
    om = ObservationSet.from_boxes(d, [[0.1, 0.25], [0.6, 0.7]])
    rng = np.random.default_rng(seed)
    y0 = rng.standard_normal(d.size)
    y0 /= es.norm(y0)
    Ts = np.array([0.1, 0.2, 0.4, 0.8])
    costs, terms, oracle_ok = [], [], True
    for T in Ts:
        tr = lebeau_robbiano(es, om, y0, T, lambda0=100.0, tol=1e-6)
        _, a = simulate_controlled(es, om, tr, y0)
        sim = float(np.linalg.norm(a))
        oracle_ok &= sim <= 2 * tr.terminal_norm + 1e-12 and sim <= 1e-6
        costs.append(tr.cost)
        terms.append(tr.relative_terminal_norm)
    y = np.log(costs)
    A = np.stack([np.ones_like(Ts), 1 / Ts], 1)
    (a0, C), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((A @ [a0, C] - y) ** 2)))
    rng_y = float(np.ptp(y))
    return {"max_terminal": max(terms), "C": float(C), "rms": rms, "range": rng_y, "oracle_agrees": bool(oracle_ok),
            "passed": max(terms) <= 1e-6 and C > 0 and rms <= 0.15 * rng_y and oracle_ok}


def observability_duality(instances: int = 20, seed: int = 12) -> dict:
    rng = np.random.default_rng(seed)
    d = Domain.interval(0.0, 1.0, 100)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)), 12)
    worst_dual = 0.0
    ok = True
    for _ in range(instances):
        lo = rng.uniform(0.0, 0.7)
        om = ObservationSet.from_boxes(d, [[lo, lo + rng.uniform(0.1, 0.3)]])
        m = int(rng.integers(2, 6))
        cutoff = es.physical_values[m - 1]
        T = rng.uniform(0.02, 0.1)
        Q = observability_constant(es, om, T, cutoff)
        cols = []
        for i in range(m):
            e = np.zeros(es.count)
            e[i] = 1.0
            cols.append(low_mode_control(es, om, None, cutoff, 0.0, T, coeffs=e).p)
        M = np.exp(-es.physical_values[:m] * T)[:, None] * np.array(cols).T
        worst = float(np.linalg.eigvalsh((M + M.T) / 2)[-1])
        rel = abs(worst - Q) / Q
        worst_dual = max(worst_dual, rel)
        for _ in range(20):
            a = rng.standard_normal(m)
            a /= np.linalg.norm(a)
            e = np.zeros(es.count)
            e[:m] = a
            ok &= low_mode_control(es, om, None, cutoff, 0.0, T, coeffs=e).cost <= Q * (1 + 1e-9)
        ok &= rel <= 1e-6
    return {"max_rel_gap": worst_dual, "passed": bool(ok)}


# ---------------------------------------------------------------------------
# 13-15: doubling, reductions, determinism


def doubling_check(n: int = 200) -> dict:
    d = Domain.interval(0.0, 1.0, n)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.3 * np.sin(4 * x), V=lambda x: 2 + x,
                                        kappa=lambda x: 1 + 0.2 * np.cos(3 * x))
    out, ok = {}, True
    h2 = d.h[0] ** 2
    for bc in ("dirichlet", "neumann"):
        rep = verify_extension(double(d, bc, c).with_spectra(5), 5)
        out[f"{bc}_residual"] = rep.max_residual
        out[f"{bc}_gap"] = rep.max_relative_gap
        ok &= rep.max_residual <= h2 and rep.max_relative_gap <= 0.01
    out["passed"] = bool(ok)
    return out


def reduction_replays(instances: int = 20, seed: int = 14) -> dict:
    rng = np.random.default_rng(seed)
    d = Domain.torus1d(2 * math.pi, 256)
    es = eigendecompose(assemble(d, "periodic", CoefficientField.constant(d)), 40)
    R = math.pi / 2
    ok, branches, worst_keep = True, [], math.inf
    for _ in range(instances):
        s = ObservationSet.periodic(d, rng.uniform(0.5, 1.5), rng.uniform(0.3, 0.7), rng.uniform(0, 1))
        cutoff = float(rng.choice(es.physical_values[1:20]))
        Cl2 = best_constant_l2(es, s, cutoff)
        C_hyp = 4.0 * max(1.0, math.log(Cl2) + 1.0)
        v = replay_measurable_reduction(es, s, cutoff, C_hyp)
        branches.append(v.branch)
        ok &= v.passed
        g = es.vectors[:, : es.span_size(cutoff)] @ rng.standard_normal(es.span_size(cutoff))
        for blk in good_point_blocks(g, s, R):
            if blk.block.size:
                frac = blk.kept.size / blk.block.size
                worst_keep = min(worst_keep, frac)
                ok &= frac >= 0.5
    return {"branches": sorted(set(branches)), "min_kept_fraction": worst_keep, "passed": bool(ok)}


def determinism() -> dict:
    from .cli import run_experiment
    from .config import load_config

    with tempfile.TemporaryDirectory() as tmp:
        manifests = []
        for run in range(2):
            folder = Path(tmp) / f"run{run}"
            folder.mkdir()
            path = folder / "reference.ini"
            path.write_text(REFERENCE_CONFIG)
            cfg = load_config(path)
            ok, _ = run_experiment(cfg)
            manifests.append((cfg.output / "manifest.json").read_text())
    return {"identical": manifests[0] == manifests[1], "passed": manifests[0] == manifests[1] and ok}


REFERENCE_CONFIG = """\
[experiment]
kind = spectral-constant
seed = 3
output = out

[domain]
kind = torus1d
length = 2*pi
n = 128

[set]
kind = periodic
period = 2*pi/3
duty = 0.5

[sweep]
lambda = 0.5, 1, 2, 4, 8, 16

[params]
norm_pairs = L2->L2, Linf->sup
trials = 20
"""


CRITERIA = {
    1: ("eigenvalue oracle", eigenvalue_oracle),
    2: ("projector algebra", projector_algebra),
    3: ("multiplier closed form", multiplier_closed_form),
    4: ("divergence reduction", divergence_reduction),
    5: ("ghost lift", ghost_lift_check),
    6: ("spectral constant oracle", spectral_constant_oracle),
    7: ("growth law", growth_law),
    8: ("three-sphere Hadamard oracle", hadamard_oracle),
    9: ("gradient smallness", gradient_suite),
    10: ("HUM exactness", hum_exactness),
    11: ("Lebeau-Robbiano sweep", lebeau_robbiano_sweep),
    12: ("observability duality", observability_duality),
    13: ("doubling", doubling_check),
    14: ("reduction replays", reduction_replays),
    15: ("determinism", determinism),
}
SUITES = {
    "fast": [k for k in CRITERIA if k not in (8, 11)],
    "full": list(CRITERIA),
}


def run_criterion(number: int) -> CriterionResult:
    title, fn = CRITERIA[number]
    t = time.perf_counter()
    measured = fn()
    passed = bool(measured.pop("passed"))
    return CriterionResult(number, title, passed, measured, time.perf_counter() - t)


def run_suite(name: str, echo=print) -> list:
    if name not in SUITES:
        raise KeyError(name)
    results = []
    for k in SUITES[name]:
        r = run_criterion(k)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
