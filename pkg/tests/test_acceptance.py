"""The fifteen acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
values; the lines are also gathered into an "acceptance criteria" section
at the end of the pytest report. Tolerances are pinned here, independently of the suite
runner, so loosening one in the library does not go unnoticed.
"""
import math
import time

import pytest

from smallness_lab.acceptance import CRITERIA, SUITES, run_criterion

TOLERANCES = {
    1: {"max_rel_err": 0.01, "convergence_factor": 3.5, "runtime": 10.0},
    2: {"defect": 1e-10},
    3: {"h2_factor": 5.0},
    4: {"round_trip": 1e-12},
    5: {"ratio": 3.0},
    6: {"target": math.sqrt(2.0), "abs": 1e-3},
    7: {"runtime": 300.0},
    8: {"alpha_abs": 0.05, "slack": 1.05},
    9: {"alpha_spread": 0.1},
    10: {"terminal": 1e-8, "cost_rel": 1e-6},
    11: {"terminal": 1e-6, "rms_fraction": 0.15, "runtime": 600.0},
    12: {"rel": 1e-6},
    13: {"relative_gap": 0.01, "h": 1 / 200},
}


def _judge(k: int, m: dict, seconds: float) -> bool:
    t = TOLERANCES.get(k, {})
    if k == 1:
        return m["max_rel_err"] <= t["max_rel_err"] and m["convergence_factor"] >= t["convergence_factor"] \
            and seconds < t["runtime"]
    if k == 2:
        return m["idempotence"] <= t["defect"] and m["self_adjointness"] <= t["defect"]
    if k == 3:
        return m["max_err"] <= m["bound_5h2"] and m["certified_c"] <= m["min_phi"]
    if k == 4:
        return m["max(res_out-10res_in-h)"] <= 0 and m["round_trip"] <= t["round_trip"]
    if k == 5:
        return m["residual_ratio"] >= t["ratio"] and m["dy_error_ratio"] >= t["ratio"] and m["trace"] == 0.0
    if k == 6:
        return abs(m["constant"] - t["target"]) <= t["abs"]
    if k == 7:
        return all(m[f"{s}_res_sqrt"] <= m[f"{s}_res_lin"] and m[f"{s}_b"] > 0 for s in ("periodic", "fat_cantor")) \
            and abs(m["gamma_periodic"] - 0.5) < 0.02 and abs(m["measure_fraction_cantor"] - 0.25) < 0.01 \
            and seconds < t["runtime"]
    if k == 8:
        return abs(m["alpha"] - m["expected"]) <= t["alpha_abs"] and m["worst_ratio"] <= t["slack"]
    if k == 9:
        return 0 < m["alpha"] < 1 and m["worst_ratio"] <= 1.05 \
            and all(abs(a - m["alpha"]) <= t["alpha_spread"] for a in m["cumulative_alpha"])
    if k == 10:
        return m["low_mode_terminal"] <= t["terminal"] and m["cost_rel_err"] <= t["cost_rel"]
    if k == 11:
        return m["max_terminal"] <= t["terminal"] and m["C"] > 0 and m["rms"] <= t["rms_fraction"] * m["range"] \
            and m["oracle_agrees"] and seconds < t["runtime"]
    if k == 12:
        return m["max_rel_gap"] <= t["rel"]
    if k == 13:
        return all(m[f"{bc}_gap"] <= t["relative_gap"] and m[f"{bc}_residual"] <= t["h"] ** 2
                   for bc in ("dirichlet", "neumann"))
    if k == 14:
        return m["min_kept_fraction"] >= 0.5
    if k == 15:
        return m["identical"]
    raise KeyError(k)


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_log):
    t = time.perf_counter()
    result = run_criterion(number)
    seconds = time.perf_counter() - t
    verdict = result.passed and _judge(number, result.measured, seconds)
    result.passed = verdict
    print("\n" + result.line())
    acceptance_log.append(result.line())
    assert verdict, result.line()


def test_suites_cover_criteria():
    assert SUITES["full"] == list(range(1, 16))
    assert set(SUITES["fast"]) < set(SUITES["full"])
