import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import scalar_hum_cost
from smallness_lab.control import (
    block_count,
    gramian,
    lebeau_robbiano,
    low_mode_control,
    observability_constant,
    simulate_controlled,
)
from smallness_lab.geometry import ObservationSet
from smallness_lab.grid import CoefficientField, Domain, assemble
from smallness_lab.spectral import eigendecompose


@pytest.fixture(scope="module")
def heat():
    d = Domain.interval(0, 1, 100)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)))
    return d, es


def test_scalar_gramian_cost(heat):
    d, es = heat
    lam1 = es.physical_values[0]
    ctrl = low_mode_control(es, ObservationSet.whole(d), 2.0 * es.vectors[:, 0], lam1, 0.0, 0.1)
    assert ctrl.cost == pytest.approx(scalar_hum_cost(lam1, 2.0, 0.1), rel=1e-9)


def test_gramian_limits(heat):
    d, es = heat
    om = ObservationSet.from_boxes(d, [[0.2, 0.6]])
    W = gramian(es, om, es.physical_values[4], 0.05)
    assert np.allclose(W, W.T)
    assert np.linalg.eigvalsh(W).min() > 0


def test_low_mode_control_hits_zero(heat, rng):
    d, es = heat
    om = ObservationSet.from_boxes(d, [[0.2, 0.6]])
    y0 = rng.standard_normal(d.size)
    cutoff = es.physical_values[14]
    ctrl = low_mode_control(es, om, y0, cutoff, 0.0, 0.05)
    _, a = simulate_controlled(es, om, ctrl, y0)
    assert np.linalg.norm(a[:15]) <= 1e-8 * es.norm(y0)
    p, cost = ctrl
    assert cost >= 0 and p.shape == (15,)
    h = ctrl.field(es, om, 0.03)
    assert np.all(h[~om.mask] == 0)


def test_unobservable_span_reports_infinite_cost(heat):
    d, es = heat
    ctrl = low_mode_control(es, ObservationSet.empty(d), es.vectors[:, 0], 50.0, 0.0, 0.1)
    assert not ctrl.observable and ctrl.cost == math.inf
    assert observability_constant(es, ObservationSet.empty(d), 0.1, 50.0) == math.inf


def test_observability_duality(heat, rng):
    d, es = heat
    om = ObservationSet.from_boxes(d, [[0.3, 0.5]])
    T, cut = 0.05, es.physical_values[3]
    Q = observability_constant(es, om, T, cut)
    for _ in range(10):
        a = np.zeros(es.count)
        a[:4] = rng.standard_normal(4)
        a /= np.linalg.norm(a)
        assert low_mode_control(es, om, None, cut, 0.0, T, coeffs=a).cost <= Q * (1 + 1e-9)


def test_block_count_monotone():
    assert block_count(0.8, 100, 1e-6) <= block_count(0.1, 100, 1e-6)
    assert block_count(1.0, 100, 1e-3) <= block_count(1.0, 100, 1e-9)


def test_lebeau_robbiano_reaches_tolerance(heat, rng):
    d, es = heat
    om = ObservationSet.from_boxes(d, [[0.1, 0.25], [0.6, 0.7]])
    y0 = rng.standard_normal(d.size)
    tr = lebeau_robbiano(es, om, y0, 0.4)
    assert tr.relative_terminal_norm <= 1e-6
    _, a = simulate_controlled(es, om, tr, y0)
    assert np.linalg.norm(a) <= 2 * tr.terminal_norm + 1e-12 * tr.initial_norm
    ends = [b.end for b in tr.blocks]
    assert ends[-1] == pytest.approx(0.4)
    assert all(b.start < b.switch < b.end for b in tr.blocks)


def test_invalid_interval(heat):
    d, es = heat
    with pytest.raises(ValueError):
        low_mode_control(es, ObservationSet.whole(d), es.vectors[:, 0], 50.0, 0.2, 0.1)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 50.0), st.floats(0.01, 1.0), st.floats(-3, 3))
def test_scalar_cost_formula_matches_control(lam_scale, T, a0):
    d = Domain.interval(0, 1, 20)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d, A=lam_scale / 10)), 3)
    lam1 = es.physical_values[0]
    ctrl = low_mode_control(es, ObservationSet.whole(d), a0 * es.vectors[:, 0], lam1, 0.0, T)
    assert ctrl.cost == pytest.approx(scalar_hum_cost(lam1, a0, T), rel=1e-8, abs=1e-300)
