import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import HALF_INTERVAL_L2_CONSTANT
from smallness_lab.estimates import (
    SpectralConstantCurve,
    best_constant_blocksum,
    best_constant_l2,
    best_constant_sup,
    constant_from_measured,
    fit_sqrt_growth,
    gram_matrix,
    gram_minimizer,
    replay_measurable_reduction,
)
from smallness_lab.geometry import ObservationSet
from smallness_lab.grid import CoefficientField, Domain, assemble
from smallness_lab.spectral import eigendecompose


@pytest.fixture(scope="module")
def half_interval():
    d = Domain.interval(0, math.pi, 400)
    es = eigendecompose(assemble(d, "dirichlet", CoefficientField.constant(d)), 20)
    return es, ObservationSet.from_boxes(d, [[0, math.pi / 2]])


@pytest.fixture(scope="module")
def torus():
    d = Domain.torus1d(2 * math.pi, 256)
    es = eigendecompose(assemble(d, "periodic", CoefficientField.constant(d)), 120)
    return es, ObservationSet.periodic(d, 2 * math.pi / 3, 0.5)


def test_first_mode_constant_is_sqrt_two(half_interval):
    es, om = half_interval
    assert best_constant_l2(es, om, 1.0) == pytest.approx(HALF_INTERVAL_L2_CONSTANT, abs=1e-3)


def test_constant_conventions(half_interval):
    es, om = half_interval
    assert best_constant_l2(es, om, 0.5) == 1.0
    assert best_constant_l2(es, ObservationSet.empty(om.domain), 5.0) == math.inf
    assert best_constant_l2(es, ObservationSet.whole(om.domain), 50.0) == pytest.approx(1.0)


def test_gram_minimizer_attains_constant(half_interval):
    es, om = half_interval
    u = gram_minimizer(es, om, 30.0)
    mass = math.sqrt(np.sum(u[om.mask] ** 2 * es.weights[om.mask]))
    assert es.norm(u) / mass == pytest.approx(best_constant_l2(es, om, 30.0), rel=1e-8)
    G = gram_matrix(es, om, 30.0)
    assert np.allclose(G, G.T)


def test_sup_and_blocksum_constants(torus):
    es, om = torus
    sup = best_constant_sup(es, om, 16.0, trials=50)
    block = best_constant_blocksum(es, om, 16.0, R=math.pi, trials=50)
    assert sup >= 1.0
    assert 0 < block <= sup


def test_sqrt_growth_on_thick_periodic_set(torus):
    es, om = torus
    curve = SpectralConstantCurve.measure(es, om, 2.0 ** np.arange(0, 8), "L2->L2", "periodic")
    fit = fit_sqrt_growth(curve)
    a, b, r = fit
    assert b > 0 and r <= fit.residual_linear
    assert np.all(np.diff(curve.constants) >= -1e-9)


def test_growth_fit_needs_four_points():
    curve = SpectralConstantCurve(np.array([1.0, 2.0, 4.0]), np.array([1.0, 2.0, 3.0]), "L2->L2")
    with pytest.raises(ValueError):
        fit_sqrt_growth(curve)


def test_constant_from_measured_inverts():
    for K, lam in [(1.5, 4.0), (100.0, 64.0), (3.0, 0.0)]:
        C = constant_from_measured(K, lam)
        assert C * math.exp(C * math.sqrt(lam)) == pytest.approx(K, rel=1e-10)


def test_replay_dichotomy(torus):
    es, om = torus
    for cut in (4.0, 36.0):
        v = replay_measurable_reduction(es, om, cut, C_hyp=5.0)
        assert v.passed and v.branch in (1, 2)
        assert v.l1_holds


def test_replay_branch_one_on_tiny_hypothesis(torus):
    es, om = torus
    v = replay_measurable_reduction(es, om, 36.0, C_hyp=1e-3)
    assert v.branch == 1


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 120.0))
def test_l2_constant_at_least_one(cutoff):
    d = Domain.torus1d(2 * math.pi, 64)
    es = eigendecompose(assemble(d, "periodic", CoefficientField.constant(d)))
    om = ObservationSet.periodic(d, 1.0, 0.5)
    assert best_constant_l2(es, om, cutoff) >= 1 - 1e-12
