import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hadamard_exponent
from smallness_lab.geometry import ObservationSet
from smallness_lab.grid import CoefficientField, Domain, assemble
from smallness_lab.multiplier import build_multiplier
from smallness_lab.smallness import (
    SLACK,
    _report,
    fit_interpolation,
    minimal_constant,
    sample_solutions,
    verify_gradient_smallness,
    verify_three_sphere,
)
from smallness_lab.spectral import eigendecompose


def test_fit_recovers_exact_exponent():
    x = np.linspace(-10, -1, 30)
    y = 0.3 + 0.4 * x
    alpha, C, la, lc = fit_interpolation(x, y)
    assert alpha == pytest.approx(0.4, abs=1e-6)
    assert math.log(C) == pytest.approx(0.3, abs=1e-6)
    assert la == pytest.approx(0.4) and lc == pytest.approx(math.exp(0.3))


def test_envelope_fit_covers_every_sample(rng):
    x = -rng.uniform(0, 10, 50)
    y = 0.5 * x + rng.normal(0, 0.3, 50)
    alpha, C, _, _ = fit_interpolation(x, y)
    assert np.all(y <= math.log(C) + alpha * x + 1e-12)


def test_report_flags_unique_continuation_violation():
    rep = _report([0.0, 1e-3, 1e-2], [0.5, 1e-2, 5e-2], [1.0, 1.0, 1.0])
    assert "unique-continuation violation" in rep.flags
    assert not rep.passed


def test_minimal_constant_matches_fit():
    rows = np.array([[1e-3, 1e-2, 1.0, 0], [1e-2, 5e-2, 1.0, 0], [1e-1, 0.2, 1.0, 0]])
    rep = _report(rows[:, 0], rows[:, 1], rows[:, 2])
    assert minimal_constant(rep.rows, rep.alpha_fit) == pytest.approx(rep.C_fit, rel=1e-10)


def test_hadamard_three_circle_exponent():
    d = Domain.rectangle(-1, 1, -1, 1, 120)
    fns = [(lambda x, y, k=k: np.real((x + 1j * y) ** k)) for k in range(13)]
    samples = sample_solutions(d, "dirichlet", CoefficientField.constant(d), 0, 0, boundary_fns=fns)
    E, K, Om = (ObservationSet.disk(d, (0, 0), r) for r in (0.3, 0.6, 0.9))
    rep = verify_three_sphere(samples, K, E, d, Om)
    assert rep.worst_ratio <= SLACK
    assert rep.alpha_fit == pytest.approx(hadamard_exponent(0.3, 0.6, 0.9), abs=0.05)


def test_random_samples_pass_three_sphere():
    d = Domain.interval(0, 1, 200)
    c = CoefficientField.constant(d, V=10.0)
    samples = sample_solutions(d, "dirichlet", c, 30, 1)
    E = ObservationSet.from_boxes(d, [[0.45, 0.5]])
    K = ObservationSet.from_boxes(d, [[0.2, 0.3]])
    rep = verify_three_sphere(samples, K, E, d)
    assert rep.passed
    assert rep.rows.shape == (30, 4)


def test_sampling_requires_dirichlet_and_nonnegative_potential():
    d = Domain.interval(0, 1, 20)
    with pytest.raises(ValueError):
        sample_solutions(d, "neumann", CoefficientField.constant(d), 1, 0)
    with pytest.raises(ValueError):
        sample_solutions(d, "dirichlet", CoefficientField.constant(d, V=-1.0), 1, 0)


def test_empty_observation_set_rejected():
    d = Domain.interval(0, 1, 20)
    samples = sample_solutions(d, "dirichlet", CoefficientField.constant(d), 2, 0)
    with pytest.raises(ValueError):
        verify_three_sphere(samples, ObservationSet.whole(d), ObservationSet.empty(d), d)


def test_gradient_smallness_on_fat_cantor(rng):
    d = Domain.interval(0, 1, 200)
    c = CoefficientField.constant(d, V=2.0)
    es = eigendecompose(assemble(d, "dirichlet", c), 20)
    mult = build_multiplier(d, "dirichlet", c, 0.1)
    E = ObservationSet.fat_cantor(d, 6, 0.5, span=(0.1, 0.4))
    K = ObservationSet.from_boxes(d, [[0.6, 0.9]])
    samples = [es.vectors[:, :8] @ rng.standard_normal(8) for _ in range(15)]
    rep = verify_gradient_smallness(es, samples, K, E, es.physical_values[7], mult)
    assert rep.passed
    assert 0 < rep.alpha_fit <= 1


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-3, 3), st.integers(0, 10_000))
def test_fit_is_an_upper_envelope(alpha, logc, seed):
    r = np.random.default_rng(seed)
    x = -r.uniform(0.1, 20, 25)
    y = logc + alpha * x - r.uniform(0, 1, 25)
    a, C, _, _ = fit_interpolation(x, y)
    assert 0 <= a <= 1
    assert np.all(y <= math.log(C) + a * x + 1e-9)
