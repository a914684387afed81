import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cosh_multiplier
from smallness_lab.grid import CoefficientField, Domain, assemble
from smallness_lab.multiplier import build_multiplier, reduce_to_divergence, shift_nonneg
from smallness_lab.smallness import sample_solutions


def test_cosh_closed_form():
    d = Domain.interval(0, 1, 200)
    m = build_multiplier(d, "dirichlet", CoefficientField.constant(d, V=4.0), rho=0.1)
    x = d.centers()[:, 0]
    assert np.abs(m.phi - cosh_multiplier(x, 4.0)).max() <= 5 * d.h[0] ** 2
    assert 0 < m.lower <= m.phi[m.region].min()
    assert m.phi.max() <= 1.0
    assert not m.fallback_used


def test_zero_potential_gives_unit_multiplier():
    d = Domain.interval(0, 1, 50)
    m = build_multiplier(d, "neumann", CoefficientField.constant(d), rho=0.1)
    assert np.allclose(m.phi, 1.0)
    assert m.lambda_star == 0.0 and m.lower == 1.0


def test_torus_only_accepts_zero_potential():
    d = Domain.torus1d(1.0, 32)
    assert build_multiplier(d, "periodic", CoefficientField.constant(d), rho=0.1).lower == 1.0
    with pytest.raises(ValueError):
        build_multiplier(d, "periodic", CoefficientField.constant(d, V=1.0), rho=0.1)


def test_negative_potential_needs_shift():
    d = Domain.interval(0, 1, 40)
    c = CoefficientField.from_functions(d, V=lambda x: x - 0.5)
    with pytest.raises(ValueError):
        build_multiplier(d, "dirichlet", c, rho=0.1)
    shifted, s = shift_nonneg(c)
    assert s == pytest.approx(c.V_sup)
    assert shifted.V.min() >= 0 and shifted.shift == pytest.approx(s)
    same, zero = shift_nonneg(CoefficientField.constant(d, V=1.0), only_if_negative=True)
    assert zero == 0.0


def test_excessive_margin_rejected():
    d = Domain.interval(0, 1, 20)
    with pytest.raises(ValueError):
        build_multiplier(d, "dirichlet", CoefficientField.constant(d, V=1.0), rho=2.0)


@pytest.mark.parametrize("shape", [(120,), (24, 24)])
def test_reduction_identity_round_trip(shape):
    d = Domain.interval(0, 1, shape[0]) if len(shape) == 1 else Domain.rectangle(0, 1, 0, 1, shape)
    if d.dim == 1:
        c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.3 * np.sin(5 * x), V=lambda x: 3 + x)
    else:
        c = CoefficientField.from_functions(d, A=lambda x, y: 1 + 0.3 * x * y, V=lambda x, y: 2 + x)
    u = sample_solutions(d, "dirichlet", c, 1, 3)[0]
    m = build_multiplier(d, "dirichlet", c, rho=0.1)
    red = reduce_to_divergence(u, m, c)
    v, ahat = red
    assert np.abs(v * m.phi - u).max() <= 1e-12 * np.abs(u).max()
    assert red.residual_out <= 10 * red.residual_in + max(d.h)
    lo, hi = red.ellipticity
    assert 0 < lo <= hi
    assert np.all(ahat.V == 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 30.0), st.floats(0.0, 0.5))
def test_multiplier_certificate_holds(V, amp):
    d = Domain.interval(0, 1, 100)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + amp * np.sin(7 * x), V=lambda x: V + 0 * x)
    m = build_multiplier(d, "dirichlet", c, rho=0.1)
    assert m.lower <= m.phi[m.region].min() * (1 + 1e-9)
    op = assemble(d, "dirichlet", c)
    assert np.abs(op.residual(m.phi, 1.0)).max() < 1e-8 * (1 + V)
