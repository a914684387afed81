import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallness_lab.grid import (
    CoefficientField,
    CoefficientInvariantError,
    Domain,
    assemble,
    boundary_values,
    factorize_dirichlet,
    flux_divergence,
    solve_dirichlet,
)


def test_domain_geometry():
    d = Domain.rectangle(0, 2, -1, 1, (4, 8))
    assert d.shape == (4, 8) and d.size == 32 and d.dim == 2
    assert d.h == pytest.approx((0.5, 0.25))
    assert d.cell_volume == pytest.approx(0.125)
    c = d.centers()
    assert c.shape == (32, 2)
    assert c[0] == pytest.approx([0.25, -0.875])
    assert d.distance_to_boundary().min() == pytest.approx(0.125)


def test_torus_has_no_boundary():
    d = Domain.torus1d(2 * math.pi, 16)
    assert d.periodic
    with pytest.raises(ValueError):
        assemble(d, "dirichlet", CoefficientField.constant(d))


def test_bad_domains():
    with pytest.raises(ValueError):
        Domain("sphere", (0, 1), (10,))
    with pytest.raises(ValueError):
        Domain.interval(0, 1, 2)


def test_boundary_faces_ccw_in_2d():
    d = Domain.rectangle(0, 1, 0, 1, 4)
    cells, axis, pts = d.boundary_faces()
    assert pts.shape == (16, 2)
    angles = np.unwrap(np.arctan2(pts[:, 1] - 0.5, pts[:, 0] - 0.5))
    assert np.all(np.diff(angles) > 0)


def test_operator_symmetric_in_weighted_inner_product(rng):
    d = Domain.rectangle(0, 1, 0, 1, 12)
    c = CoefficientField.from_functions(
        d, A=lambda x, y: np.stack([np.stack([2 + x, 0.3 * np.sin(y)], -1), np.stack([0.3 * np.sin(y), 1 + y], -1)], -1),
        V=lambda x, y: x * y, kappa=lambda x, y: 1 + 0.5 * x)
    op = assemble(d, "dirichlet", c)
    u, v = rng.standard_normal((2, d.size))
    assert op.inner(op.apply(u), v) == pytest.approx(op.inner(u, op.apply(v)), rel=1e-12)
    S = op.matrix
    assert abs(S - S.T).max() == 0.0


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_flux_divergence_matches_matrix(bc, rng):
    d = Domain.rectangle(0, 1, 0, 2, (10, 14))
    c = CoefficientField.from_functions(d, A=lambda x, y: 1 + 0.2 * x, A22=lambda x, y: 2 + np.cos(y),
                                        A12=lambda x, y: 0.2 * np.sin(x + y), V=lambda x, y: 1 + x,
                                        kappa=lambda x, y: 1 + 0.1 * y)
    op = assemble(d, bc, c)
    u = rng.standard_normal(d.size)
    direct = flux_divergence(c, bc, u) + c.kappa * c.V * u
    via_matrix = op.weights * op.apply(u) / d.cell_volume
    assert np.allclose(direct, via_matrix, atol=1e-10 * np.abs(via_matrix).max())


def test_dirichlet_solver_reproduces_linear_function():
    d = Domain.interval(0, 1, 50)
    op = assemble(d, "dirichlet", CoefficientField.constant(d))
    u = solve_dirichlet(op, lambda x: 1 + 2 * x)
    x = d.centers()[:, 0]
    assert np.allclose(u, 1 + 2 * x, atol=1e-12)
    assert np.abs(op.residual(u, lambda x: 1 + 2 * x)).max() < 1e-10


def test_dirichlet_second_order_convergence():
    errs = []
    for n in (40, 80):
        d = Domain.rectangle(0, 1, 0, 1, n)
        solve = factorize_dirichlet(assemble(d, "dirichlet", CoefficientField.constant(d)))
        u = solve(lambda x, y: np.exp(x) * np.cos(y))
        c = d.centers()
        errs.append(np.abs(u - np.exp(c[:, 0]) * np.cos(c[:, 1])).max())
    assert errs[0] / errs[1] > 3.5


def test_boundary_values_shapes():
    d = Domain.interval(0, 1, 8)
    assert boundary_values(d, 2.0).tolist() == [2.0, 2.0]
    with pytest.raises(ValueError):
        boundary_values(d, np.ones(3))


def test_invariant_violation_names_location():
    d = Domain.interval(0, 1, 10)
    with pytest.raises(CoefficientInvariantError, match="x-face"):
        CoefficientField.from_functions(d, A=lambda x: 1 - 2 * x)
    with pytest.raises(CoefficientInvariantError, match="cell"):
        CoefficientField.from_functions(d, kappa=lambda x: x - 0.5)


def test_declared_constants_are_enforced():
    d = Domain.interval(0, 1, 10)
    with pytest.raises(CoefficientInvariantError):
        CoefficientField.from_functions(d, A=lambda x: 1 + 3 * x, lambda1=2.0)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + x, lambda1=3.0)
    assert c.lambda1 == 3.0


@settings(max_examples=25, deadline=None)
@given(st.integers(6, 40), st.floats(0.1, 3.0), st.floats(0.0, 5.0))
def test_constant_operator_is_positive(n, a, v):
    d = Domain.interval(0, 1, n)
    op = assemble(d, "dirichlet", CoefficientField.constant(d, A=a, V=v))
    eig = np.linalg.eigvalsh(op.matrix.toarray())
    assert eig.min() > 0
