import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dirichlet_interval_eigenvalues, neumann_interval_eigenvalues, torus_eigenvalues
from smallness_lab.grid import CoefficientField, Domain, assemble
from smallness_lab.spectral import (
    eigendecompose,
    ghost_lift,
    ghost_residual,
    heat_evolve,
    project,
    sinh_kernel,
)


def _laplacian(domain, bc, k=None):
    return eigendecompose(assemble(domain, bc, CoefficientField.constant(domain)), k)


def test_dirichlet_eigenvalues_match_closed_form():
    es = _laplacian(Domain.interval(0, math.pi, 400), "dirichlet", 10)
    assert np.allclose(es.physical_values, dirichlet_interval_eigenvalues(math.pi, 10), rtol=1e-3)


def test_neumann_and_torus_spectra():
    es = _laplacian(Domain.interval(0, 1, 300), "neumann", 6)
    assert np.allclose(es.physical_values, neumann_interval_eigenvalues(1, 6), rtol=1e-3, atol=1e-10)
    es = _laplacian(Domain.torus1d(2 * math.pi, 256), "periodic", 7)
    assert np.allclose(es.physical_values, torus_eigenvalues(2 * math.pi, 7), rtol=1e-3, atol=1e-10)


def test_sparse_path_agrees_with_dense():
    d = Domain.rectangle(0, 1, 0, 1, 46)  # 2116 cells, above the dense limit
    sparse = _laplacian(d, "dirichlet", 6)
    op = sparse.op
    dense = scipy.linalg.eigh(op.matrix.toarray(), np.diag(op.weights), eigvals_only=True)[:6]
    assert np.allclose(sparse.values, dense, rtol=1e-10)
    exact = np.sort([(math.pi**2) * (i * i + j * j) for i in range(1, 4) for j in range(1, 4)])[:6]
    assert np.allclose(sparse.physical_values, exact, rtol=5e-3)


def test_vectors_are_weighted_orthonormal_and_sign_normalised():
    d = Domain.interval(0, 1, 80)
    c = CoefficientField.from_functions(d, kappa=lambda x: 1 + x)
    es = eigendecompose(assemble(d, "dirichlet", c), 12)
    G = es.vectors.T @ (es.vectors * es.weights[:, None])
    assert np.allclose(G, np.eye(12), atol=1e-12)
    for j in range(12):
        v = es.vectors[:, j]
        assert v[np.argmax(np.abs(v))] > 0


def test_projection_is_idempotent(rng):
    es = _laplacian(Domain.interval(0, 1, 60), "dirichlet")
    u = rng.standard_normal(60)
    cut = es.physical_values[9]
    p = project(es, u, cut)
    assert np.allclose(project(es, p, cut), p, atol=1e-12)
    assert es.span_size(cut) == 10


def test_heat_semigroup_property(rng):
    es = _laplacian(Domain.interval(0, 1, 60), "dirichlet")
    u = rng.standard_normal(60)
    a = heat_evolve(es, heat_evolve(es, u, 0.01), 0.02)
    b = heat_evolve(es, u, 0.03)
    assert np.allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        heat_evolve(es, u, -1.0)


def test_sinh_kernel_small_and_large_arguments():
    lam = np.array([0.0, 1e-12, 4.0])
    y = np.array([-1.0, 0.0, 0.5])
    S = sinh_kernel(lam, y)
    assert S.shape == (3, 3)
    assert S[:, 0] == pytest.approx(y)
    assert S[2, 2] == pytest.approx(math.sinh(1.0) / 2.0)
    assert S[0, 2] == pytest.approx(-math.sinh(2.0) / 2.0)


def test_ghost_lift_trace_and_derivative():
    d = Domain.interval(0, math.pi, 100)
    c = CoefficientField.constant(d, V=1.0)
    es = eigendecompose(assemble(d, "dirichlet", c), 20)
    x = d.centers()[:, 0]
    f = np.sin(x) + 0.3 * np.sin(3 * x)
    gf = ghost_lift(es, f, es.physical_values[5], Y=0.5, m_y=201)
    assert np.all(gf.values[gf.zero_index()] == 0.0)
    assert np.allclose(gf.y_derivative_at_zero(), project(es, f, es.physical_values[5]), atol=1e-4)
    assert ghost_residual(gf, c) < 1e-3
    with pytest.raises(ValueError):
        ghost_lift(es, f, 10.0, m_y=40)


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 30), st.integers(0, 10_000))
def test_synthesis_inverts_coefficients(n, seed):
    es = _laplacian(Domain.interval(0, 1, n), "dirichlet")
    u = np.random.default_rng(seed).standard_normal(n)
    assert np.allclose(es.synthesize(es.coefficients(u)), u, atol=1e-10)
