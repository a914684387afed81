import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallness_lab.doubling import double, mirror, verify_extension
from smallness_lab.grid import CoefficientField, Domain


def test_mirror():
    assert mirror([1.0, 2.0], -1).tolist() == [1.0, 2.0, -2.0, -1.0]
    assert mirror([1.0, 2.0]).tolist() == [1.0, 2.0, 2.0, 1.0]


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_extension_is_exact(bc):
    d = Domain.interval(0, 1, 100)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + 0.3 * np.sin(4 * x), V=lambda x: 1 + x)
    ds = double(d, bc, c)
    assert ds.domain.size == 200 and ds.domain.periodic
    rep = verify_extension(ds.with_spectra(5), 5)
    assert rep.max_residual < 1e-10
    assert rep.max_relative_gap < 1e-9
    seam = rep.rows[:, 5]
    assert np.all(seam < 1e-10) if bc == "neumann" else np.all(seam < 0.1)
    assert np.allclose(rep.rows[:, 6], rep.rows[:, 7])


def test_doubling_rejects_non_intervals():
    with pytest.raises(ValueError):
        d = Domain.torus1d(1.0, 20)
        double(d, "periodic", CoefficientField.constant(d))
    d = Domain.interval(0, 1, 20)
    with pytest.raises(ValueError):
        double(d, "periodic", CoefficientField.constant(d))


@settings(max_examples=10, deadline=None)
@given(st.integers(10, 60), st.floats(0.0, 0.5), st.sampled_from(["dirichlet", "neumann"]))
def test_extension_residual_property(n, amp, bc):
    d = Domain.interval(0, 2, n)
    c = CoefficientField.from_functions(d, A=lambda x: 1 + amp * np.cos(3 * x))
    rep = verify_extension(double(d, bc, c), 3)
    assert rep.max_residual < 1e-9
