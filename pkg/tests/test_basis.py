import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrseries.basis import (
    BasisSpec,
    bspline_spec_from_data,
    design_matrix,
    eval_basis,
    sup_basis_norm,
)
from lrseries.errors import ConfigError, DomainError


def test_polynomial_univariate_powers():
    spec = BasisSpec(kind="polynomial", degree=3, ndim=1)
    assert np.allclose(eval_basis(2.0, spec), [1.0, 2.0, 4.0, 8.0])


def test_polynomial_degree_one_no_intercept():
    # main-effects expansion used by the simulation: p(x) = x itself
    spec = BasisSpec(kind="polynomial", degree=1, ndim=5, include_intercept=False)
    x = np.array([0.3, -1.2, 0.0, 2.5, 1.1])
    assert np.allclose(eval_basis(x, spec), x)


def test_polynomial_at_zero():
    spec = BasisSpec(kind="polynomial", degree=4, ndim=1)
    vec = eval_basis(0.0, spec)
    assert vec[0] == 1.0
    assert np.all(vec[1:] == 0.0)


def test_multivariate_main_effects_only():
    spec = BasisSpec(kind="polynomial", degree=2, ndim=2, include_intercept=True)
    vec = eval_basis(np.array([2.0, 3.0]), spec)
    assert np.allclose(vec, [1.0, 2.0, 3.0, 4.0, 9.0])
    assert spec.n_columns == 5


@given(st.floats(min_value=-1.0, max_value=3.0))
@settings(max_examples=80, deadline=None)
def test_bspline_partition_of_unity(x):
    spec = BasisSpec(
        kind="bspline", degree=2, ndim=1, include_intercept=False,
        knots=(1.0,), boundary=(-1.0, 3.0),
    )
    vec = eval_basis(x, spec)
    assert vec.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(vec >= -1e-12)


def test_bspline_order2_one_knot_dimension():
    spec = BasisSpec(
        kind="bspline", degree=2, ndim=1, include_intercept=False,
        knots=(0.5,), boundary=(0.0, 1.0),
    )
    assert spec.n_columns == 3
    # piecewise-linear hat functions: interior knot value splits across two
    assert np.allclose(eval_basis(0.5, spec), [0.0, 1.0, 0.0])
    assert np.allclose(eval_basis(0.0, spec), [1.0, 0.0, 0.0])
    assert np.allclose(eval_basis(1.0, spec), [0.0, 0.0, 1.0])


def test_bspline_clamps_with_warning():
    spec = BasisSpec(
        kind="bspline", degree=2, ndim=1, include_intercept=False,
        knots=(0.5,), boundary=(0.0, 1.0),
    )
    with pytest.warns(UserWarning, match="clamped"):
        vec = eval_basis(1.7, spec)
    assert np.allclose(vec, eval_basis(1.0, spec))


def test_bspline_spec_from_data_places_median_knot():
    x = np.linspace(0.0, 10.0, 101)
    spec = bspline_spec_from_data(x, order=2, n_knots=1)
    assert spec.knots == (5.0,)
    assert spec.boundary == (0.0, 10.0)


def test_design_matrix_intercept_column():
    x = np.array([[0.1], [0.7], [-0.3]])
    dm = design_matrix(x, BasisSpec(kind="polynomial", degree=1, ndim=1))
    assert np.all(dm.values[:, 0] == 1.0)


def test_design_matrix_bspline_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, size=50)
    spec = BasisSpec(
        kind="bspline", degree=3, ndim=1, include_intercept=False,
        knots=(0.3, 0.6), boundary=(0.0, 1.0),
    )
    dm = design_matrix(x, spec)
    assert np.allclose(dm.values.sum(axis=1), 1.0, atol=1e-12)


def test_design_matrix_gram_is_psd():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 2))
    dm = design_matrix(x, BasisSpec(kind="polynomial", degree=2, ndim=2))
    gram = dm.values.T @ dm.values / 40
    assert np.allclose(gram, gram.T)
    assert np.min(np.linalg.eigvalsh(gram)) > -1e-12


def test_design_matrix_rejects_underdetermined():
    with pytest.raises(DomainError):
        design_matrix(np.zeros((2, 1)), BasisSpec(kind="polynomial", degree=3, ndim=1))


def test_design_matrix_row_order_preserved():
    x = np.array([1.0, 2.0, 3.0])
    spec = BasisSpec(kind="polynomial", degree=2, ndim=1)
    dm = design_matrix(x, spec)
    for i, xi in enumerate(x):
        assert np.array_equal(dm.values[i], eval_basis(xi, spec))


def test_sup_norm_examples():
    spec = BasisSpec(kind="polynomial", degree=1, ndim=1)
    assert sup_basis_norm(spec, [0.0, 1.0]) == pytest.approx(np.sqrt(2.0))


def test_sup_norm_monotone_in_grid():
    spec = BasisSpec(kind="polynomial", degree=3, ndim=1)
    coarse = np.linspace(-2, 2, 5)
    fine = np.linspace(-2, 2, 41)
    assert sup_basis_norm(spec, fine) >= sup_basis_norm(spec, coarse)


def test_sup_norm_empty_grid_rejected():
    with pytest.raises(DomainError):
        sup_basis_norm(BasisSpec(kind="polynomial", degree=1, ndim=1), [])


def test_spec_validation():
    with pytest.raises(ConfigError):
        BasisSpec(kind="fourier", degree=1)
    with pytest.raises(ConfigError):
        BasisSpec(kind="bspline", degree=2)  # no boundary
    with pytest.raises(ConfigError):
        BasisSpec(kind="bspline", degree=2, knots=(0.9, 0.2), boundary=(0.0, 1.0))


def test_spec_roundtrip_serialization():
    spec = BasisSpec(
        kind="bspline", degree=2, ndim=1, include_intercept=False,
        knots=(0.4,), boundary=(0.0, 1.0),
    )
    assert BasisSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        BasisSpec.from_dict({"kind": "polynomial", "degree": 1, "surprise": 1})
