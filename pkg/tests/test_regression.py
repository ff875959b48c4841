import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import LinearRegression

from resecdf.exceptions import EstimationError, InvariantViolation
from resecdf.regression import (FittedModel, ScaleFunction, fit_linear, predict,
                                standardized_threshold)


def test_exact_recovery(rng):
    x = rng.normal(size=(50, 3))
    y = 2.0 + x @ np.array([1.0, -3.0, 0.5])
    m = fit_linear(x, y)
    np.testing.assert_allclose(m.beta, [2.0, 1.0, -3.0, 0.5], atol=1e-10)
    assert np.max(np.abs(m.residuals_sorted)) < 1e-10


def test_matches_sklearn_ols(rng):
    x = rng.normal(size=(80, 4))
    y = x @ rng.normal(size=4) + rng.normal(size=80)
    m = fit_linear(x, y)
    ref = LinearRegression().fit(x, y)
    np.testing.assert_allclose(m.beta[1:], ref.coef_, rtol=1e-10)
    np.testing.assert_allclose(m.beta[0], ref.intercept_, rtol=1e-10)
    np.testing.assert_allclose(m.residuals_sorted, np.sort(y - ref.predict(x)), atol=1e-10)


def test_weighted_fit_solves_score_equation(rng):
    x = rng.uniform(1, 3, size=(60, 2))
    y = 1 + x.sum(axis=1) + x[:, 0] * rng.normal(size=60)
    nu = ScaleFunction("power", column=0, power=1.0)
    m = fit_linear(x, y, nu)
    design = np.column_stack([np.ones(60), x])
    score = design.T @ ((y - design @ m.beta) / nu(x) ** 2)
    assert np.max(np.abs(score)) < 1e-9
    np.testing.assert_allclose(np.sort((y - m.predict(x)) / nu(x)), m.residuals_sorted)


def test_counts_equal_repeated_rows(rng):
    x = rng.normal(size=(30, 2))
    y = x[:, 0] - x[:, 1] + rng.normal(size=30)
    counts = rng.integers(0, 4, 30)
    counts[:4] = 1
    m1 = fit_linear(x, y, counts=counts)
    m2 = fit_linear(np.repeat(x, counts, axis=0), np.repeat(y, counts))
    np.testing.assert_allclose(m1.beta, m2.beta, atol=1e-10)
    np.testing.assert_allclose(m1.residuals_sorted, m2.residuals_sorted, atol=1e-10)


def test_rank_deficiency_names_columns(rng):
    x = rng.normal(size=(20, 2))
    x = np.column_stack([x, x[:, 0] * 2.0])
    with pytest.raises(EstimationError) as err:
        fit_linear(x, rng.normal(size=20), columns=["a", "b", "c"])
    assert err.value.columns and set(err.value.columns) <= {"intercept", "a", "c"}


def test_too_few_rows():
    with pytest.raises(ValueError):
        fit_linear(np.zeros((2, 2)), np.zeros(2))


def test_intercept_only():
    m = fit_linear(np.empty((5, 0)), np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert m.beta.shape == (1,) and np.isclose(m.beta[0], 3.0)


def test_scale_function():
    assert ScaleFunction.parse("constant:2.5")(np.zeros((3, 1))).tolist() == [2.5] * 3
    nu = ScaleFunction.parse("power:1:0.5")
    np.testing.assert_allclose(nu(np.array([[0.0, 4.0], [0.0, 9.0]])), [2.0, 3.0])
    with pytest.raises(InvariantViolation):
        nu(np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        ScaleFunction.parse("log")
    with pytest.raises(ValueError):
        ScaleFunction("constant", value=0.0)


def test_scalar_helpers():
    m = FittedModel(np.array([1.0, 2.0]), np.array([0.0]), ScaleFunction("constant", 2.0))
    assert predict(m, np.array([3.0])) == 7.0
    assert standardized_threshold(m, np.array([3.0]), 11.0) == 2.0
    np.testing.assert_allclose(predict(m, np.array([[1.0], [2.0]])), [3.0, 5.0])


def test_json_round_trip(rng):
    x = rng.normal(size=(10, 2))
    m = fit_linear(x, rng.normal(size=10), columns=["u", "v"])
    back = FittedModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.beta, m.beta)
    np.testing.assert_array_equal(back.residuals_sorted, m.residuals_sorted)
    assert back.columns == ("u", "v")


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_residuals_sorted_and_mean_zero(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(15, 2))
    m = fit_linear(x, r.normal(size=15))
    assert np.all(np.diff(m.residuals_sorted) >= 0)
    assert abs(m.residuals_sorted.sum()) < 1e-9
