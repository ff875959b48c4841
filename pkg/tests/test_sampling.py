from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resecdf.estimators import cdf_ht
from resecdf.exceptions import SamplingError
from resecdf.population import FinitePopulation, finite_cdf, generate_population
from resecdf.sampling import (MAR, MNAR, ProbabilitySample, _allocation, draw_convenience,
                              draw_srs_wor, inclusion_probabilities, joint_inclusion,
                              stratum_labels, strongest_covariate)


@pytest.fixture(scope="module")
def pop():
    return generate_population("xi1", 2000, 5)


def test_srs_weights_and_indices(pop):
    a = draw_srs_wor(pop, 100, 1, 0)
    assert a.size == 100 and np.unique(a.idx).size == 100
    assert np.isclose(a.weight.sum(), pop.size)
    np.testing.assert_array_equal(a.x, pop.x[a.idx])


def test_srs_streams_differ(pop):
    assert not np.array_equal(draw_srs_wor(pop, 50, 1, 0).idx, draw_srs_wor(pop, 50, 1, 1).idx)
    np.testing.assert_array_equal(draw_srs_wor(pop, 50, 1, 3).idx, draw_srs_wor(pop, 50, 1, 3).idx)


def test_srs_joint_inclusion_by_enumeration():
    # all C(4, 2) samples are equally likely; count pairs directly
    big_n, n = 4, 2
    samples = list(combinations(range(big_n), n))
    pair = sum(1 for s in samples if 0 in s and 1 in s) / len(samples)
    single = sum(1 for s in samples if 0 in s) / len(samples)
    m = joint_inclusion("srswor", n=n, pop_size=big_n).matrix()
    assert np.isclose(m[0, 1], pair) and np.isclose(m[0, 0], single)


def test_ht_cdf_unbiased_by_enumeration():
    y = np.array([3.0, 1.0, 4.0, 1.5, 9.0, 2.6])
    big_n, n = y.size, 3
    for t in (0.5, 1.5, 3.0, 10.0):
        est = [cdf_ht(ProbabilitySample(np.zeros((n, 1)), np.full(n, big_n / n), big_n,
                                        y=y[list(s)]), t)
               for s in combinations(range(big_n), n)]
        assert np.isclose(np.mean(est), finite_cdf(y, t), atol=1e-15)


@pytest.mark.parametrize("n_b,expected", [(500, (75, 425)), (10, (2, 8)), (1, (0, 1)), (3, (0, 3)),
                                          (7, (1, 6)), (10000, (1500, 8500))])
def test_allocation(n_b, expected):
    assert _allocation(n_b, 0.85) == expected


@pytest.mark.parametrize("mech", [MAR, MNAR])
def test_convenience_allocation(pop, mech):
    b = draw_convenience(pop, 400, mech, 2, 0)
    upper = stratum_labels(pop, mech)
    assert upper[b.idx].sum() == 340
    assert (~upper[b.idx]).sum() == 60
    assert np.isclose(b.inclusion.sum(), 400)


def test_mar_labels_use_covariate_only(pop):
    k = strongest_covariate(pop)
    col = pop.x[:, k]
    labels = stratum_labels(pop, MAR)
    np.testing.assert_array_equal(labels, col > np.sort(col)[(col.size + 1) // 2 - 1])


def test_mnar_labels_use_response(pop):
    labels = stratum_labels(pop, MNAR)
    assert labels.sum() == pop.size // 2
    assert pop.y[labels].min() > pop.y[~labels].max()


def test_strongest_covariate_tie_goes_low():
    x = np.column_stack([np.arange(10.0), np.arange(10.0), np.zeros(10)])
    pop = FinitePopulation(y=np.arange(10.0), x=x, model_id="external")
    assert strongest_covariate(pop) == 0


def test_stratum_too_small():
    pop = generate_population("xi1", 100, 0)
    with pytest.raises(SamplingError) as err:
        draw_convenience(pop, 80, MAR, 0)
    assert err.value.allocation == (12, 68)
    with pytest.raises(SamplingError):
        inclusion_probabilities(pop, 80, MNAR)


def test_joint_inclusion_validation():
    with pytest.raises(ValueError):
        joint_inclusion("srswor", n=1, pop_size=10)
    with pytest.raises(ValueError):
        joint_inclusion("external", n=3, pop_size=10)
    with pytest.raises(ValueError):
        joint_inclusion("external", explicit=np.array([[0.5, 0.0], [0.0, 0.5]]))
    with pytest.raises(ValueError):
        joint_inclusion("external", explicit=np.array([[0.5, 0.2], [0.1, 0.5]]))
    j = joint_inclusion("external", explicit=np.array([[0.5, 0.2], [0.2, 0.5]]))
    np.testing.assert_array_equal(j.first_order(), [0.5, 0.5])


@given(st.integers(2, 40), st.integers(0, 200))
@settings(max_examples=40, deadline=None)
def test_srs_joint_rows_sum(n, extra):
    # fixed-size design: sum over the N - 1 other units of pi_uv is (n - 1) pi_u
    big_n = n + extra
    m = joint_inclusion("srswor", n=n, pop_size=big_n).matrix()
    np.testing.assert_allclose((big_n - 1) * m[0, 1], (n - 1) * m[0, 0], rtol=1e-12)


def test_probability_sample_validation():
    with pytest.raises(ValueError):
        ProbabilitySample(np.zeros((2, 1)), np.array([1.0, -1.0]), 10)
    with pytest.raises(ValueError):
        ProbabilitySample(np.zeros((2, 1)), np.array([1.0, 2.0]), 10, idx=np.array([1, 1]))
