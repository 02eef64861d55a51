import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.errors import DatasetError, DivisionByZeroError, ModelSpecError, NonConvergenceError
from core.loglinear import (
    FitStatus, LogLinearModel, design_row, global_fit, hierarchical_family, impute_zero, odd_even_impute,
    pmml_fit, pmml_gradient, pmml_loglik
)
from core.models import CapturePattern, CrossClassification, PatternDistribution, nonzero_patterns


def independence_distribution(p):
    """Conditional pattern distribution given capture when lists catch independently with probabilities p"""
    p = np.asarray(p)
    full = np.array([np.prod(np.where(bits, p, 1 - p)) for bits in nonzero_patterns(len(p))])
    p_zero = np.prod(1 - p)
    return PatternDistribution(k=len(p), probs=full / full.sum()), p_zero


def test_design_rows():
    pattern = CapturePattern.from_label('101')
    np.testing.assert_array_equal(design_row(LogLinearModel.independence(3), pattern), [1, 0, 1])
    np.testing.assert_array_equal(design_row(LogLinearModel.equal_catchability(3), pattern), [2])
    np.testing.assert_array_equal(design_row(LogLinearModel.quasi_symmetry(3), CapturePattern.from_label('111')),
                                  [1, 1, 1, 9])
    np.testing.assert_array_equal(design_row(LogLinearModel.saturated(3), pattern), [1, 0, 1, 0, 1, 0])
    assert design_row(LogLinearModel.intercept(3), pattern).shape == (0,)


def test_design_row_rejects_wrong_width():
    with pytest.raises(ModelSpecError):
        design_row(LogLinearModel.independence(3), CapturePattern.from_label('11'))


@pytest.mark.parametrize("terms, kwargs", [
    ([frozenset({1, 2, 3})], {}),
    ([frozenset({1})], {'equal_catch': True}),
    ([frozenset({4})], {}),
    ([frozenset({1}), frozenset({1})], {}),
])
def test_invalid_models(terms, kwargs):
    with pytest.raises(ModelSpecError):
        LogLinearModel(k=3, terms=tuple(terms), **kwargs)


def test_parse_catalogue_and_term_lists():
    assert LogLinearModel.parse('quasi-symmetry', 3).q_model == 4
    model = LogLinearModel.parse('1,2,3,12', 3)
    assert model.q_model == 4
    assert model.term_string == '1,2,3,12'
    assert LogLinearModel.parse('sum,sum2', 3).q_model == 2
    with pytest.raises(ModelSpecError):
        LogLinearModel.parse('bogus', 3)


def test_hierarchical_family_for_three_lists():
    family = hierarchical_family(3)
    assert len(family) == 8
    assert family[0].name == 'independence'
    assert family[-1].name == 'saturated'
    assert sorted(m.q_model for m in family) == [3, 4, 4, 4, 5, 5, 5, 6]


def test_saturated_fit_reproduces_positive_tables(rng):
    model = LogLinearModel.saturated(3)
    for _ in range(200):
        dist = PatternDistribution(k=3, probs=rng.dirichlet(np.full(7, 2.0)))
        fit = pmml_fit(model, dist, 50.0)
        assert fit.status is FitStatus.CONVERGED
        np.testing.assert_allclose(fit.fitted, dist.probs, atol=1e-9)
        assert impute_zero(fit) == pytest.approx(odd_even_impute(dist), rel=1e-8)


@pytest.mark.parametrize("name", ['independence', 'saturated', 'equal-catch', 'quasi-symmetry', '1,2,3,12'])
def test_newton_converges_on_positive_tables(rng, name):
    model = LogLinearModel.parse(name, 3)
    for _ in range(300):
        dist = PatternDistribution(k=3, probs=rng.dirichlet(np.ones(7)))
        eta = float(rng.uniform(5.0, 500.0))
        fit = pmml_fit(model, dist, eta)
        assert fit.status is FitStatus.CONVERGED, fit.message
        assert np.max(np.abs(pmml_gradient(model, dist, eta, fit.coefficients))) <= 1e-9 * eta


def test_flat_objective_near_the_optimum_still_converges():
    dist, p_zero = independence_distribution([0.367, 0.662, 0.448])
    fit = pmml_fit(LogLinearModel.independence(3), dist, 100.0)
    assert fit.status is FitStatus.CONVERGED
    assert fit.iterations < 50
    assert fit.pi0 == pytest.approx(p_zero / (1 - p_zero), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 0.9), min_size=3, max_size=3))
def test_independence_extrapolates_the_missing_cell(p):
    dist, p_zero = independence_distribution(p)
    fit = pmml_fit(LogLinearModel.independence(3), dist, 100.0)
    assert fit.status is FitStatus.CONVERGED
    assert impute_zero(fit) == pytest.approx(p_zero / (1 - p_zero), rel=1e-6)
    np.testing.assert_allclose(fit.coefficients, [math.log(v / (1 - v)) for v in p], atol=1e-6)
    assert fit.u0 == pytest.approx(math.log(fit.pi0))


def test_analytic_gradient_matches_central_differences(rng):
    models = [LogLinearModel.independence(3), LogLinearModel.quasi_symmetry(3), LogLinearModel.saturated(3),
              LogLinearModel.parse('1,2,3,12', 3), LogLinearModel.equal_catchability(3)]
    h = 1e-5
    for trial in range(100):
        model = models[trial % len(models)]
        dist = PatternDistribution(k=3, probs=rng.dirichlet(np.ones(7)))
        eta = float(rng.uniform(1.0, 200.0))
        u = rng.normal(scale=0.5, size=model.q_model)
        analytic = pmml_gradient(model, dist, eta, u)
        numeric = np.array([
            (pmml_loglik(model, dist, eta, u + h * e) - pmml_loglik(model, dist, eta, u - h * e)) / (2 * h)
            for e in np.eye(model.q_model)
        ])
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-5)


def test_fit_maximises_the_likelihood(rng):
    model = LogLinearModel.quasi_symmetry(3)
    dist = PatternDistribution(k=3, probs=rng.dirichlet(np.full(7, 3.0)))
    fit = pmml_fit(model, dist, 40.0)
    assert fit.loglik == pytest.approx(pmml_loglik(model, dist, 40.0, fit.coefficients))
    for _ in range(20):
        nearby = fit.coefficients + rng.normal(scale=0.05, size=model.q_model)
        assert pmml_loglik(model, dist, 40.0, nearby) <= fit.loglik + 1e-9
    np.testing.assert_allclose(pmml_gradient(model, dist, 40.0, fit.coefficients), 0.0, atol=1e-6)


def test_intercept_only_imputes_one_over_patterns():
    fit = pmml_fit(LogLinearModel.intercept(3), PatternDistribution.uniform(3), 10.0)
    assert fit.status is FitStatus.CONVERGED
    assert impute_zero(fit) == pytest.approx(1 / 7)


def test_separated_table_is_a_boundary_fit():
    dist = PatternDistribution.one_hot(CapturePattern.from_label('111'))
    fit = pmml_fit(LogLinearModel.independence(3), dist, 20.0)
    assert fit.status is FitStatus.BOUNDARY
    assert fit.usable and not fit.succeeded
    assert impute_zero(fit) < 1e-8


def test_saturated_fit_with_empty_cell_is_a_boundary_fit():
    probs = np.array([0.3, 0.2, 0.1, 0.1, 0.0, 0.2, 0.1])
    fit = pmml_fit(LogLinearModel.saturated(3), PatternDistribution(k=3, probs=probs), 30.0)
    assert fit.status is FitStatus.BOUNDARY


def test_impute_zero_refuses_failed_fits():
    dist = PatternDistribution(k=3, probs=np.array([0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.2]))
    fit = pmml_fit(LogLinearModel.independence(3), dist, 10.0, max_iter=1, tol=1e-300)
    assert fit.status is FitStatus.FAILED
    with pytest.raises(NonConvergenceError):
        impute_zero(fit)


def test_odd_even_formula():
    dist = PatternDistribution.uniform(3)
    assert odd_even_impute(dist) == pytest.approx(1 / 7)
    even_zero = PatternDistribution(k=3, probs=np.array([0.4, 0.0, 0.1, 0.1, 0.1, 0.2, 0.1]))
    with pytest.raises(DivisionByZeroError):
        odd_even_impute(even_zero)
    odd_zero = PatternDistribution(k=3, probs=np.array([0.0, 0.2, 0.2, 0.1, 0.2, 0.2, 0.1]))
    assert odd_even_impute(odd_zero) == 0.0


def test_two_list_odd_even_is_petersen():
    dist = CrossClassification.from_dict({'11': 6, '10': 2, '01': 3}).proportions()
    assert odd_even_impute(dist) * 11 == pytest.approx(2 * 3 / 6)


def test_global_independence_is_petersen(rng):
    model = LogLinearModel.independence(2)
    for _ in range(1000):
        c11, c10, c01 = (int(v) for v in rng.integers(1, 500, size=3))
        cc = CrossClassification.from_dict({'11': c11, '10': c10, '01': c01})
        result = global_fit(cc, model)
        assert result.c0_hat == pytest.approx(c10 * c01 / c11, rel=1e-9)
        assert result.n_hat == pytest.approx(cc.n_c + c10 * c01 / c11, rel=1e-9)


def test_global_quasi_symmetry_on_birds(birds_table):
    result = global_fit(CrossClassification.from_dict(birds_table), LogLinearModel.quasi_symmetry(3))
    assert result.c0_hat == pytest.approx(1744, abs=1)
    assert result.fit.status is FitStatus.CONVERGED
    assert result.coefficients[-1] > 0


def test_global_fit_needs_raw_integer_counts():
    with pytest.raises(DatasetError):
        global_fit(CrossClassification(k=2, counts=np.array([1.5, 2.0, 3.0])), LogLinearModel.independence(2))
    with pytest.raises(DatasetError):
        global_fit(CrossClassification(k=2, counts=np.array([1.0, 2.0, 3.0]), missing_cell=4.0),
                   LogLinearModel.independence(2))


def test_global_fit_warns_on_negative_squared_sum_coefficient():
    # doubles dominate singles and the triple: log counts are concave in the number of captures
    counts = {label: 100 for label in ('110', '101', '011')}
    counts.update({'111': 5, '100': 5, '010': 5, '001': 5})
    result = global_fit(CrossClassification.from_dict(counts), LogLinearModel.quasi_symmetry(3))
    assert result.coefficients[-1] == pytest.approx(-math.log(20), rel=1e-6)
    assert any('negative' in w for w in result.warnings)


def test_every_pattern_probability_is_positive_under_a_converged_fit():
    for bits in product((0, 1), repeat=3):
        if not any(bits):
            continue
        probs = np.full(7, 0.1)
        probs[CapturePattern(bits).index] = 0.4
        fit = pmml_fit(LogLinearModel.independence(3), PatternDistribution(k=3, probs=probs), 25.0)
        assert np.all(fit.fitted > 0)
        assert fit.fitted.sum() == pytest.approx(1.0)
