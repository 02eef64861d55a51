import math

import numpy as np
import pytest

from core.errors import InadmissibleModelError, ModelSpecError
from core.loglinear import FitStatus, LogLinearModel, pmml_fit
from core.models import PatternDistribution, nonzero_patterns
from core.selection import (
    Criterion, SearchStrategy, SelectionConfig, aicc_score, bic_score, candidate_scores, default_candidates,
    select_local_model
)


def interaction_distribution(k, main=0.0, pair=1.5):
    """Pattern distribution with equal list effects and one interaction between lists 1 and 2"""
    weights = np.array([math.exp(main * sum(bits) + pair * bits[0] * bits[1]) for bits in nonzero_patterns(k)])
    return PatternDistribution(k=k, probs=weights / weights.sum())


def test_criteria_follow_their_formulas():
    dist = PatternDistribution(k=3, probs=np.array([0.3, 0.1, 0.1, 0.15, 0.1, 0.15, 0.1]))
    fit = pmml_fit(LogLinearModel.independence(3), dist, 25.0)
    assert bic_score(fit) == pytest.approx(-2 * fit.loglik + 3 * math.log(25.0))
    assert aicc_score(fit) == pytest.approx(-2 * fit.loglik + 6 + 2 * 4 * 5 / (25.0 - 5))


def test_aicc_is_inadmissible_for_small_eta():
    fit = pmml_fit(LogLinearModel.independence(3), PatternDistribution.uniform(3), 5.0)
    with pytest.raises(InadmissibleModelError):
        aicc_score(fit)


def test_default_candidates_for_three_lists():
    names = [model.name for model in default_candidates(3)]
    assert names[:3] == ['intercept', 'equal-catch', 'independence']
    assert names[-1] == 'saturated'
    assert len(names) == 10


def test_stepwise_search_is_the_default_for_many_lists():
    assert SelectionConfig.for_lists(3, Criterion.BIC).strategy is SearchStrategy.EXHAUSTIVE
    assert SelectionConfig.for_lists(5, Criterion.BIC).strategy is SearchStrategy.STEPWISE


def test_candidates_must_share_list_count():
    with pytest.raises(ModelSpecError):
        SelectionConfig(criterion=Criterion.BIC, candidates=())
    with pytest.raises(ModelSpecError):
        SelectionConfig(criterion=Criterion.BIC,
                        candidates=(LogLinearModel.independence(2), LogLinearModel.independence(3)))


@pytest.mark.parametrize("criterion", list(Criterion))
def test_uniform_table_selects_intercept_only(criterion):
    cfg = SelectionConfig.for_lists(3, criterion)
    fit = select_local_model(PatternDistribution.uniform(3), 50.0, cfg)
    assert fit.model.name == 'intercept'
    assert fit.pi0 == pytest.approx(1 / 7)


def test_small_eta_restricts_aicc_to_small_models(rng):
    cfg = SelectionConfig.for_lists(3, Criterion.AICC)
    for _ in range(20):
        dist = PatternDistribution(k=3, probs=rng.dirichlet(np.full(7, 2.0)))
        fit = select_local_model(dist, 4.0, cfg)
        assert fit.q <= 1
        scores = candidate_scores(dist, 4.0, cfg)
        assert set(scores) <= {'intercept', 'equal-catch'}


def test_selected_model_minimises_the_criterion(rng):
    cfg = SelectionConfig.for_lists(3, Criterion.BIC)
    dist = PatternDistribution(k=3, probs=rng.dirichlet(np.full(7, 4.0)))
    fit = select_local_model(dist, 80.0, cfg)
    scores = candidate_scores(dist, 80.0, cfg)
    assert scores[fit.model.name] == pytest.approx(min(scores.values()))


def test_exact_interaction_table_selects_the_interaction_model():
    cfg = SelectionConfig.for_lists(3, Criterion.BIC)
    fit = select_local_model(interaction_distribution(3), 1000.0, cfg)
    assert fit.model.term_string == '1,2,3,12'
    assert fit.status is FitStatus.CONVERGED


def test_sampled_interaction_is_recovered_consistently(rng):
    truth = interaction_distribution(3, main=0.2)
    cfg = SelectionConfig.for_lists(3, Criterion.BIC)
    hits = 0
    for _ in range(200):
        counts = rng.multinomial(1000, truth.probs)
        fit = select_local_model(PatternDistribution(k=3, probs=counts / 1000), 1000.0, cfg)
        hits += frozenset({1, 2}) in fit.model.terms
    assert hits >= 180


def test_stepwise_search_recovers_the_interaction_for_five_lists():
    cfg = SelectionConfig.for_lists(5, Criterion.BIC)
    fit = select_local_model(interaction_distribution(5), 2000.0, cfg)
    mains = tuple(frozenset({j}) for j in range(1, 6))
    assert fit.model.terms == mains + (frozenset({1, 2}),)


def test_selection_rejects_mismatched_distribution():
    cfg = SelectionConfig.for_lists(3, Criterion.BIC)
    with pytest.raises(ModelSpecError):
        select_local_model(PatternDistribution.uniform(2), 10.0, cfg)


def test_one_hot_table_falls_back_to_intercept():
    # every candidate but intercept-only separates on a single-pattern table
    dist = PatternDistribution(k=3, probs=np.array([1.0, 0, 0, 0, 0, 0, 0]))
    fit = select_local_model(dist, 1.0, SelectionConfig.for_lists(3, Criterion.BIC))
    assert fit.model.name == 'intercept'


def test_no_candidate_beats_the_saturated_likelihood(rng):
    saturated = LogLinearModel.saturated(3)
    for _ in range(30):
        dist = PatternDistribution(k=3, probs=rng.dirichlet(np.full(7, 2.0)))
        eta = float(rng.uniform(10.0, 300.0))
        best = pmml_fit(saturated, dist, eta).loglik
        for model in default_candidates(3):
            fit = pmml_fit(model, dist, eta)
            if fit.usable:
                assert fit.loglik <= best + 1e-8 * max(1.0, abs(best))


def test_selection_on_independent_lists_recovers_the_missing_cell(rng):
    p = np.array([0.5, 0.4, 0.6])
    full = np.array([np.prod(np.where(bits, p, 1 - p)) for bits in nonzero_patterns(3)])
    p_zero = np.prod(1 - p)
    truth = p_zero / (1 - p_zero)
    cfg = SelectionConfig.for_lists(3, Criterion.BIC)
    n = 20000
    hits = 0
    for _ in range(100):
        counts = rng.multinomial(n, full / full.sum())
        fit = select_local_model(PatternDistribution(k=3, probs=counts / n), float(n), cfg)
        hits += abs(fit.pi0 - truth) <= 0.1 * truth
    assert hits >= 90
