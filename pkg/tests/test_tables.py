import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.errors import DatasetError
from core.estimators import petersen
from core.models import CapturePattern, Dataset, ObservedUnit
from core.tables import collapse_lists, cross_classify, rank_covariate, restrict_lists


def test_birds_cross_classification(birds, birds_table):
    cc = cross_classify(birds)
    assert birds.n_c == 664
    assert cc.to_dict() == {label: float(count) for label, count in birds_table.items()}


def test_cross_classification_counts_every_unit(make_dataset):
    dataset = make_dataset([(0.0, '11'), (1.0, '11'), (2.0, '01')])
    cc = cross_classify(dataset)
    np.testing.assert_array_equal(cc.counts, [2, 0, 1])
    assert cc.missing_cell is None


def test_collapse_birds_onto_first_two_years(birds):
    collapsed = collapse_lists(cross_classify(birds), (0, 1))
    assert collapsed.to_dict() == {'11': 594.0, '10': 29.0, '01': 20.0}
    assert collapsed.missing_cell == 21.0
    assert collapsed.n_c + collapsed.missing_cell == 664
    assert petersen(collapsed) == pytest.approx(580 / 594)


@pytest.mark.parametrize("keep", [(0,), (1, 1), (0, 3), (0, 1, 2)])
def test_collapse_rejects_bad_list_choice(birds, keep):
    with pytest.raises(DatasetError):
        collapse_lists(cross_classify(birds), keep)


def test_restrict_lists_drops_units_seen_on_neither(birds):
    restricted = restrict_lists(birds, (0, 1))
    assert restricted.k == 2
    assert restricted.n_c == 664 - 21
    assert restricted.list_labels == ('y2009', 'y2010')
    assert cross_classify(restricted).to_dict() == {'11': 594.0, '10': 29.0, '01': 20.0}


def test_rank_covariate_orders_by_total_captures(make_dataset):
    dataset = make_dataset([(5.0, '111'), (6.0, '100'), (7.0, '110'), (8.0, '010')])
    ranked = rank_covariate(dataset)
    assert ranked.covariate_labels == ('x1', 'rank')
    np.testing.assert_array_equal(ranked.covariate_matrix[:, 1], [4, 1, 3, 2])
    np.testing.assert_array_equal(ranked.covariate_matrix[:, 0], [5, 6, 7, 8])


def test_bundled_rank_column_is_a_permutation(birds):
    ranks = birds.covariate_matrix[:, 0]
    np.testing.assert_array_equal(np.sort(ranks), np.arange(1, 665))
    top = int(np.argmax(ranks))
    assert birds.units[top].pattern.label == '111'


LABELS = ['100', '010', '001', '110', '101', '011', '111']
patterns = st.lists(st.sampled_from(LABELS), min_size=1, max_size=40)


def dataset_of(labels):
    units = tuple(
        ObservedUnit(id=str(i), covariates=(float(i),), pattern=CapturePattern.from_label(label))
        for i, label in enumerate(labels)
    )
    return Dataset(k=3, q=1, units=units)


@settings(max_examples=50, deadline=None)
@given(patterns)
def test_cross_classification_total_is_the_unit_count(labels):
    cc = cross_classify(dataset_of(labels))
    assert cc.counts.sum() == len(labels)
    assert cc.to_dict()['111'] == labels.count('111')


@settings(max_examples=50, deadline=None)
@given(patterns, st.sampled_from([(0, 1), (0, 2), (1, 2), (2, 0)]))
def test_collapsing_the_table_matches_restricting_the_units(labels, keep):
    dataset = dataset_of(labels)
    collapsed = collapse_lists(cross_classify(dataset), keep)
    restricted = restrict_lists(dataset, keep)
    np.testing.assert_array_equal(collapsed.counts, cross_classify(restricted).counts)
    assert collapsed.missing_cell == dataset.n_c - restricted.n_c


@settings(max_examples=50, deadline=None)
@given(patterns)
def test_rank_covariate_is_a_permutation(labels):
    ranked = rank_covariate(dataset_of(labels))
    ranks = ranked.covariate_matrix[:, 1]
    np.testing.assert_array_equal(np.sort(ranks), np.arange(1, len(labels) + 1))
    totals = ranked.pattern_matrix.sum(axis=1)
    assert np.all(np.diff(totals[np.argsort(ranks)]) >= 0)
