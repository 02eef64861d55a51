import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.errors import BandwidthSelectionError
from core.models import BandwidthConfig, BandwidthMethod, CapturePattern, Dataset, KernelType, ObservedUnit
from core.smoother import (
    default_grid, kernel_weights, local_distribution, lscv_risk, resolve_bandwidth, select_bandwidth,
    smoothed_tables, weight_profiles
)


def fixed(values, kernel=KernelType.GAUSSIAN):
    return BandwidthConfig(method=BandwidthMethod.FIXED, values=tuple(values), kernel=kernel)


@pytest.fixture
def small(make_dataset):
    return make_dataset([(0.0, '111'), (0.5, '110'), (1.0, '101'), (4.0, '001'), (4.2, '011')])


SPREAD = Dataset(k=3, q=1, units=tuple(
    ObservedUnit(id=str(i), covariates=(x,), pattern=CapturePattern.from_label(label))
    for i, (x, label) in enumerate([(0.0, '111'), (0.5, '110'), (1.0, '101'), (4.0, '001'), (4.2, '011')])
))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 50.0), st.integers(0, 4))
def test_weights_are_normalised_and_eta_bounded(bandwidth, i):
    dataset = SPREAD
    profile = kernel_weights(dataset, i, fixed([bandwidth]))
    assert profile.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert 1.0 <= profile.eta <= dataset.n_c + 1e-9
    assert profile.weights[i] == profile.weights.max()


def test_huge_bandwidth_gives_uniform_weights(small):
    profile = kernel_weights(small, 0, fixed([1e8]))
    np.testing.assert_allclose(profile.weights, np.full(5, 0.2), rtol=1e-12)
    assert profile.eta == pytest.approx(5.0)


def test_tiny_bandwidth_gives_one_hot_table(small):
    profile = kernel_weights(small, 3, fixed([1e-3]))
    assert profile.eta == 1.0
    assert local_distribution(small, profile).to_dict()['001'] == 1.0


def test_boxcar_block_weights(small):
    profile = kernel_weights(small, 1, fixed([1.0], KernelType.BOXCAR))
    np.testing.assert_allclose(profile.weights, [1 / 3, 1 / 3, 1 / 3, 0, 0])
    assert profile.eta == pytest.approx(3.0)
    table = local_distribution(small, profile)
    assert table['111'] == pytest.approx(1 / 3)
    assert table['001'] == 0.0


def test_smoothed_tables_match_per_unit_profiles(small):
    bw = fixed([0.8])
    tables, etas = smoothed_tables(small, bw)
    for profile in weight_profiles(small, bw):
        np.testing.assert_allclose(tables[profile.index], local_distribution(small, profile).probs, atol=1e-14)
        assert etas[profile.index] == pytest.approx(profile.eta)


def test_kernel_weights_need_resolved_bandwidth(small):
    with pytest.raises(ValueError):
        kernel_weights(small, 0, BandwidthConfig(method=BandwidthMethod.LSCV))
    with pytest.raises(IndexError):
        kernel_weights(small, 5, fixed([1.0]))


def test_isolated_boxcar_unit_counts_fully_in_risk(make_dataset):
    dataset = make_dataset([(0.0, '11'), (0.0, '11'), (10.0, '10')])
    assert lscv_risk(dataset, [1.0], KernelType.BOXCAR) == pytest.approx(1.0)


def test_lscv_risk_by_hand(make_dataset):
    dataset = make_dataset([(0.0, '11'), (0.0, '10')])
    # each unit is predicted by the other's pattern: two squared errors of 1 per unit
    assert lscv_risk(dataset, [1.0], KernelType.GAUSSIAN) == pytest.approx(4.0)


def test_ties_go_to_the_smallest_bandwidth(make_dataset):
    dataset = make_dataset([(0.0, '11') for _ in range(6)])
    cfg = BandwidthConfig(method=BandwidthMethod.LSCV, lscv_grid=((5.0,), (1.0,), (2.0,)))
    assert select_bandwidth(dataset, cfg).values == (1.0,)


def test_selected_bandwidth_comes_from_the_grid(small):
    grid = default_grid(small, 8)
    selected = select_bandwidth(small, BandwidthConfig(method=BandwidthMethod.LSCV, grid_points=8))
    assert selected.values in grid
    assert selected.method is BandwidthMethod.LSCV


def test_default_grid_spans_range(small):
    grid = default_grid(small, 5)
    assert grid[0][0] == pytest.approx(4.2 / 5)
    assert grid[-1][0] == pytest.approx(4.2)


def test_selection_is_deterministic_across_worker_counts(birds):
    cfg = BandwidthConfig(method=BandwidthMethod.LSCV, grid_points=6)
    assert select_bandwidth(birds, cfg, max_workers=1).values == select_bandwidth(birds, cfg, max_workers=4).values


def test_bandwidth_selection_errors(make_dataset):
    one_unit = make_dataset([(0.0, '11')])
    with pytest.raises(BandwidthSelectionError):
        select_bandwidth(one_unit, BandwidthConfig(method=BandwidthMethod.LSCV))
    no_covariates = Dataset(k=2, q=0, units=())
    with pytest.raises(BandwidthSelectionError):
        select_bandwidth(no_covariates, BandwidthConfig(method=BandwidthMethod.LSCV))
    with pytest.raises(BandwidthSelectionError):
        select_bandwidth(one_unit, fixed([1.0]))


def test_resolve_keeps_fixed_values(small):
    bw = fixed([2.5])
    assert resolve_bandwidth(small, bw) is bw


def test_eta_grows_with_the_gaussian_bandwidth():
    etas = [kernel_weights(SPREAD, 2, fixed([h])).eta for h in np.geomspace(0.05, 50.0, 25)]
    assert np.all(np.diff(etas) >= -1e-12)
    assert etas[0] == pytest.approx(1.0)
    assert etas[-1] == pytest.approx(SPREAD.n_c, rel=5e-3)


def test_two_unit_gaussian_weights(make_dataset):
    dataset = make_dataset([(0.0, '11'), (1.0, '10')])
    profile = kernel_weights(dataset, 1, fixed([1.0]))
    np.testing.assert_allclose(profile.weights, [0.3775407, 0.6224593], atol=1e-7)
    assert profile.eta == pytest.approx(1.6065307, abs=1e-7)


def test_patterns_unrelated_to_x_select_the_widest_bandwidth(make_dataset):
    labels = ['100', '010', '001', '110', '101', '011', '111']
    dataset = make_dataset([(float(x), label) for x in range(10) for label in labels])
    # leave-one-out risk is 42 / (7 - 1/S)^2 per unit with S the summed site weights, falling in h
    cfg = BandwidthConfig(method=BandwidthMethod.LSCV, kernel=KernelType.GAUSSIAN, grid_points=6)
    assert select_bandwidth(dataset, cfg).values == (9.0,)
    risks = [lscv_risk(dataset, point, KernelType.GAUSSIAN) for point in default_grid(dataset, 6)]
    assert np.all(np.diff(risks) < 0)


@pytest.mark.slow
def test_birds_lscv_bandwidth_is_moderate(birds):
    selected = select_bandwidth(birds, BandwidthConfig(method=BandwidthMethod.LSCV))
    assert 27 / 3 <= selected.values[0] <= 27 * 3
