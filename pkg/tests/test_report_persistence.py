import json
import math

import pytest

from core.errors import DatasetError
from core.estimators import PipelineConfig, smooth_poststrat_estimate
from core.models import BandwidthConfig, BandwidthMethod, BootstrapResult
from utils.report_persistence import _format_float, dumps, load_report, save_bootstrap, save_report


@pytest.fixture
def report(make_dataset):
    dataset = make_dataset([(0.0, '111'), (0.4, '110'), (1.1, '101'), (1.7, '001'), (2.2, '011'), (2.9, '100')])
    bandwidth = BandwidthConfig(method=BandwidthMethod.FIXED, values=(0.9,))
    return smooth_poststrat_estimate(dataset, PipelineConfig(model='independence', bandwidth=bandwidth))


@pytest.mark.parametrize("value, text", [
    (0.1, '0.10000000000000001'),
    (1.0, '1.0'),
    (1744.0, '1744.0'),
    (1e-20, '9.9999999999999995e-21'),
    (float('inf'), 'Infinity'),
])
def test_floats_carry_seventeen_significant_digits(value, text):
    assert _format_float(value) == text


def test_dumps_is_valid_json():
    data = {'a': [1, 2.5, None], 'b': {'c': True, 'd': 'x'}, 'e': []}
    assert json.loads(dumps(data)) == data


def test_report_round_trip(report, tmp_path):
    path = save_report(report, str(tmp_path / "estimate.json"))
    loaded = load_report(path)
    assert loaded.c0_hat == report.c0_hat
    assert loaded.n_hat == report.n_hat
    assert loaded.bandwidth == (0.9,)
    assert [unit.pi0 for unit in loaded.per_unit] == [unit.pi0 for unit in report.per_unit]
    assert math.fsum(unit.pi0 for unit in loaded.per_unit) == pytest.approx(loaded.c0_hat, abs=1e-9)
    assert not loaded.has_tables


def test_repeated_saves_are_byte_identical(report, tmp_path):
    first = save_report(report, str(tmp_path / "one.json"))
    second = save_report(report, str(tmp_path / "two.json"))
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()


def test_malformed_report_is_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"n_hat": 3.0}')
    with pytest.raises(DatasetError):
        load_report(str(path))


def test_bootstrap_result_is_saved(tmp_path):
    result = BootstrapResult(estimate=10.0, replicates=(8.0, 12.5), se=3.18, ci=(8.1, 12.4), B=2, level=0.9, seed=1)
    with open(save_bootstrap(result, str(tmp_path / "boot.json"))) as f:
        data = json.load(f)
    assert data['se'] == 3.18
    assert data['replicates'] == [8.0, 12.5]
    assert data['partial'] is False
