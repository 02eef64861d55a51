"""
Shared fixtures for the estimator test suite
"""
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np
import pytest

from config.settings import Config
from core.models import CapturePattern, Dataset, ObservedUnit
from utils.file_manager import FileManager

BIRDS_LISTS = ('y2009', 'y2010', 'y2011')
BIRDS_TABLE = {'111': 581, '110': 13, '101': 11, '100': 18, '011': 10, '010': 10, '001': 21}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical oracles")


def build_dataset(rows: Iterable[Tuple[Union[float, Sequence[float]], str]]) -> Dataset:
    """Dataset from (covariates, pattern label) pairs"""
    units = []
    for i, (x, label) in enumerate(rows):
        covariates = tuple(np.atleast_1d(np.asarray(x, dtype=float)))
        units.append(ObservedUnit(id=f"u{i + 1}", covariates=covariates, pattern=CapturePattern.from_label(label)))
    k = units[0].pattern.k
    q = len(units[0].covariates)
    return Dataset(k=k, q=q, units=tuple(units))


def table_rows(counts: Dict[str, int], x: float = 0.0):
    """Rows reproducing a cross-classification, every unit at covariate x"""
    return [(x, label) for label, count in counts.items() for _ in range(int(count))]


@pytest.fixture
def make_dataset():
    return build_dataset


@pytest.fixture
def make_table_dataset():
    def build(counts: Dict[str, int], x: float = 0.0) -> Dataset:
        return build_dataset(table_rows(counts, x))
    return build


@pytest.fixture(scope="session")
def birds() -> Dataset:
    return FileManager().load_dataset(Config.BIRDS_FIXTURE, BIRDS_LISTS, ('rank',))


@pytest.fixture
def birds_table() -> Dict[str, int]:
    return dict(BIRDS_TABLE)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
