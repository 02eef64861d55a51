"""
Cross-classification utilities
Counting units into pattern tables, marginalising lists, and the rank covariate
"""
import logging
from typing import Sequence, Tuple

import numpy as np

from core.errors import DatasetError
from core.models import (
    CapturePattern, CrossClassification, Dataset, ObservedUnit, nonzero_patterns
)

logger = logging.getLogger(__name__)


def cross_classify(dataset: Dataset) -> CrossClassification:
    """Count units per nonzero capture pattern"""
    counts = np.bincount(dataset.pattern_indices, minlength=2 ** dataset.k - 1).astype(float)
    logger.debug(f"Cross-classified {dataset.n_c} units over {dataset.k} lists")
    return CrossClassification(k=dataset.k, counts=counts)


def _check_keep(k: int, keep: Sequence[int]) -> Tuple[int, int]:
    keep = tuple(int(j) for j in keep)
    if len(keep) != 2:
        raise DatasetError(f"exactly two lists must be kept, got {keep}")
    if keep[0] == keep[1]:
        raise DatasetError(f"kept list indices must be distinct, got {keep}")
    for j in keep:
        if not 0 <= j < k:
            raise DatasetError(f"list index {j} out of range for k={k}")
    return keep


def collapse_lists(cc: CrossClassification, keep: Sequence[int]) -> CrossClassification:
    """
    Marginalise a k-list table onto two lists (0-based indices).
    Units that appear on none of the kept lists land in the missing cell,
    so nonzero cells plus missing cell preserve the original total.
    """
    if cc.missing_cell is not None:
        raise DatasetError("collapse_lists expects a table without a missing cell")
    first, second = _check_keep(cc.k, keep)

    collapsed = {(1, 1): 0.0, (1, 0): 0.0, (0, 1): 0.0, (0, 0): 0.0}
    for bits, count in zip(nonzero_patterns(cc.k), cc.counts):
        collapsed[(bits[first], bits[second])] += float(count)

    counts = np.array([collapsed[(1, 1)], collapsed[(1, 0)], collapsed[(0, 1)]])
    return CrossClassification(k=2, counts=counts, missing_cell=collapsed[(0, 0)])


def restrict_lists(dataset: Dataset, keep: Sequence[int]) -> Dataset:
    """Keep two lists of a dataset, dropping units seen on neither of them"""
    first, second = _check_keep(dataset.k, keep)
    units = []
    for unit in dataset.units:
        bits = (unit.pattern.bits[first], unit.pattern.bits[second])
        if any(bits):
            units.append(ObservedUnit(id=unit.id, covariates=unit.covariates, pattern=CapturePattern(bits)))
    return Dataset(
        k=2,
        q=dataset.q,
        units=tuple(units),
        list_labels=(dataset.list_labels[first], dataset.list_labels[second]),
        covariate_labels=dataset.covariate_labels,
    )


def rank_covariate(dataset: Dataset, label: str = "rank") -> Dataset:
    """
    Append the reverse rank of total captures as a covariate.
    The least-observed unit gets rank 1; ties keep input order.
    """
    totals = dataset.pattern_matrix.sum(axis=1)
    order = np.argsort(totals, kind='stable')
    ranks = np.empty(dataset.n_c, dtype=float)
    ranks[order] = np.arange(1, dataset.n_c + 1)

    units = [
        ObservedUnit(id=unit.id, covariates=unit.covariates + (float(rank),), pattern=unit.pattern)
        for unit, rank in zip(dataset.units, ranks)
    ]
    return dataset.with_units(units, covariate_labels=dataset.covariate_labels + (label,))
