"""
Stage 1: kernel smoothing of capture patterns over covariates.

Each unit i gets normalised weights w^i over the observed units, its local
degrees of freedom eta_i = 1 / max_t w^i_t, and the smoothed pattern table
Pi_i = sum_t w^i_t a(y_t). The pattern bandwidth is fixed at zero; only
covariate bandwidths are smoothed or selected.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Config
from core.errors import BandwidthSelectionError
from core.models import (
    BandwidthConfig, BandwidthMethod, Dataset, KernelType, PatternDistribution, WeightProfile
)

logger = logging.getLogger(__name__)

BLOCK_ROWS = 512


def _log_kernel_block(x: np.ndarray, rows: np.ndarray, values: np.ndarray, kernel: KernelType) -> np.ndarray:
    """Unnormalised log kernel between x[rows] and every unit, shape (len(rows), n_c)"""
    scaled = (x[rows, None, :] - x[None, :, :]) / values
    if kernel is KernelType.GAUSSIAN:
        return -0.5 * np.sum(scaled ** 2, axis=2)
    inside = np.all(np.abs(scaled) <= 1.0, axis=2)
    with np.errstate(divide='ignore'):
        return np.log(inside.astype(float))


def _normalise_rows(log_kernel: np.ndarray) -> np.ndarray:
    """Max-subtract and normalise each row; rows with no support come back as zeros"""
    row_max = log_kernel.max(axis=1, keepdims=True)
    empty = ~np.isfinite(row_max)
    shifted = np.where(empty, -np.inf, log_kernel - np.where(empty, 0.0, row_max))
    weights = np.exp(shifted)
    totals = weights.sum(axis=1, keepdims=True)
    return np.divide(weights, totals, out=np.zeros_like(weights), where=totals > 0)


def _resolved_values(dataset: Dataset, bw: BandwidthConfig) -> np.ndarray:
    if not bw.is_resolved:
        raise ValueError("bandwidths must be resolved before computing kernel weights")
    values = np.asarray(bw.values, dtype=float)
    if values.shape != (dataset.q,):
        raise ValueError(f"expected {dataset.q} bandwidths, got {len(values)}")
    return values


def kernel_weights(dataset: Dataset, i: int, bw: BandwidthConfig) -> WeightProfile:
    """Weight profile of unit i (0-based)"""
    dataset.require_units()
    if not 0 <= i < dataset.n_c:
        raise IndexError(f"unit index {i} out of range for n_c={dataset.n_c}")
    values = _resolved_values(dataset, bw)
    log_kernel = _log_kernel_block(dataset.covariate_matrix, np.array([i]), values, bw.kernel)
    weights = _normalise_rows(log_kernel)[0]
    return WeightProfile(index=i, weights=weights, eta=1.0 / weights.max())


def weight_profiles(dataset: Dataset, bw: BandwidthConfig) -> List[WeightProfile]:
    """Weight profiles of every unit"""
    dataset.require_units()
    values = _resolved_values(dataset, bw)
    profiles = []
    for start in range(0, dataset.n_c, BLOCK_ROWS):
        rows = np.arange(start, min(start + BLOCK_ROWS, dataset.n_c))
        block = _normalise_rows(_log_kernel_block(dataset.covariate_matrix, rows, values, bw.kernel))
        for offset, i in enumerate(rows):
            weights = block[offset]
            profiles.append(WeightProfile(index=int(i), weights=weights, eta=1.0 / weights.max()))
    return profiles


def local_distribution(dataset: Dataset, wp: WeightProfile) -> PatternDistribution:
    """Smoothed pattern table Pi_i = sum_t w_t a(y_t)"""
    probs = np.bincount(dataset.pattern_indices, weights=wp.weights, minlength=2 ** dataset.k - 1)
    return PatternDistribution(k=dataset.k, probs=probs)


def smoothed_tables(dataset: Dataset, bw: BandwidthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Smoothed tables and local degrees of freedom for all units at once.

    Returns (tables, etas) with tables of shape (n_c, 2^k - 1).
    """
    dataset.require_units()
    values = _resolved_values(dataset, bw)
    indicators = _indicator_matrix(dataset)
    tables = np.empty((dataset.n_c, indicators.shape[1]))
    etas = np.empty(dataset.n_c)
    for start in range(0, dataset.n_c, BLOCK_ROWS):
        rows = np.arange(start, min(start + BLOCK_ROWS, dataset.n_c))
        weights = _normalise_rows(_log_kernel_block(dataset.covariate_matrix, rows, values, bw.kernel))
        tables[rows] = weights @ indicators
        etas[rows] = 1.0 / weights.max(axis=1)
    return tables, etas


def _indicator_matrix(dataset: Dataset) -> np.ndarray:
    indicators = np.zeros((dataset.n_c, 2 ** dataset.k - 1))
    indicators[np.arange(dataset.n_c), dataset.pattern_indices] = 1.0
    return indicators


def lscv_risk(dataset: Dataset, values: Sequence[float], kernel: KernelType) -> float:
    """
    Leave-one-out least-squares risk of the smoothed pattern tables:
    sum_i sum_y (I(y_i = y) - pi^(-i)(y, x_i))^2.
    """
    values = np.asarray(values, dtype=float)
    indicators = _indicator_matrix(dataset)
    risk = 0.0
    for start in range(0, dataset.n_c, BLOCK_ROWS):
        rows = np.arange(start, min(start + BLOCK_ROWS, dataset.n_c))
        log_kernel = _log_kernel_block(dataset.covariate_matrix, rows, values, kernel)
        log_kernel[np.arange(len(rows)), rows] = -np.inf
        loo = _normalise_rows(log_kernel) @ indicators
        risk += float(np.sum((indicators[rows] - loo) ** 2))
    return risk


def default_grid(dataset: Dataset, points: int) -> List[Tuple[float, ...]]:
    """Log-spaced scale factors on [1/n_c, 1] applied to every covariate's range"""
    x = dataset.covariate_matrix
    ranges = x.max(axis=0) - x.min(axis=0)
    ranges = np.where(ranges > 0, ranges, 1.0)
    scales = np.logspace(np.log10(1.0 / dataset.n_c), 0.0, points) if points > 1 else np.array([1.0])
    return [tuple(float(v) for v in scale * ranges) for scale in scales]


def select_bandwidth(dataset: Dataset, cfg: BandwidthConfig, max_workers: Optional[int] = None) -> BandwidthConfig:
    """Pick the grid point with the smallest leave-one-out risk; ties go to the smallest bandwidth"""
    if cfg.method is not BandwidthMethod.LSCV:
        raise BandwidthSelectionError(f"bandwidth selection needs method=lscv, got {cfg.method.value}")
    if dataset.q < 1:
        raise BandwidthSelectionError("bandwidth selection needs at least one covariate")
    if dataset.n_c < 2:
        raise BandwidthSelectionError("leave-one-out cross-validation needs at least two units")

    grid = list(cfg.lscv_grid) if cfg.lscv_grid is not None else default_grid(dataset, cfg.grid_points)
    if not grid:
        raise BandwidthSelectionError("bandwidth grid is empty")
    for point in grid:
        if len(point) != dataset.q:
            raise BandwidthSelectionError(f"grid point {point} does not have {dataset.q} bandwidths")
    grid.sort(key=lambda point: float(np.prod(point)))

    workers = max_workers or Config.MAX_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as executor:
        risks = list(executor.map(lambda point: lscv_risk(dataset, point, cfg.kernel), grid))

    best = int(np.argmin(risks))
    logger.info(
        f"LSCV selected bandwidth {grid[best]} (risk {risks[best]:.6g}) "
        f"from {len(grid)} grid points, kernel={cfg.kernel.value}"
    )
    for point, risk in zip(grid, risks):
        logger.debug(f"LSCV risk at {point}: {risk:.10g}")
    return cfg.with_values(grid[best])


def resolve_bandwidth(dataset: Dataset, cfg: BandwidthConfig, max_workers: Optional[int] = None) -> BandwidthConfig:
    """Return a config with bandwidth values, selecting them when they are missing"""
    if cfg.is_resolved:
        return cfg
    return select_bandwidth(dataset, cfg, max_workers=max_workers)
