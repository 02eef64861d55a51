import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property, lru_cache
from itertools import product
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import Config
from core.errors import DatasetError, EmptyDatasetError

SUM_TOLERANCE = 1e-10
WEIGHT_TOLERANCE = 1e-12


@lru_cache(maxsize=None)
def nonzero_patterns(k: int) -> Tuple[Tuple[int, ...], ...]:
    """Nonzero capture patterns in big-endian binary order (111, 110, ..., 001 for k=3)"""
    return tuple(bits for bits in product((1, 0), repeat=k) if any(bits))


@lru_cache(maxsize=None)
def all_patterns(k: int) -> Tuple[Tuple[int, ...], ...]:
    """All 2^k patterns, the nonzero ones first and the zero pattern last"""
    return nonzero_patterns(k) + ((0,) * k,)


def pattern_label(bits: Sequence[int]) -> str:
    return ''.join(str(int(b)) for b in bits)


def pattern_labels(k: int) -> Tuple[str, ...]:
    return tuple(pattern_label(bits) for bits in nonzero_patterns(k))


def _pattern_position(key: Union[str, Sequence[int], 'CapturePattern'], k: int) -> int:
    """Column of a nonzero pattern in the canonical ordering"""
    if isinstance(key, CapturePattern):
        pattern = key
    elif isinstance(key, str):
        pattern = CapturePattern.from_label(key)
    else:
        pattern = CapturePattern(tuple(key))
    if pattern.k != k:
        raise KeyError(f"pattern {pattern.label} has {pattern.k} lists, expected {k}")
    if not pattern.is_nonzero:
        raise KeyError("the zero pattern is not an observable cell")
    return pattern.index


class BandwidthMethod(Enum):
    FIXED = "fixed"
    LSCV = "lscv"


class KernelType(Enum):
    GAUSSIAN = "gaussian"
    BOXCAR = "boxcar"


@dataclass(frozen=True)
class CapturePattern:
    """List-membership indicators of one unit"""
    bits: Tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) == 0:
            raise DatasetError("capture pattern must cover at least one list")
        if any(b not in (0, 1) for b in self.bits):
            raise DatasetError(f"capture pattern entries must be 0 or 1, got {tuple(self.bits)}")
        object.__setattr__(self, 'bits', tuple(int(b) for b in self.bits))

    @property
    def k(self) -> int:
        return len(self.bits)

    @property
    def is_nonzero(self) -> bool:
        return any(self.bits)

    @property
    def total(self) -> int:
        return sum(self.bits)

    @property
    def label(self) -> str:
        return pattern_label(self.bits)

    @property
    def index(self) -> int:
        """Position among the nonzero patterns in canonical order"""
        return (2 ** self.k - 1) - int(self.label, 2)

    @classmethod
    def from_label(cls, label: str) -> 'CapturePattern':
        if not label or any(ch not in '01' for ch in label):
            raise DatasetError(f"invalid capture pattern label '{label}'")
        return cls(tuple(int(ch) for ch in label))


@dataclass(frozen=True)
class ObservedUnit:
    """A unit seen on at least one list"""
    id: str
    covariates: Tuple[float, ...]
    pattern: CapturePattern

    def __post_init__(self):
        covariates = tuple(float(v) for v in self.covariates)
        if not all(math.isfinite(v) for v in covariates):
            raise DatasetError(f"unit {self.id}: covariates must be finite, got {covariates}")
        if not self.pattern.is_nonzero:
            raise DatasetError(f"unit {self.id}: observed units must appear on at least one list")
        object.__setattr__(self, 'covariates', covariates)
        object.__setattr__(self, 'id', str(self.id))


@dataclass(frozen=True)
class Dataset:
    """Observed units with their covariates and capture patterns"""
    k: int
    q: int
    units: Tuple[ObservedUnit, ...]
    list_labels: Tuple[str, ...] = ()
    covariate_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.k < 2:
            raise DatasetError(f"at least two lists are required, got k={self.k}")
        if self.q < 0:
            raise DatasetError(f"covariate count must be nonnegative, got q={self.q}")
        object.__setattr__(self, 'units', tuple(self.units))
        list_labels = tuple(self.list_labels) or tuple(f"L{j + 1}" for j in range(self.k))
        covariate_labels = tuple(self.covariate_labels) or tuple(f"x{d + 1}" for d in range(self.q))
        if len(list_labels) != self.k:
            raise DatasetError(f"expected {self.k} list labels, got {len(list_labels)}")
        if len(covariate_labels) != self.q:
            raise DatasetError(f"expected {self.q} covariate labels, got {len(covariate_labels)}")
        object.__setattr__(self, 'list_labels', list_labels)
        object.__setattr__(self, 'covariate_labels', covariate_labels)
        for unit in self.units:
            if unit.pattern.k != self.k:
                raise DatasetError(f"unit {unit.id}: pattern has {unit.pattern.k} lists, expected {self.k}")
            if len(unit.covariates) != self.q:
                raise DatasetError(f"unit {unit.id}: has {len(unit.covariates)} covariates, expected {self.q}")

    @property
    def n_c(self) -> int:
        return len(self.units)

    @property
    def is_empty(self) -> bool:
        return self.n_c == 0

    def require_units(self) -> 'Dataset':
        if self.is_empty:
            raise EmptyDatasetError("dataset has no observed units")
        return self

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(unit.id for unit in self.units)

    @cached_property
    def covariate_matrix(self) -> np.ndarray:
        matrix = np.array([unit.covariates for unit in self.units], dtype=float).reshape(self.n_c, self.q)
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def pattern_matrix(self) -> np.ndarray:
        matrix = np.array([unit.pattern.bits for unit in self.units], dtype=int).reshape(self.n_c, self.k)
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def pattern_indices(self) -> np.ndarray:
        """Canonical nonzero-pattern column of every unit"""
        indices = np.array([unit.pattern.index for unit in self.units], dtype=int)
        indices.setflags(write=False)
        return indices

    def with_units(self, units: Iterable[ObservedUnit], covariate_labels: Optional[Tuple[str, ...]] = None) -> 'Dataset':
        units = tuple(units)
        labels = self.covariate_labels if covariate_labels is None else covariate_labels
        q = len(labels)
        return Dataset(k=self.k, q=q, units=units, list_labels=self.list_labels, covariate_labels=labels)


@dataclass(frozen=True, eq=False)
class CrossClassification:
    """Counts over the nonzero patterns in canonical order, plus an optional zero cell"""
    k: int
    counts: np.ndarray
    missing_cell: Optional[float] = None

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.shape != (2 ** self.k - 1,):
            raise DatasetError(f"expected {2 ** self.k - 1} nonzero cells for k={self.k}, got shape {counts.shape}")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise DatasetError("cell counts must be finite and nonnegative")
        if self.missing_cell is not None and not (math.isfinite(self.missing_cell) and self.missing_cell >= 0):
            raise DatasetError(f"missing cell must be finite and nonnegative, got {self.missing_cell}")
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @property
    def n_c(self) -> float:
        return float(self.counts.sum())

    @property
    def is_integral(self) -> bool:
        return bool(np.all(self.counts == np.round(self.counts)))

    def __getitem__(self, key) -> float:
        return float(self.counts[_pattern_position(key, self.k)])

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(pattern_labels(self.k), (float(c) for c in self.counts)))

    @classmethod
    def from_dict(cls, counts: Mapping[str, float], missing_cell: Optional[float] = None) -> 'CrossClassification':
        if not counts:
            raise DatasetError("cross-classification needs at least one cell")
        k = len(next(iter(counts)))
        values = np.zeros(2 ** k - 1)
        for label, value in counts.items():
            values[_pattern_position(label, k)] = value
        return cls(k=k, counts=values, missing_cell=missing_cell)

    def proportions(self) -> 'PatternDistribution':
        total = self.n_c
        if total <= 0:
            raise EmptyDatasetError("cannot normalise an empty table")
        return PatternDistribution(k=self.k, probs=self.counts / total)


@dataclass(frozen=True, eq=False)
class PatternDistribution:
    """Probabilities over the nonzero patterns in canonical order"""
    k: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (2 ** self.k - 1,):
            raise ValueError(f"expected {2 ** self.k - 1} probabilities for k={self.k}, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("pattern probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"pattern probabilities must sum to 1, got {probs.sum():.15g}")
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    def __getitem__(self, key) -> float:
        return float(self.probs[_pattern_position(key, self.k)])

    @property
    def minimum(self) -> float:
        return float(self.probs.min())

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(pattern_labels(self.k), (float(p) for p in self.probs)))

    @classmethod
    def from_dict(cls, probs: Mapping[str, float]) -> 'PatternDistribution':
        k = len(next(iter(probs)))
        values = np.zeros(2 ** k - 1)
        for label, value in probs.items():
            values[_pattern_position(label, k)] = value
        return cls(k=k, probs=values)

    @classmethod
    def uniform(cls, k: int) -> 'PatternDistribution':
        m = 2 ** k - 1
        return cls(k=k, probs=np.full(m, 1.0 / m))

    @classmethod
    def one_hot(cls, pattern: CapturePattern) -> 'PatternDistribution':
        probs = np.zeros(2 ** pattern.k - 1)
        probs[pattern.index] = 1.0
        return cls(k=pattern.k, probs=probs)


@dataclass(frozen=True)
class BandwidthConfig:
    """Kernel family and covariate bandwidths (the diagonal of D)"""
    method: BandwidthMethod = BandwidthMethod(Config.BANDWIDTH_METHOD)
    values: Optional[Tuple[float, ...]] = None
    kernel: KernelType = KernelType(Config.KERNEL)
    grid_points: int = Config.LSCV_GRID_POINTS
    lscv_grid: Optional[Tuple[Tuple[float, ...], ...]] = None

    def __post_init__(self):
        if self.values is not None:
            values = tuple(float(v) for v in self.values)
            if not values or any(not v > 0 for v in values):
                raise ValueError(f"bandwidths must be positive, got {values}")
            object.__setattr__(self, 'values', values)
        elif self.method is BandwidthMethod.FIXED:
            raise ValueError("fixed bandwidth method requires bandwidth values")
        if self.grid_points < 1:
            raise ValueError(f"grid_points must be positive, got {self.grid_points}")
        if self.lscv_grid is not None:
            grid = tuple(tuple(float(v) for v in point) for point in self.lscv_grid)
            if any(not v > 0 for point in grid for v in point):
                raise ValueError("LSCV grid bandwidths must be positive")
            object.__setattr__(self, 'lscv_grid', grid)

    @property
    def is_resolved(self) -> bool:
        return self.values is not None

    def with_values(self, values: Sequence[float]) -> 'BandwidthConfig':
        return replace(self, values=tuple(values))

    def unresolved(self) -> 'BandwidthConfig':
        """Drop selected values so that cross-validation runs again"""
        if self.method is BandwidthMethod.FIXED:
            return self
        return replace(self, values=None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method.value,
            'kernel': self.kernel.value,
            'values': list(self.values) if self.values is not None else None,
            'grid_points': self.grid_points,
        }


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """Normalised kernel weights of one unit and its local degrees of freedom"""
    index: int
    weights: np.ndarray
    eta: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE * max(1, weights.size):
            raise ValueError(f"weights of unit {self.index} must be nonnegative and sum to 1")
        if not 1.0 - 1e-9 <= self.eta <= weights.size * (1.0 + 1e-9):
            raise ValueError(f"eta of unit {self.index} must lie in [1, n_c], got {self.eta}")
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)


@dataclass(frozen=True, eq=False)
class UnitImputation:
    """Per-unit outcome of the smooth post-stratification pipeline"""
    id: str
    x: Tuple[float, ...]
    pi0: float
    psi: float
    model: str
    status: str = "converged"
    eta: Optional[float] = None
    probs: Optional[np.ndarray] = None  # Stage-1 smoothed table, in memory only

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'x': list(self.x),
            'pi0': self.pi0,
            'psi': self.psi,
            'model': self.model,
        }


@dataclass(frozen=True)
class EstimateReport:
    """Population-size estimate assembled from per-unit imputations"""
    n_hat: float
    c0_hat: float
    n_c: int
    k: int
    model: str
    bandwidth: Optional[Tuple[float, ...]]
    per_unit: Tuple[UnitImputation, ...]
    warnings: Tuple[str, ...] = ()
    partial: bool = False
    config: Dict[str, Any] = field(default_factory=dict)
    list_labels: Tuple[str, ...] = ()
    covariate_labels: Tuple[str, ...] = ()

    @classmethod
    def from_units(cls, units: Sequence[UnitImputation], *, k: int, model: str,
                   bandwidth: Optional[Tuple[float, ...]], warnings: Sequence[str] = (),
                   partial: bool = False, config: Optional[Dict[str, Any]] = None,
                   list_labels: Tuple[str, ...] = (), covariate_labels: Tuple[str, ...] = ()) -> 'EstimateReport':
        """Build a report whose totals satisfy n_hat = n_c + sum(pi0)"""
        units = tuple(units)
        c0_hat = math.fsum(unit.pi0 for unit in units)
        n_c = len(units)
        return cls(
            n_hat=n_c + c0_hat,
            c0_hat=c0_hat,
            n_c=n_c,
            k=k,
            model=model,
            bandwidth=tuple(bandwidth) if bandwidth is not None else None,
            per_unit=units,
            warnings=tuple(warnings),
            partial=partial,
            config=dict(config or {}),
            list_labels=tuple(list_labels),
            covariate_labels=tuple(covariate_labels),
        )

    @property
    def psi(self) -> np.ndarray:
        return np.array([unit.psi for unit in self.per_unit])

    @property
    def pi0(self) -> np.ndarray:
        return np.array([unit.pi0 for unit in self.per_unit])

    @property
    def has_tables(self) -> bool:
        return all(unit.probs is not None for unit in self.per_unit)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_hat': self.n_hat,
            'c0_hat': self.c0_hat,
            'n_c': self.n_c,
            'k': self.k,
            'model': self.model,
            'bandwidth': list(self.bandwidth) if self.bandwidth is not None else None,
            'partial': self.partial,
            'list_labels': list(self.list_labels),
            'covariate_labels': list(self.covariate_labels),
            'config': self.config,
            'per_unit': [unit.to_dict() for unit in self.per_unit],
            'warnings': list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class SimulatedPopulation:
    """Observed covariates plus inserted copies, each with a full-pattern probability row"""
    k: int
    covariates: np.ndarray
    r_hat: np.ndarray  # columns follow all_patterns(k): nonzero patterns, then the zero pattern
    source_index: np.ndarray
    list_labels: Tuple[str, ...] = ()
    covariate_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        r_hat = np.asarray(self.r_hat, dtype=float)
        if r_hat.ndim != 2 or r_hat.shape[1] != 2 ** self.k:
            raise ValueError(f"r_hat must have {2 ** self.k} columns, got shape {r_hat.shape}")
        if np.any(r_hat < -SUM_TOLERANCE) or np.any(np.abs(r_hat.sum(axis=1) - 1.0) > SUM_TOLERANCE):
            raise ValueError("every r_hat row must be a probability vector")
        if len(self.covariates) != len(r_hat):
            raise ValueError("covariates and r_hat must have the same number of rows")

    @property
    def n_sim(self) -> int:
        return len(self.r_hat)


@dataclass(frozen=True)
class BootstrapResult:
    """Parametric-bootstrap replicates of c0_hat and their summaries"""
    estimate: float
    replicates: Tuple[float, ...]
    se: float
    ci: Tuple[float, float]
    B: int
    level: float
    seed: int
    n_failed: int = 0
    warnings: Tuple[str, ...] = ()
    partial: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'c0_hat': self.estimate,
            'se': self.se,
            'ci': list(self.ci),
            'level': self.level,
            'B': self.B,
            'seed': self.seed,
            'n_failed': self.n_failed,
            'partial': self.partial,
            'replicates': list(self.replicates),
            'warnings': list(self.warnings),
        }
