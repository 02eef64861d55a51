"""
Population-size estimators: Petersen, Horvitz-Thompson, the adjusted
saturated imputer, and the smooth post-stratification pipeline that turns
per-unit imputations pi0(x_i) into n_hat = n_c + sum_i pi0(x_i).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import Config
from core.errors import DatasetError, EstimationError, NonConvergenceError, ZeroOverlapError
from core.loglinear import FitStatus, LogLinearModel, global_fit, impute_zero, odd_even_impute, pmml_fit
from core.models import (
    BandwidthConfig, CrossClassification, Dataset, EstimateReport, PatternDistribution, UnitImputation
)
from core.selection import Criterion, SelectionConfig, select_local_model
from core.smoother import resolve_bandwidth, smoothed_tables
from core.tables import cross_classify

logger = logging.getLogger(__name__)


class Imputer(Enum):
    INDEPENDENCE = "independence"
    SATURATED = "saturated"
    EQUAL_CATCH = "equal-catch"
    QUASI_SYMMETRY = "quasi-symmetry"
    INTERCEPT = "intercept"
    ADJUSTED_SATURATED = "adjusted-saturated"
    ODD_EVEN = "odd-even"
    SELECT_BIC = "select-bic"
    SELECT_AICC = "select-aicc"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the smooth post-stratification pipeline needs besides the data"""
    model: str = "independence"
    bandwidth: BandwidthConfig = field(default_factory=BandwidthConfig)
    candidates: Optional[Tuple[str, ...]] = None
    psi_floor: float = Config.PSI_FLOOR
    use_global: bool = False
    max_workers: int = Config.MAX_WORKERS

    def __post_init__(self):
        if not 0 < self.psi_floor <= 1:
            raise ValueError(f"psi floor must lie in (0, 1], got {self.psi_floor}")
        if self.max_workers < 1:
            raise ValueError(f"max_workers must be positive, got {self.max_workers}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': self.model,
            'global': self.use_global,
            'bandwidth': self.bandwidth.to_dict(),
            'candidates': list(self.candidates) if self.candidates else None,
            'psi_floor': self.psi_floor,
        }


@dataclass(frozen=True)
class _Outcome:
    pi0: float
    model: str
    status: FitStatus
    message: str = ""
    negative_u_sum: bool = False


# ============================================================================
# Closed-form estimators
# ============================================================================

def petersen(cc: CrossClassification) -> float:
    """Two-list estimate of the unobserved cell, c10 * c01 / c11"""
    if cc.k != 2:
        raise DatasetError(f"Petersen estimator needs a two-list table, got k={cc.k}")
    c11, c10, c01 = cc['11'], cc['10'], cc['01']
    if c11 == 0:
        raise ZeroOverlapError("Petersen estimator is undefined when no unit is on both lists")
    return c10 * c01 / c11


def detection_prob(pi0: float) -> float:
    if pi0 < 0:
        raise ValueError(f"imputed zero-cell probability must be nonnegative, got {pi0}")
    return 1.0 / (pi0 + 1.0)


def horvitz_thompson(psi: Sequence[float], psi_floor: Optional[float] = None,
                     warnings: Optional[List[str]] = None) -> float:
    """Sum of inverse detection probabilities, clamping values below the floor"""
    psi_floor = psi_floor or Config.PSI_FLOOR
    psi = np.asarray(psi, dtype=float)
    if np.any(psi > 1.0):
        raise ValueError("detection probabilities cannot exceed 1")
    low = psi < psi_floor
    if np.any(low):
        message = f"{int(low.sum())} detection probabilities below the floor {psi_floor:g} were clamped"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        psi = np.where(low, psi_floor, psi)
    return math.fsum(1.0 / psi)


def adjusted_saturated_impute(dist: PatternDistribution, eta: float) -> float:
    """
    Odd/even imputation on the blend (1 - alpha) Pi(u_hat) + alpha Pi_hat, where
    Pi(u_hat) is the equal-catchability fit and alpha = eta nu / (1 + eta nu)
    with nu the smallest smoothed cell.
    """
    fit = pmml_fit(LogLinearModel.equal_catchability(dist.k), dist, eta)
    if fit.status is FitStatus.FAILED:
        raise NonConvergenceError(f"equal-catchability fit failed: {fit.message}")
    nu = dist.minimum
    alpha = eta * nu / (1.0 + eta * nu)
    blend = (1.0 - alpha) * fit.fitted + alpha * dist.probs
    return odd_even_impute(PatternDistribution(k=dist.k, probs=blend / blend.sum()))


# ============================================================================
# Per-unit imputers
# ============================================================================

def _fit_imputer(model: LogLinearModel) -> Callable[[PatternDistribution, float], _Outcome]:
    def impute(dist: PatternDistribution, eta: float) -> _Outcome:
        fit = pmml_fit(model, dist, eta)
        if fit.status is FitStatus.FAILED:
            return _Outcome(0.0, model.name, FitStatus.FAILED, fit.message)
        negative = model.squared_sum and fit.coefficients[-1] < 0
        return _Outcome(impute_zero(fit), model.name, fit.status, fit.message, negative)
    return impute


def _selection_imputer(cfg: SelectionConfig) -> Callable[[PatternDistribution, float], _Outcome]:
    def impute(dist: PatternDistribution, eta: float) -> _Outcome:
        fit = select_local_model(dist, eta, cfg)
        return _Outcome(impute_zero(fit), fit.model.name, fit.status, fit.message)
    return impute


def _adjusted_imputer(dist: PatternDistribution, eta: float) -> _Outcome:
    return _Outcome(adjusted_saturated_impute(dist, eta), Imputer.ADJUSTED_SATURATED.value, FitStatus.CONVERGED)


def _odd_even_imputer(dist: PatternDistribution, eta: float) -> _Outcome:
    return _Outcome(odd_even_impute(dist), Imputer.ODD_EVEN.value, FitStatus.CONVERGED)


def build_imputer(config: PipelineConfig, k: int) -> Callable[[PatternDistribution, float], _Outcome]:
    """Per-unit imputation rule for a model name or explicit term list"""
    name = config.model.strip().lower()
    if name in (Imputer.SELECT_BIC.value, Imputer.SELECT_AICC.value):
        criterion = Criterion.BIC if name == Imputer.SELECT_BIC.value else Criterion.AICC
        candidates = [LogLinearModel.parse(spec, k) for spec in config.candidates] if config.candidates else None
        return _selection_imputer(SelectionConfig.for_lists(k, criterion, candidates))
    if name == Imputer.ADJUSTED_SATURATED.value:
        return _adjusted_imputer
    if name == Imputer.ODD_EVEN.value:
        return _odd_even_imputer
    return _fit_imputer(LogLinearModel.parse(name, k))


def _safe_impute(impute, dist: PatternDistribution, eta: float) -> _Outcome:
    try:
        return impute(dist, eta)
    except (EstimationError, ValueError) as e:
        logger.debug(f"Imputation failed at eta={eta:.4g}: {e}")
        return _Outcome(0.0, "failed", FitStatus.FAILED, str(e))


# ============================================================================
# Report assembly
# ============================================================================

def _assemble(dataset: Dataset, outcomes: Sequence[_Outcome], tables: np.ndarray, etas: np.ndarray,
              config: PipelineConfig, bandwidth: Optional[Tuple[float, ...]]) -> EstimateReport:
    max_pi0 = 1.0 / config.psi_floor - 1.0
    warnings: List[str] = []
    units = []
    n_failed = n_boundary = n_clamped = n_negative = 0
    boundary_total = 0.0

    for i, (unit, outcome) in enumerate(zip(dataset.units, outcomes)):
        status = outcome.status.value
        pi0 = outcome.pi0
        if outcome.status is FitStatus.BOUNDARY and pi0 > max_pi0:
            # separated fits diverging toward the zero cell carry no usable imputation
            outcome = replace(outcome, status=FitStatus.FAILED,
                              message=f"separated fit extrapolates past the psi floor (pi0={pi0:.3g})")
            status = outcome.status.value
        if outcome.status is FitStatus.FAILED:
            n_failed += 1
            pi0 = 0.0
            warnings.append(f"unit {unit.id}: imputation failed ({outcome.message}); contributes 0")
        elif outcome.status is FitStatus.BOUNDARY:
            n_boundary += 1
            boundary_total += pi0
        if pi0 > max_pi0:
            n_clamped += 1
            pi0 = max_pi0
            status = "clamped"
        n_negative += int(outcome.negative_u_sum)
        units.append(UnitImputation(
            id=unit.id,
            x=unit.covariates,
            pi0=pi0,
            psi=detection_prob(pi0),
            model=outcome.model,
            status=status,
            eta=float(etas[i]),
            probs=tables[i],
        ))

    if n_boundary:
        warnings.append(
            f"{n_boundary} units had boundary fits (coefficients beyond the separation bound) "
            f"contributing {boundary_total:.6g} to c0_hat"
        )
    if n_clamped:
        message = f"{n_clamped} units implied psi below the floor {config.psi_floor:g}; their imputations were clamped"
        logger.warning(f"⚠️ {message}")
        warnings.append(message)
    if n_negative:
        warnings.append(f"{n_negative} units have a negative quasi-symmetry coefficient u_sum")
    if n_failed:
        logger.warning(f"⚠️ {n_failed} of {dataset.n_c} unit imputations failed; report is partial")

    config_echo = config.to_dict()
    if bandwidth is not None:
        config_echo['bandwidth']['values'] = list(bandwidth)

    return EstimateReport.from_units(
        units,
        k=dataset.k,
        model=config.model,
        bandwidth=bandwidth,
        warnings=warnings,
        partial=n_failed > 0,
        config=config_echo,
        list_labels=dataset.list_labels,
        covariate_labels=dataset.covariate_labels,
    )


def smooth_poststrat_estimate(dataset: Dataset, config: PipelineConfig) -> EstimateReport:
    """
    Kernel-smooth the pattern tables, impute pi0(x_i) per unit, and sum.
    Units with identical smoothed tables share one fit.
    """
    dataset.require_units()
    bandwidth = resolve_bandwidth(dataset, config.bandwidth, max_workers=config.max_workers)
    tables, etas = smoothed_tables(dataset, bandwidth)
    impute = build_imputer(config, dataset.k)

    keys = np.column_stack([tables, etas])
    unique_rows, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    logger.info(
        f"Imputing {dataset.n_c} units ({len(unique_rows)} distinct tables) "
        f"with {config.model}, bandwidth={bandwidth.values}"
    )

    def run(row: np.ndarray) -> _Outcome:
        probs = row[:-1] / row[:-1].sum()
        return _safe_impute(impute, PatternDistribution(k=dataset.k, probs=probs), float(row[-1]))

    with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
        unique_outcomes = list(executor.map(run, unique_rows))

    outcomes = [unique_outcomes[j] for j in inverse]
    report = _assemble(dataset, outcomes, tables, etas, config, bandwidth.values)
    logger.info(f"✅ Smooth post-stratification: n_c={report.n_c}, c0_hat={report.c0_hat:.6g}, n_hat={report.n_hat:.6g}")
    return report


def global_estimate(dataset: Dataset, config: PipelineConfig) -> EstimateReport:
    """One model on the raw table; every unit carries the same imputation"""
    dataset.require_units()
    cc = cross_classify(dataset)
    dist = cc.proportions()
    n_c = float(dataset.n_c)
    name = config.model.strip().lower()

    global_warnings: Tuple[str, ...] = ()
    if name in {imputer.value for imputer in (Imputer.SELECT_BIC, Imputer.SELECT_AICC,
                                              Imputer.ADJUSTED_SATURATED, Imputer.ODD_EVEN)}:
        outcome = _safe_impute(build_imputer(config, dataset.k), dist, n_c)
    else:
        model = LogLinearModel.parse(name, dataset.k)
        try:
            result = global_fit(cc, model)
        except EstimationError as e:
            logger.error(f"Global fit of {model.name} failed: {e}")
            outcome = _Outcome(0.0, model.name, FitStatus.FAILED, str(e))
        else:
            outcome = _Outcome(result.fit.pi0, model.name, result.fit.status, result.fit.message)
            global_warnings = result.warnings

    tables = np.tile(dist.probs, (dataset.n_c, 1))
    etas = np.full(dataset.n_c, n_c)
    report = _assemble(dataset, [outcome] * dataset.n_c, tables, etas, config, None)
    if global_warnings:
        report = replace(report, warnings=tuple(global_warnings) + report.warnings)
    logger.info(f"✅ Global {config.model}: n_c={report.n_c}, c0_hat={report.c0_hat:.6g}")
    return report


def run_pipeline(dataset: Dataset, config: PipelineConfig) -> EstimateReport:
    if config.use_global:
        return global_estimate(dataset, config)
    return smooth_poststrat_estimate(dataset, config)


def restrict_region(report: EstimateReport, predicate: Callable[[Tuple[float, ...]], bool],
                    description: str = "custom region") -> EstimateReport:
    """Zero the imputations of units outside a covariate region and recompute totals"""
    units = []
    excluded = 0
    for unit in report.per_unit:
        if predicate(unit.x):
            units.append(unit)
        else:
            excluded += 1
            units.append(replace(unit, pi0=0.0, psi=1.0, status="excluded"))
    message = f"imputations restricted to {description}; {excluded} units outside the region set to 0"
    logger.info(message)
    return EstimateReport.from_units(
        units,
        k=report.k,
        model=report.model,
        bandwidth=report.bandwidth,
        warnings=report.warnings + (message,),
        partial=report.partial,
        config=dict(report.config, restrict=description),
        list_labels=report.list_labels,
        covariate_labels=report.covariate_labels,
    )
