"""
Parametric bootstrap for c0_hat and synthetic populations for validation.

A fitted report is expanded back to a full population by inserting
o_i = pi0(x_i) unobserved copies of every observed unit (integer part plus a
Bernoulli draw on the fractional part). Every simulated unit then draws one
of the 2^k patterns from r_hat = [psi * Pi_i, 1 - psi], zero-pattern units are
deleted, and the pipeline is re-run on what remains.

Pi_i in r_hat is the unit's smoothed table, not the fitted pattern
distribution of its local model. Only the zero-cell mass comes from the fit,
so replicates resample the observed patterns nonparametrically and the
model's lack of fit on the nonzero cells does not feed back into the interval.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from config.settings import Config
from core.errors import BootstrapError, EstimationError
from core.estimators import PipelineConfig, run_pipeline
from core.models import (
    BootstrapResult, CapturePattern, Dataset, EstimateReport, ObservedUnit, SimulatedPopulation, nonzero_patterns
)

logger = logging.getLogger(__name__)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one replicate, fixed by (seed, index) alone"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def expand_population(report: EstimateReport, rng: np.random.Generator) -> SimulatedPopulation:
    """Observed units plus their inserted unobserved copies, each with a full-pattern probability row"""
    if not report.has_tables:
        raise ValueError("report carries no smoothed tables; re-run the estimate instead of loading it")
    if report.partial:
        logger.warning("Expanding a partial report: failed units insert no copies")

    pi0 = report.pi0
    psi = 1.0 / (pi0 + 1.0)
    whole = np.floor(pi0)
    extra = rng.random(report.n_c) < (pi0 - whole)
    copies = whole.astype(int) + extra.astype(int)

    probs = np.array([unit.probs for unit in report.per_unit], dtype=float)
    rows = np.column_stack([psi[:, None] * probs, 1.0 - psi])
    covariates = np.array([unit.x for unit in report.per_unit], dtype=float).reshape(report.n_c, -1)

    source_index = np.concatenate([np.arange(report.n_c), np.repeat(np.arange(report.n_c), copies)])
    return SimulatedPopulation(
        k=report.k,
        covariates=covariates[source_index],
        r_hat=rows[source_index],
        source_index=source_index,
        list_labels=report.list_labels,
        covariate_labels=report.covariate_labels,
    )


def simulate_capture(pop: SimulatedPopulation, rng: np.random.Generator) -> Dataset:
    """Draw one pattern per simulated unit and keep the units seen at least once"""
    cumulative = np.cumsum(pop.r_hat, axis=1)
    cumulative[:, -1] = 1.0
    draws = rng.random(pop.n_sim)
    columns = np.minimum((draws[:, None] >= cumulative).sum(axis=1), 2 ** pop.k - 1)

    patterns = nonzero_patterns(pop.k)
    units = [
        ObservedUnit(id=f"sim{j + 1}", covariates=tuple(pop.covariates[j]), pattern=CapturePattern(patterns[column]))
        for j, column in enumerate(columns)
        if column < len(patterns)
    ]
    if not units:
        logger.warning(f"⚠️ Simulated capture observed none of {pop.n_sim} units")
    return Dataset(
        k=pop.k,
        q=pop.covariates.shape[1],
        units=tuple(units),
        list_labels=pop.list_labels,
        covariate_labels=pop.covariate_labels,
    )


def bootstrap_ci(dataset: Dataset, config: PipelineConfig, B: Optional[int] = None,
                 level: Optional[float] = None, seed: Optional[int] = None,
                 max_workers: Optional[int] = None) -> BootstrapResult:
    """
    Percentile interval and standard error of c0_hat from B parametric replicates.
    Bandwidths are re-selected in every replicate unless they are fixed.
    """
    B = Config.BOOTSTRAP_REPS if B is None else B
    level = Config.BOOTSTRAP_LEVEL if level is None else level
    seed = Config.DEFAULT_SEED if seed is None else seed
    workers = max_workers or config.max_workers
    if B < 2:
        raise ValueError(f"bootstrap needs at least 2 replicates, got B={B}")
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")

    estimate = run_pipeline(dataset, config)
    replicate_config = replace(config, bandwidth=config.bandwidth.unresolved(), max_workers=1)
    logger.info(f"🔁 Bootstrapping c0_hat={estimate.c0_hat:.6g} with B={B}, seed={seed}, workers={workers}")

    def replicate(b: int) -> Optional[float]:
        rng = replicate_rng(seed, b)
        try:
            simulated = simulate_capture(expand_population(estimate, rng), rng)
            report = run_pipeline(simulated, replicate_config)
        except (EstimationError, ValueError) as e:
            logger.debug(f"Replicate {b} failed: {e}")
            return None
        if report.partial:
            logger.debug(f"Replicate {b} produced a partial report")
            return None
        return report.c0_hat

    with ThreadPoolExecutor(max_workers=workers) as executor:
        outcomes = list(executor.map(replicate, range(B)))

    replicates = tuple(value for value in outcomes if value is not None)
    n_failed = B - len(replicates)
    if n_failed > Config.BOOTSTRAP_MAX_FAILED_FRACTION * B or len(replicates) < 2:
        message = f"{n_failed} of {B} bootstrap replicates failed"
        logger.error(f"❌ {message}")
        raise BootstrapError(message)

    warnings = list(estimate.warnings) if estimate.partial else []
    if n_failed:
        warnings.append(f"{n_failed} of {B} replicates failed and were dropped")

    values = np.array(replicates)
    lo, hi = np.quantile(values, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    result = BootstrapResult(
        estimate=estimate.c0_hat,
        replicates=replicates,
        se=float(np.std(values, ddof=1)),
        ci=(float(lo), float(hi)),
        B=B,
        level=level,
        seed=seed,
        n_failed=n_failed,
        warnings=tuple(warnings),
        partial=estimate.partial,
    )
    logger.info(f"✅ Bootstrap se={result.se:.6g}, {level:.0%} CI=({result.ci[0]:.6g}, {result.ci[1]:.6g})")
    return result


# ============================================================================
# Synthetic populations
# ============================================================================

@dataclass(frozen=True)
class SyntheticSpec:
    """
    Population of n units with q uniform covariates on [low, high] and
    list-j capture probability expit(intercepts[j] + slopes[j] . x).
    Lists are conditionally independent given x.
    """
    n: int
    k: int
    intercepts: Tuple[float, ...]
    slopes: Tuple[Tuple[float, ...], ...] = ()
    q: int = 1
    covariate_low: float = 0.0
    covariate_high: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"population size must be positive, got {self.n}")
        if self.k < 2:
            raise ValueError(f"at least two lists are required, got k={self.k}")
        if self.q < 1:
            raise ValueError(f"at least one covariate is required, got q={self.q}")
        if len(self.intercepts) != self.k:
            raise ValueError(f"expected {self.k} intercepts, got {len(self.intercepts)}")
        slopes = tuple(tuple(float(v) for v in row) for row in self.slopes) or ((0.0,) * self.q,) * self.k
        if len(slopes) != self.k or any(len(row) != self.q for row in slopes):
            raise ValueError(f"slopes must be a {self.k} x {self.q} array")
        if not self.covariate_low < self.covariate_high:
            raise ValueError("covariate range must have low < high")
        object.__setattr__(self, 'intercepts', tuple(float(a) for a in self.intercepts))
        object.__setattr__(self, 'slopes', slopes)

    @classmethod
    def constant(cls, n: int, k: int, p: float) -> 'SyntheticSpec':
        """Every list catches every unit with probability p"""
        if not 0 < p <= 1:
            raise ValueError(f"capture probability must lie in (0, 1], got {p}")
        return cls(n=n, k=k, intercepts=(float(logit(p)),) * k)

    def capture_probs(self, x: np.ndarray) -> np.ndarray:
        """Per-list capture probabilities, shape (len(x), k)"""
        x = np.asarray(x, dtype=float).reshape(-1, self.q)
        linear = np.asarray(self.intercepts)[None, :] + x @ np.asarray(self.slopes).T
        return expit(linear)

    def psi(self, x: np.ndarray) -> np.ndarray:
        """Probability of appearing on at least one list"""
        return 1.0 - np.prod(1.0 - self.capture_probs(x), axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n': self.n,
            'k': self.k,
            'q': self.q,
            'intercepts': list(self.intercepts),
            'slopes': [list(row) for row in self.slopes],
            'covariate_low': self.covariate_low,
            'covariate_high': self.covariate_high,
        }


@dataclass(frozen=True)
class SyntheticSample:
    """Observed part of a synthetic population plus its ground truth"""
    dataset: Dataset
    true_n: int
    psi: Callable[[np.ndarray], np.ndarray]
    true_c0: float
    realised_c0: int
    spec: Optional[SyntheticSpec] = field(default=None, compare=False)

    def truth(self, seed: int) -> Dict[str, Any]:
        return {
            'n': self.true_n,
            'n_c': self.dataset.n_c,
            'k': self.dataset.k,
            'true_c0': self.true_c0,
            'realised_c0': self.realised_c0,
            'seed': seed,
            'generator': self.spec.to_dict() if self.spec else None,
        }


def simulate_synthetic(spec: SyntheticSpec, seed: Optional[int] = None) -> SyntheticSample:
    """Draw a population from the generator and return its observed subset with the truth"""
    seed = Config.DEFAULT_SEED if seed is None else seed
    rng = np.random.default_rng(seed)
    x = rng.uniform(spec.covariate_low, spec.covariate_high, size=(spec.n, spec.q))
    captured = rng.random((spec.n, spec.k)) < spec.capture_probs(x)
    seen = captured.any(axis=1)

    units = [
        ObservedUnit(id=f"u{i + 1}", covariates=tuple(x[i]), pattern=CapturePattern(tuple(captured[i].astype(int))))
        for i in np.flatnonzero(seen)
    ]
    dataset = Dataset(k=spec.k, q=spec.q, units=tuple(units))
    true_c0 = math.fsum(1.0 - spec.psi(x))
    logger.info(f"Simulated n={spec.n}: observed n_c={dataset.n_c}, expected c0={true_c0:.6g}")
    return SyntheticSample(
        dataset=dataset,
        true_n=spec.n,
        psi=spec.psi,
        true_c0=true_c0,
        realised_c0=int(spec.n - dataset.n_c),
        spec=spec,
    )
