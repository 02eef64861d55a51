"""
Per-unit log-linear model selection by localised information criteria
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

from config.settings import Config
from core.errors import InadmissibleModelError, ModelSpecError
from core.loglinear import (
    FitStatus, LocalFit, LogLinearModel, hierarchical_family, is_hierarchical_addition, pmml_fit
)
from core.models import PatternDistribution

logger = logging.getLogger(__name__)


class Criterion(Enum):
    BIC = "bic"
    AICC = "aicc"


class SearchStrategy(Enum):
    EXHAUSTIVE = "exhaustive"
    STEPWISE = "stepwise"


def default_candidates(k: int) -> Tuple[LogLinearModel, ...]:
    """Intercept-only, equal catchability, then the hierarchical family without the k-way term"""
    return (LogLinearModel.intercept(k), LogLinearModel.equal_catchability(k)) + tuple(hierarchical_family(k))


def stepwise_seeds(k: int) -> Tuple[LogLinearModel, ...]:
    return (LogLinearModel.intercept(k), LogLinearModel.equal_catchability(k), LogLinearModel.independence(k))


@dataclass(frozen=True)
class SelectionConfig:
    """Criterion and candidate family for per-unit selection"""
    criterion: Criterion
    candidates: Tuple[LogLinearModel, ...]
    strategy: SearchStrategy = SearchStrategy.EXHAUSTIVE

    def __post_init__(self):
        candidates = tuple(self.candidates)
        if not candidates:
            raise ModelSpecError("candidate list must not be empty")
        if len({model.k for model in candidates}) != 1:
            raise ModelSpecError("all candidate models must share the same number of lists")
        object.__setattr__(self, 'candidates', candidates)

    @property
    def k(self) -> int:
        return self.candidates[0].k

    @classmethod
    def for_lists(cls, k: int, criterion: Optional[Criterion] = None,
                  candidates: Optional[Sequence[LogLinearModel]] = None) -> 'SelectionConfig':
        """Default family; forward stepwise search replaces enumeration for large k"""
        criterion = criterion or Criterion(Config.SELECTION_CRITERION)
        if candidates:
            return cls(criterion=criterion, candidates=tuple(candidates))
        if k >= Config.STEPWISE_MIN_LISTS:
            return cls(criterion=criterion, candidates=stepwise_seeds(k), strategy=SearchStrategy.STEPWISE)
        return cls(criterion=criterion, candidates=default_candidates(k))


def bic_score(fit: LocalFit) -> float:
    """BIC_i = -2 log L_i + q_i log eta_i"""
    if fit.eta <= 0:
        raise ValueError(f"eta must be positive, got {fit.eta}")
    return -2.0 * fit.loglik + fit.q * math.log(fit.eta)


def aicc_score(fit: LocalFit) -> float:
    """AICc_i = -2 log L_i + 2 q_i + 2 (q_i + 1)(q_i + 2) / (eta_i - q_i - 2)"""
    denominator = fit.eta - fit.q - 2
    if denominator <= 0:
        raise InadmissibleModelError(
            f"AICc needs eta > q + 2 (eta={fit.eta:.6g}, q={fit.q}) for model {fit.model.name}"
        )
    return -2.0 * fit.loglik + 2.0 * fit.q + 2.0 * (fit.q + 1) * (fit.q + 2) / denominator


def criterion_score(fit: LocalFit, criterion: Criterion) -> float:
    if criterion is Criterion.BIC:
        return bic_score(fit)
    return aicc_score(fit)


def _admissible(model: LogLinearModel, eta: float, criterion: Criterion) -> bool:
    return criterion is not Criterion.AICC or eta > model.q_model + 2


def _score_candidates(models: Sequence[LogLinearModel], dist: PatternDistribution, eta: float,
                      criterion: Criterion, offset: int = 0) -> List[Tuple[float, int, int, LocalFit]]:
    """Fit admissible candidates; rank keys are (score, q, position)"""
    scored = []
    for position, model in enumerate(models, start=offset):
        if not _admissible(model, eta, criterion):
            continue
        fit = pmml_fit(model, dist, eta)
        if fit.status is not FitStatus.CONVERGED:
            continue
        scored.append((criterion_score(fit, criterion), fit.q, position, fit))
    return scored


def _stepwise_extend(start: LocalFit, dist: PatternDistribution, eta: float,
                     criterion: Criterion, offset: int) -> List[Tuple[float, int, int, LocalFit]]:
    """Forward search adding one hierarchical interaction at a time while the criterion improves"""
    k = start.model.k
    interactions = [frozenset(c) for size in range(2, k) for c in combinations(range(1, k + 1), size)]
    current = (criterion_score(start, criterion), start.q, offset, start)
    visited = []
    position = offset
    while True:
        present = list(current[3].model.terms)
        additions = [t for t in interactions if t not in present and is_hierarchical_addition(t, present)]
        models = [LogLinearModel(k=k, terms=tuple(present) + (term,)) for term in additions]
        scored = _score_candidates(models, dist, eta, criterion, offset=position + 1)
        position += len(models)
        visited.extend(scored)
        if not scored:
            break
        best = min(scored, key=lambda item: item[:3])
        if best[:2] >= current[:2]:
            break
        current = best
    return visited


def intercept_fit(dist: PatternDistribution, eta: float) -> LocalFit:
    return pmml_fit(LogLinearModel.intercept(dist.k), dist, eta)


def select_local_model(dist: PatternDistribution, eta: float, cfg: SelectionConfig) -> LocalFit:
    """
    Fit every admissible candidate and return the criterion minimiser.
    Ties go to fewer parameters, then to candidate order; failed and boundary
    fits are skipped; intercept-only is the fallback.
    """
    if cfg.k != dist.k:
        raise ModelSpecError(f"candidates are for k={cfg.k}, distribution has k={dist.k}")

    scored = _score_candidates(cfg.candidates, dist, eta, cfg.criterion)
    if cfg.strategy is SearchStrategy.STEPWISE:
        base = [item for item in scored if item[3].model.name == 'independence']
        if base:
            scored.extend(_stepwise_extend(base[0][3], dist, eta, cfg.criterion, offset=len(cfg.candidates)))

    if not scored:
        logger.debug(f"No admissible candidate converged at eta={eta:.4g}; falling back to intercept-only")
        return intercept_fit(dist, eta)

    best = min(scored, key=lambda item: item[:3])
    assert all(best[0] <= item[0] for item in scored)
    return best[3]


def candidate_scores(dist: PatternDistribution, eta: float, cfg: SelectionConfig) -> Dict[str, float]:
    """Criterion value of every admissible converged candidate, by model name"""
    return {item[3].model.name: item[0] for item in _score_candidates(cfg.candidates, dist, eta, cfg.criterion)}
