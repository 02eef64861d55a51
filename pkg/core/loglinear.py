"""
Local log-linear models over capture patterns.

Models are parameterised as a multinomial logit over the nonzero patterns:
log pi(y; u) = d(y).u - log Z(u), Z(u) = sum_{z != 0} exp(d(z).u).
The intercept is absorbed by the normalisation, and every regressor vanishes
at the zero pattern, so the extrapolated zero cell is pi(0; u) = 1 / Z(u).

Fitting maximises the pseudo-multinomial likelihood with eta trials and cell
pseudo-counts eta * pi_hat(y) by damped Newton ascent.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from itertools import combinations
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp

from config.settings import Config
from core.errors import DatasetError, DivisionByZeroError, ModelSpecError, NonConvergenceError
from core.models import CapturePattern, CrossClassification, PatternDistribution, nonzero_patterns

logger = logging.getLogger(__name__)

MODEL_NAMES = ('intercept', 'independence', 'saturated', 'equal-catch', 'quasi-symmetry')
BOUNDARY_PROBABILITY = 1e-8  # fitted mass of an empty cell below this means separation
ROUNDING_SLACK = 8 * np.finfo(float).eps


def _term_label(term: FrozenSet[int]) -> str:
    return ''.join(str(j) for j in sorted(term))


def _term_key(term: FrozenSet[int]):
    return (len(term), sorted(term))


@dataclass(frozen=True)
class LogLinearModel:
    """
    A set of list effects and interactions (1-based list indices) plus the
    optional equal-catchability and squared-sum regressors.
    """
    k: int
    terms: Tuple[FrozenSet[int], ...] = ()
    equal_catch: bool = False
    squared_sum: bool = False
    name: str = ""

    def __post_init__(self):
        if self.k < 2:
            raise ModelSpecError(f"log-linear models need k >= 2 lists, got {self.k}")
        terms = []
        for term in self.terms:
            term = frozenset(int(j) for j in term)
            if not term:
                raise ModelSpecError("model terms must be nonempty")
            if any(not 1 <= j <= self.k for j in term):
                raise ModelSpecError(f"term {sorted(term)} refers to a list outside 1..{self.k}")
            if len(term) == self.k:
                raise ModelSpecError("the k-way interaction leaves the missing cell unidentifiable")
            if term in terms:
                raise ModelSpecError(f"duplicate term {_term_label(term)}")
            terms.append(term)
        if self.equal_catch and any(len(term) == 1 for term in terms):
            raise ModelSpecError("equal catchability replaces the individual list effects")
        terms.sort(key=_term_key)
        object.__setattr__(self, 'terms', tuple(terms))
        if self.q_model > 2 ** self.k - 2:
            raise ModelSpecError(f"{self.q_model} free coefficients exceed the {2 ** self.k - 2} available")
        if not self.name:
            object.__setattr__(self, 'name', self.term_string or 'intercept')

    @property
    def q_model(self) -> int:
        """Free coefficients, excluding the normalising intercept"""
        return len(self.terms) + int(self.equal_catch) + int(self.squared_sum)

    @property
    def term_string(self) -> str:
        labels = [_term_label(term) for term in self.terms]
        if self.equal_catch:
            labels.append('sum')
        if self.squared_sum:
            labels.append('sum2')
        return ','.join(labels)

    def row(self, bits: Sequence[int]) -> np.ndarray:
        """Regressors of one pattern in the model's column order"""
        y = np.asarray(bits, dtype=float)
        values = [float(np.prod(y[[j - 1 for j in sorted(term)]])) for term in self.terms]
        total = float(y.sum())
        if self.equal_catch:
            values.append(total)
        if self.squared_sum:
            values.append(total ** 2)
        return np.array(values, dtype=float)

    @cached_property
    def design_matrix(self) -> np.ndarray:
        matrix = np.array([self.row(bits) for bits in nonzero_patterns(self.k)], dtype=float)
        matrix = matrix.reshape(2 ** self.k - 1, self.q_model)
        matrix.setflags(write=False)
        return matrix

    # ------------------------------------------------------------------
    # Catalogue
    # ------------------------------------------------------------------
    @classmethod
    def intercept(cls, k: int) -> 'LogLinearModel':
        return cls(k=k, name='intercept')

    @classmethod
    def independence(cls, k: int) -> 'LogLinearModel':
        return cls(k=k, terms=tuple(frozenset({j}) for j in range(1, k + 1)), name='independence')

    @classmethod
    def saturated(cls, k: int) -> 'LogLinearModel':
        terms = [frozenset(c) for size in range(1, k) for c in combinations(range(1, k + 1), size)]
        return cls(k=k, terms=tuple(terms), name='saturated')

    @classmethod
    def equal_catchability(cls, k: int) -> 'LogLinearModel':
        return cls(k=k, equal_catch=True, name='equal-catch')

    @classmethod
    def quasi_symmetry(cls, k: int) -> 'LogLinearModel':
        return cls(k=k, terms=tuple(frozenset({j}) for j in range(1, k + 1)), squared_sum=True,
                   name='quasi-symmetry')

    @classmethod
    def parse(cls, spec: str, k: int) -> 'LogLinearModel':
        """Model from a catalogue name or a term list such as '1,2,3,12,13'"""
        spec = spec.strip().lower()
        builders = {
            'intercept': cls.intercept,
            'independence': cls.independence,
            'saturated': cls.saturated,
            'equal-catch': cls.equal_catchability,
            'quasi-symmetry': cls.quasi_symmetry,
        }
        if spec in builders:
            return builders[spec](k)

        terms = []
        equal_catch = squared_sum = False
        for token in (t.strip() for t in spec.split(',')):
            if token == 'sum':
                equal_catch = True
            elif token == 'sum2':
                squared_sum = True
            elif token.isdigit():
                terms.append(frozenset(int(ch) for ch in token))
            else:
                raise ModelSpecError(
                    f"unknown model '{spec}'; expected one of {', '.join(MODEL_NAMES)} or a term list like 1,2,3,12"
                )
        if not terms and not equal_catch and not squared_sum:
            raise ModelSpecError(f"model '{spec}' has no terms")
        return cls(k=k, terms=tuple(terms), equal_catch=equal_catch, squared_sum=squared_sum)


class FitStatus(Enum):
    CONVERGED = "converged"
    BOUNDARY = "boundary"
    FAILED = "failed"


@dataclass(frozen=True, eq=False)
class LocalFit:
    """PMML fit of one model to one smoothed table"""
    model: LogLinearModel
    coefficients: np.ndarray
    pi0: float
    loglik: float
    eta: float
    q: int
    fitted: np.ndarray
    status: FitStatus = FitStatus.CONVERGED
    iterations: int = 0
    message: str = ""

    @property
    def succeeded(self) -> bool:
        return self.status is FitStatus.CONVERGED

    @property
    def usable(self) -> bool:
        return self.status is not FitStatus.FAILED

    @property
    def u0(self) -> float:
        """Intercept of the unnormalised log-linear form, -log Z"""
        return math.log(self.pi0) if self.pi0 > 0 else -math.inf


@dataclass(frozen=True, eq=False)
class GlobalFit:
    """Conditional MLE on a raw table with the implied population size"""
    fit: LocalFit
    p0: float
    n_hat: float
    c0_hat: float
    warnings: Tuple[str, ...] = ()

    @property
    def coefficients(self) -> np.ndarray:
        return self.fit.coefficients


def design_row(model: LogLinearModel, y: CapturePattern) -> np.ndarray:
    if y.k != model.k:
        raise ModelSpecError(f"pattern {y.label} has {y.k} lists, model expects {model.k}")
    return model.row(y.bits)


def _log_probs(X: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, float]:
    linear = X @ u
    log_z = float(logsumexp(linear))
    return linear - log_z, log_z


def _objective(target: np.ndarray, support: np.ndarray, log_p: np.ndarray) -> float:
    """Per-trial PMML kernel sum_y pi_hat(y) log pi(y; u); empty cells contribute nothing"""
    return float(np.dot(target[support], log_p[support]))


def pmml_gradient(model: LogLinearModel, dist: PatternDistribution, eta: float, u: np.ndarray) -> np.ndarray:
    """Analytic gradient of the PMML log-likelihood at u"""
    log_p, _ = _log_probs(model.design_matrix, np.asarray(u, dtype=float))
    return eta * model.design_matrix.T @ (dist.probs - np.exp(log_p))


def pmml_loglik(model: LogLinearModel, dist: PatternDistribution, eta: float, u: np.ndarray) -> float:
    """PMML log-likelihood at u, including the Gamma-function multinomial constant"""
    log_p, _ = _log_probs(model.design_matrix, np.asarray(u, dtype=float))
    support = dist.probs > 0
    return _multinomial_constant(dist.probs, eta) + eta * _objective(dist.probs, support, log_p)


def _multinomial_constant(target: np.ndarray, eta: float) -> float:
    return float(gammaln(eta + 1.0) - np.sum(gammaln(eta * target + 1.0)))


def _newton_direction(X: np.ndarray, probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    mean = X.T @ probs
    information = X.T @ (probs[:, None] * X) - np.outer(mean, mean)
    try:
        step = np.linalg.solve(information, grad)
    except np.linalg.LinAlgError:
        return grad
    if not np.all(np.isfinite(step)) or np.dot(step, grad) <= 0:
        return grad
    return step


def _line_search(X, target, support, u, value, direction, max_halvings: int = 60):
    """Backtrack from the full step; a change within rounding of the objective counts as no loss"""
    slack = ROUNDING_SLACK * max(1.0, abs(value))
    t = 1.0
    for _ in range(max_halvings):
        candidate = u + t * direction
        log_p, log_z = _log_probs(X, candidate)
        candidate_value = _objective(target, support, log_p)
        if np.isfinite(candidate_value) and candidate_value >= value - slack:
            return candidate, candidate_value, log_p, log_z
        t *= 0.5
    return None


def pmml_fit(model: LogLinearModel, dist: PatternDistribution, eta: float, *,
             max_iter: Optional[int] = None, tol: Optional[float] = None,
             bound: Optional[float] = None) -> LocalFit:
    """
    Pseudo-multinomial maximum likelihood fit of a model to a smoothed table.

    Convergence is judged on the per-trial gradient X^T (pi_hat - pi(u)).
    Coefficients beyond +/- bound flag a boundary fit (separation).
    """
    if dist.k != model.k:
        raise ModelSpecError(f"distribution has {dist.k} lists, model expects {model.k}")
    if not eta >= 1.0 - 1e-9:
        raise ValueError(f"eta must be at least 1, got {eta}")
    max_iter = max_iter or Config.NEWTON_MAX_ITER
    tol = tol or Config.NEWTON_GRADIENT_TOL
    bound = bound or Config.COEFFICIENT_BOUND

    X = model.design_matrix
    target = dist.probs
    support = target > 0
    u = np.zeros(model.q_model)
    log_p, log_z = _log_probs(X, u)
    value = _objective(target, support, log_p)

    status = FitStatus.FAILED
    message = f"no convergence after {max_iter} Newton iterations"
    iterations = 0

    if model.q_model == 0:
        status, message = FitStatus.CONVERGED, ""
    else:
        for iterations in range(1, max_iter + 1):
            probs = np.exp(log_p)
            grad = X.T @ (target - probs)
            if np.max(np.abs(grad)) <= tol:
                status, message = FitStatus.CONVERGED, ""
                polished = _line_search(X, target, support, u, value, _newton_direction(X, probs, grad), 1)
                if polished is not None:
                    u, value, log_p, log_z = polished
                break

            step = _line_search(X, target, support, u, value, _newton_direction(X, probs, grad))
            if step is None:
                step = _line_search(X, target, support, u, value, grad)
            if step is None:
                if np.max(np.abs(grad)) <= math.sqrt(tol):
                    status, message = FitStatus.CONVERGED, "stalled at numerical precision"
                else:
                    message = f"line search failed at iteration {iterations}"
                break
            u, value, log_p, log_z = step

            if np.max(np.abs(u)) > bound:
                status = FitStatus.BOUNDARY
                message = f"coefficient exceeded +/-{bound:g} (separation)"
                break

    if status is FitStatus.CONVERGED and not np.all(support):
        if np.min(np.exp(log_p[~support])) < BOUNDARY_PROBABILITY:
            status = FitStatus.BOUNDARY
            message = "fitted probability of an empty cell is numerically zero (separation)"

    pi0 = math.exp(-log_z) if -log_z < 709.0 else math.inf
    if not math.isfinite(pi0):
        status, message = FitStatus.FAILED, "zero-cell extrapolation overflowed"

    loglik = _multinomial_constant(target, eta) + eta * value
    fit = LocalFit(
        model=model,
        coefficients=u,
        pi0=pi0 if math.isfinite(pi0) else math.nan,
        loglik=loglik,
        eta=float(eta),
        q=model.q_model,
        fitted=np.exp(log_p),
        status=status,
        iterations=iterations,
        message=message,
    )
    if status is not FitStatus.CONVERGED:
        logger.debug(f"PMML fit of {model.name} ended {status.value}: {message}")
    return fit


def impute_zero(fit: LocalFit) -> float:
    """Extrapolate the fitted log-linear form to the zero pattern: exp(-log Z(u))"""
    if fit.status is FitStatus.FAILED:
        raise NonConvergenceError(f"cannot impute from a failed fit of {fit.model.name}: {fit.message}")
    _, log_z = _log_probs(fit.model.design_matrix, fit.coefficients)
    if -log_z >= 709.0:
        raise NonConvergenceError("zero-cell extrapolation overflowed")
    return math.exp(-log_z)


def odd_even_impute(dist: PatternDistribution) -> float:
    """Product of odd-sum cells over product of even-sum nonzero cells"""
    totals = np.array([sum(bits) for bits in nonzero_patterns(dist.k)])
    odd = dist.probs[totals % 2 == 1]
    even = dist.probs[totals % 2 == 0]
    if np.any(even <= 0):
        raise DivisionByZeroError("an even-sum pattern has probability zero")
    if np.any(odd <= 0):
        return 0.0
    return math.exp(float(np.sum(np.log(odd)) - np.sum(np.log(even))))


def global_fit(cc: CrossClassification, model: LogLinearModel, **fit_options) -> GlobalFit:
    """Conditional MLE on the raw table, then n_hat maximising the marginal binomial likelihood"""
    if cc.missing_cell is not None:
        raise DatasetError("global fit expects a table without a missing cell")
    if not cc.is_integral:
        raise DatasetError("global fit expects integer counts")
    n_c = cc.n_c
    fit = pmml_fit(model, cc.proportions(), n_c, **fit_options)

    warnings: List[str] = []
    if fit.status is FitStatus.FAILED:
        raise NonConvergenceError(f"global fit of {model.name} failed: {fit.message}")
    if fit.status is FitStatus.BOUNDARY:
        warnings.append(f"global fit of {model.name} is on the boundary: {fit.message}")
    if model.squared_sum and fit.coefficients[-1] < 0:
        warnings.append(f"quasi-symmetry coefficient u_sum is negative ({fit.coefficients[-1]:.6g})")
    for warning in warnings:
        logger.warning(warning)

    p0 = fit.pi0 / (1.0 + fit.pi0)
    n_hat = n_c / (1.0 - p0)
    logger.info(f"Global {model.name} fit: n_c={n_c:g}, c0_hat={n_hat - n_c:.6g}, status={fit.status.value}")
    return GlobalFit(fit=fit, p0=p0, n_hat=n_hat, c0_hat=n_hat - n_c, warnings=tuple(warnings))


def hierarchical_family(k: int) -> List[LogLinearModel]:
    """
    Hierarchical models with every list effect and without the k-way term,
    ordered by size: independence first, saturated last.
    """
    interactions = [frozenset(c) for size in range(2, k) for c in combinations(range(1, k + 1), size)]
    if len(interactions) > 16:
        raise ModelSpecError(f"exhaustive enumeration is impractical for k={k}; use the stepwise search")
    mains = tuple(frozenset({j}) for j in range(1, k + 1))
    models = []
    for mask in range(2 ** len(interactions)):
        chosen = [term for bit, term in enumerate(interactions) if mask >> bit & 1]
        if all(is_hierarchical_addition(term, chosen) for term in chosen):
            models.append(LogLinearModel(k=k, terms=mains + tuple(chosen)))
    models.sort(key=lambda m: (m.q_model, [_term_key(t) for t in m.terms]))
    named = []
    for model in models:
        if model.q_model == k:
            model = LogLinearModel.independence(k)
        elif model.q_model == 2 ** k - 2:
            model = LogLinearModel.saturated(k)
        named.append(model)
    return named


def is_hierarchical_addition(term: FrozenSet[int], present: Sequence[FrozenSet[int]]) -> bool:
    """Every proper sub-interaction of the term (size >= 2) is already present"""
    present = set(present)
    return all(frozenset(sub) in present for sub in combinations(sorted(term), len(term) - 1) if len(sub) >= 2)
