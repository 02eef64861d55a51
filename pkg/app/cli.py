"""
Command-line front end: ingest, estimate, bootstrap and simulate.

Exit codes: 0 complete, 2 partial report (some unit imputations failed),
1 fatal error. argparse usage errors also exit with 2.
"""
import argparse
import logging
import operator
import os
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from config.settings import Config
from core.bootstrap import SyntheticSpec, bootstrap_ci, simulate_synthetic
from core.errors import EstimationError, ZeroOverlapError
from core.estimators import Imputer, PipelineConfig, petersen, restrict_region, run_pipeline
from core.loglinear import LogLinearModel
from core.models import BandwidthConfig, BandwidthMethod, Dataset, EstimateReport, KernelType
from core.tables import collapse_lists, cross_classify, rank_covariate
from utils.file_manager import FileManager
from utils.report_persistence import save_bootstrap, save_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

BIRDS_LISTS = ('y2009', 'y2010', 'y2011')
BIRDS_COVARIATES = ('rank',)

_COMPARISONS = {'<': operator.lt, '<=': operator.le, '>': operator.gt, '>=': operator.ge}
_RESTRICTION = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*$')


@dataclass
class RunConfig:
    """Everything one CLI invocation needs"""
    input_path: str
    list_columns: Tuple[str, ...]
    covariate_columns: Tuple[str, ...]
    id_column: Optional[str] = 'id'
    model: str = 'independence'
    bandwidth: BandwidthConfig = field(default_factory=BandwidthConfig)
    candidates: Optional[Tuple[str, ...]] = None
    psi_floor: float = Config.PSI_FLOOR
    use_global: bool = False
    add_rank: bool = False
    restrict: Optional[str] = None
    seed: int = Config.DEFAULT_SEED
    reps: int = Config.BOOTSTRAP_REPS
    level: float = Config.BOOTSTRAP_LEVEL
    output: Optional[str] = None
    emit_curves: Optional[str] = None
    max_workers: int = Config.MAX_WORKERS

    def __post_init__(self):
        if len(self.list_columns) < 2:
            raise ValueError(f"exactly k >= 2 list columns are required, got {list(self.list_columns)}")
        validate_model_name(self.model, len(self.list_columns))
        for spec in self.candidates or ():
            LogLinearModel.parse(spec, len(self.list_columns))

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            model=self.model,
            bandwidth=self.bandwidth,
            candidates=self.candidates,
            psi_floor=self.psi_floor,
            use_global=self.use_global,
            max_workers=self.max_workers,
        )


def validate_model_name(name: str, k: int) -> str:
    """Accept imputer names and anything LogLinearModel.parse understands"""
    if name.strip().lower() in {imputer.value for imputer in Imputer}:
        return name
    LogLinearModel.parse(name, k)
    return name


def parse_restriction(text: str, covariate_labels: Sequence[str]) -> Tuple[Callable[[Tuple[float, ...]], bool], str]:
    """
    Predicate from an expression like 'x<150' or 'rank>=10'. 'x' names the
    first covariate; any covariate label may be used.
    """
    match = _RESTRICTION.match(text)
    if not match:
        raise ValueError(f"cannot parse restriction '{text}'; expected e.g. x<150")
    name, symbol, number = match.groups()
    labels = list(covariate_labels)
    if name in labels:
        position = labels.index(name)
    elif name == 'x' and labels:
        position = 0
    else:
        raise ValueError(f"restriction names unknown covariate '{name}'")
    try:
        threshold = float(number)
    except ValueError:
        raise ValueError(f"restriction threshold '{number}' is not a number")
    compare = _COMPARISONS[symbol]
    description = f"{labels[position]}{symbol}{threshold:g}"
    return (lambda x: compare(x[position], threshold)), description


def summarize_dataset(dataset: Dataset) -> Dict[str, Any]:
    """Cross-classification, list totals and the Petersen estimate of every list pair"""
    cc = cross_classify(dataset)
    marginals = dataset.pattern_matrix.sum(axis=0)
    pairs = {}
    for first, second in combinations(range(dataset.k), 2):
        label = f"{dataset.list_labels[first]}x{dataset.list_labels[second]}"
        try:
            pairs[label] = petersen(collapse_lists(cc, (first, second)))
        except ZeroOverlapError:
            pairs[label] = None
    return {
        'n_c': dataset.n_c,
        'k': dataset.k,
        'q': dataset.q,
        'table': {label: int(count) for label, count in cc.to_dict().items()},
        'marginals': {label: int(total) for label, total in zip(dataset.list_labels, marginals)},
        'petersen': pairs,
    }


def load_input(cfg: RunConfig, file_manager: FileManager) -> Dataset:
    dataset = file_manager.load_dataset(cfg.input_path, cfg.list_columns, cfg.covariate_columns, cfg.id_column)
    if cfg.add_rank:
        dataset = rank_covariate(dataset)
    return dataset


def estimate_report(cfg: RunConfig, dataset: Dataset) -> EstimateReport:
    report = run_pipeline(dataset, cfg.pipeline_config())
    if cfg.restrict:
        predicate, description = parse_restriction(cfg.restrict, dataset.covariate_labels)
        report = restrict_region(report, predicate, description)
    return report


def _print_report(report: EstimateReport):
    print("=" * 70)
    print(f"Population size estimate ({report.model}{', global' if report.bandwidth is None else ''})")
    print("=" * 70)
    print(f"Observed units n_c: {report.n_c}")
    print(f"Unobserved c0_hat: {report.c0_hat:.6g}")
    print(f"Population n_hat:  {report.n_hat:.6g}")
    if report.bandwidth is not None:
        print(f"Bandwidth: {', '.join(f'{v:.6g}' for v in report.bandwidth)}")
    if report.partial:
        print("Report is PARTIAL: some unit imputations failed")
    for warning in report.warnings:
        print(f"warning: {warning}")


def run_ingest(cfg: RunConfig) -> int:
    dataset = load_input(cfg, FileManager())
    dataset.require_units()
    summary = summarize_dataset(dataset)
    print("=" * 70)
    print(f"{cfg.input_path}: n_c={summary['n_c']}, k={summary['k']} lists, q={summary['q']} covariates")
    print("=" * 70)
    for label, count in summary['table'].items():
        print(f"  {label}: {count}")
    print("List totals: " + ", ".join(f"{label}={total}" for label, total in summary['marginals'].items()))
    for pair, value in summary['petersen'].items():
        print(f"Petersen {pair}: {'undefined (no overlap)' if value is None else f'{value:.6g}'}")
    return EXIT_OK


def run_estimate(cfg: RunConfig) -> int:
    file_manager = FileManager()
    dataset = load_input(cfg, file_manager)
    report = estimate_report(cfg, dataset)
    save_report(report, cfg.output or os.path.join(Config.OUTPUT_DIR, 'estimate.json'))
    if cfg.emit_curves:
        file_manager.emit_curves(report, cfg.emit_curves)
    _print_report(report)
    return EXIT_PARTIAL if report.partial else EXIT_OK


def run_bootstrap(cfg: RunConfig) -> int:
    dataset = load_input(cfg, FileManager())
    result = bootstrap_ci(dataset, cfg.pipeline_config(), B=cfg.reps, level=cfg.level,
                          seed=cfg.seed, max_workers=cfg.max_workers)
    save_bootstrap(result, cfg.output or os.path.join(Config.OUTPUT_DIR, 'bootstrap.json'))
    print("=" * 70)
    print(f"Parametric bootstrap ({cfg.model}, B={result.B}, seed={result.seed})")
    print("=" * 70)
    print(f"c0_hat: {result.estimate:.6g}")
    print(f"se:     {result.se:.6g}")
    print(f"{result.level:.0%} CI: ({result.ci[0]:.6g}, {result.ci[1]:.6g})")
    if result.n_failed:
        print(f"{result.n_failed} replicates failed")
    return EXIT_PARTIAL if result.partial else EXIT_OK


def run_simulate(args: argparse.Namespace) -> int:
    if args.intercepts:
        intercepts = _floats(args.intercepts)
        slopes = tuple((v,) for v in _floats(args.slopes)) if args.slopes else ()
        spec = SyntheticSpec(n=args.n, k=len(intercepts), intercepts=intercepts, slopes=slopes,
                             covariate_low=args.low, covariate_high=args.high)
    else:
        spec = SyntheticSpec.constant(n=args.n, k=args.k, p=args.p)
    sample = simulate_synthetic(spec, seed=args.seed)
    csv_file, truth_file = FileManager().save_synthetic(
        sample.dataset, sample.truth(args.seed), args.output or 'synthetic.csv'
    )
    print(f"Simulated n={sample.true_n}, observed n_c={sample.dataset.n_c}, expected c0={sample.true_c0:.6g}")
    print(f"Data: {csv_file}")
    print(f"Truth: {truth_file}")
    return EXIT_OK


# ============================================================================
# Argument parsing
# ============================================================================

def _floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _names(text: str) -> Tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(',') if v.strip())
    if not names:
        raise argparse.ArgumentTypeError("expected at least one column name")
    return names


def _replicates(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"bootstrap needs at least 2 replicates, got {value}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {value}")
    return value


def _add_data_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--input", type=str, default=None,
                        help="CSV with one row per observed unit (default: bundled birds data)")
    parser.add_argument("--lists", type=_names, default=None, help="comma-separated 0/1 list columns")
    parser.add_argument("--covariates", type=_names, default=None, help="comma-separated covariate columns")
    parser.add_argument("--id-column", type=str, default='id')
    parser.add_argument("--add-rank", action="store_true",
                        help="append the reverse rank of total captures as a covariate")


def _add_estimate_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--model", type=str, default='independence',
                        help="independence, saturated, equal-catch, quasi-symmetry, intercept, adjusted-saturated, "
                             "odd-even, select-bic, select-aicc, or a term list such as 1,2,3,12")
    parser.add_argument("--global", dest="use_global", action="store_true",
                        help="fit one model to the raw table instead of the local pipeline")
    parser.add_argument("--kernel", choices=[k.value for k in KernelType], default=Config.KERNEL)
    parser.add_argument("--bandwidth", type=_floats, default=None,
                        help="comma-separated fixed covariate bandwidths, one per covariate")
    parser.add_argument("--bandwidth-method", choices=[m.value for m in BandwidthMethod], default=None,
                        help="lscv selects bandwidths by least-squares cross-validation, fixed uses --bandwidth "
                             "(default: fixed when --bandwidth is given, otherwise BANDWIDTH_METHOD)")
    parser.add_argument("--grid-points", type=int, default=Config.LSCV_GRID_POINTS)
    parser.add_argument("--candidates", type=str, default=None,
                        help="candidate models for select-*, separated by semicolons because a term list "
                             "such as 1,2,3,12 already uses commas (e.g. 'independence;1,2,3,12;equal-catch')")
    parser.add_argument("--psi-floor", type=_probability, default=Config.PSI_FLOOR)
    parser.add_argument("--workers", type=int, default=Config.MAX_WORKERS)
    parser.add_argument("--output", type=str, default=None, help="JSON output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spstrat",
        description="Population size from overlapping lists by smooth post-stratification",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    ingest = subparsers.add_parser("ingest", help="validate a CSV and summarise its cross-classification")
    _add_data_arguments(ingest)

    estimate = subparsers.add_parser("estimate", help="estimate the number of unobserved units")
    _add_data_arguments(estimate)
    _add_estimate_arguments(estimate)
    estimate.add_argument("--restrict", type=str, default=None, help="keep imputations inside a region, e.g. x<150")
    estimate.add_argument("--emit-curves", type=str, default=None, help="CSV path for stacked conditional curves")

    bootstrap = subparsers.add_parser("bootstrap", help="parametric-bootstrap standard error and interval")
    _add_data_arguments(bootstrap)
    _add_estimate_arguments(bootstrap)
    bootstrap.add_argument("--reps", type=_replicates, default=Config.BOOTSTRAP_REPS)
    bootstrap.add_argument("--level", type=float, default=Config.BOOTSTRAP_LEVEL)
    bootstrap.add_argument("--seed", type=int, default=Config.DEFAULT_SEED)

    simulate = subparsers.add_parser("simulate", help="write a synthetic dataset and its truth sidecar")
    simulate.add_argument("--n", type=int, default=1000)
    simulate.add_argument("--k", type=int, default=3)
    simulate.add_argument("--p", type=_probability, default=0.5, help="constant per-list capture probability")
    simulate.add_argument("--intercepts", type=str, default=None,
                          help="comma-separated logit intercepts, one per list (overrides --k/--p)")
    simulate.add_argument("--slopes", type=str, default=None, help="comma-separated logit slopes, one per list")
    simulate.add_argument("--low", type=float, default=0.0)
    simulate.add_argument("--high", type=float, default=1.0)
    simulate.add_argument("--seed", type=int, default=Config.DEFAULT_SEED)
    simulate.add_argument("--output", type=str, default=None, help="synthetic CSV path")
    return parser


def bandwidth_method(requested: Optional[str], values: Optional[Tuple[float, ...]]) -> BandwidthMethod:
    """Explicit method if given; otherwise fixed when values are given, else the configured default"""
    if requested is not None:
        method = BandwidthMethod(requested)
    elif values is not None:
        method = BandwidthMethod.FIXED
    else:
        method = BandwidthMethod(Config.BANDWIDTH_METHOD)
    if method is BandwidthMethod.FIXED and values is None:
        raise ValueError("--bandwidth-method fixed needs --bandwidth")
    if method is BandwidthMethod.LSCV and values is not None:
        raise ValueError("--bandwidth gives fixed values; drop it or use --bandwidth-method fixed")
    return method


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Translate parsed arguments, defaulting to the bundled birds fixture"""
    if args.input is None:
        input_path = Config.BIRDS_FIXTURE
        lists = args.lists or BIRDS_LISTS
        covariates = args.covariates if args.covariates is not None else BIRDS_COVARIATES
    else:
        if args.lists is None:
            raise ValueError("--lists is required with --input")
        input_path, lists, covariates = args.input, args.lists, args.covariates or ()

    options: Dict[str, Any] = {}
    if hasattr(args, 'model'):
        bandwidth = BandwidthConfig(method=bandwidth_method(args.bandwidth_method, args.bandwidth),
                                    values=args.bandwidth, kernel=KernelType(args.kernel),
                                    grid_points=args.grid_points)
        candidates = tuple(s.strip() for s in args.candidates.split(';') if s.strip()) if args.candidates else None
        options.update(model=args.model, use_global=args.use_global, bandwidth=bandwidth,
                       candidates=candidates, psi_floor=args.psi_floor, output=args.output,
                       max_workers=args.workers)
    for name in ('restrict', 'emit_curves', 'reps', 'level', 'seed'):
        if hasattr(args, name):
            options[name] = getattr(args, name)

    return RunConfig(
        input_path=input_path,
        list_columns=tuple(lists),
        covariate_columns=tuple(covariates),
        id_column=args.id_column,
        add_rank=args.add_rank,
        **options,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, 'bandwidth_method'):
        try:
            bandwidth_method(args.bandwidth_method, args.bandwidth)
        except ValueError as e:
            parser.error(str(e))
    try:
        if args.command == "simulate":
            return run_simulate(args)
        cfg = config_from_args(args)
        if args.command == "ingest":
            return run_ingest(cfg)
        if args.command == "estimate":
            return run_estimate(cfg)
        return run_bootstrap(cfg)
    except (EstimationError, ValueError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}")
        return EXIT_FATAL
