"""
Report Persistence Utility
Handles saving and loading estimate and bootstrap reports to/from JSON
"""
import json
import logging
import math
import os
from typing import Any, Dict

from core.errors import DatasetError
from core.models import BootstrapResult, EstimateReport, UnitImputation

logger = logging.getLogger(__name__)


def _format_float(value: float) -> str:
    if math.isnan(value):
        return 'NaN'
    if math.isinf(value):
        return 'Infinity' if value > 0 else '-Infinity'
    text = f"{value:.17g}"
    if all(ch not in text for ch in '.e'):
        text += '.0'
    return text


def _encode(value: Any, indent: int, level: int) -> str:
    """JSON text with every float written to 17 significant digits"""
    pad = ' ' * (indent * (level + 1))
    closing = ' ' * (indent * level)
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return _format_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{pad}{json.dumps(str(key))}: {_encode(item, indent, level + 1)}" for key, item in value.items()]
        return '{\n' + ',\n'.join(items) + '\n' + closing + '}'
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        items = [f"{pad}{_encode(item, indent, level + 1)}" for item in value]
        return '[\n' + ',\n'.join(items) + '\n' + closing + ']'
    if hasattr(value, 'item'):
        return _encode(value.item(), indent, level)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(data: Dict[str, Any], indent: int = 2) -> str:
    return _encode(data, indent, 0) + '\n'


def _serialize_report(report: EstimateReport) -> Dict[str, Any]:
    return report.to_dict()


def _deserialize_report(data: Dict[str, Any]) -> EstimateReport:
    """Rebuild a report; smoothed tables are not stored and come back empty"""
    try:
        units = [
            UnitImputation(
                id=str(unit['id']),
                x=tuple(float(v) for v in unit['x']),
                pi0=float(unit['pi0']),
                psi=float(unit['psi']),
                model=unit['model'],
            )
            for unit in data['per_unit']
        ]
        bandwidth = data.get('bandwidth')
        return EstimateReport(
            n_hat=float(data['n_hat']),
            c0_hat=float(data['c0_hat']),
            n_c=int(data['n_c']),
            k=int(data['k']),
            model=data['model'],
            bandwidth=tuple(bandwidth) if bandwidth is not None else None,
            per_unit=tuple(units),
            warnings=tuple(data.get('warnings', [])),
            partial=bool(data.get('partial', False)),
            config=data.get('config', {}),
            list_labels=tuple(data.get('list_labels', [])),
            covariate_labels=tuple(data.get('covariate_labels', [])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed report JSON: {e}")


def save_report(report: EstimateReport, path: str) -> str:
    """Save an estimate report as JSON"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(_serialize_report(report)))
    logger.info(f"💾 Report saved: {path}")
    return path


def load_report(path: str) -> EstimateReport:
    """Load an estimate report from JSON"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.error(f"❌ Report not found: {path}")
        raise
    report = _deserialize_report(data)
    logger.info(f"📂 Report loaded: {path} (n_c={report.n_c}, c0_hat={report.c0_hat:.6g})")
    return report


def save_bootstrap(result: BootstrapResult, path: str) -> str:
    """Save bootstrap replicates and summaries as JSON"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(result.to_dict()))
    logger.info(f"💾 Bootstrap result saved: {path}")
    return path
