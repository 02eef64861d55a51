import json
import logging
import math
import os
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import Config
from core.errors import DatasetError
from core.models import CapturePattern, Dataset, EstimateReport, ObservedUnit, pattern_labels

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def _parse_float(text: str) -> float:
    """Correctly rounded parse, so 17-digit output reads back bit for bit; NaN when unparseable"""
    try:
        return float(text)
    except ValueError:
        return math.nan


class FileManager:
    """Reads capture-recapture CSVs and writes curve, dataset and truth files"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or Config.OUTPUT_DIR

    def _resolve(self, path: str) -> str:
        """Relative output paths land in the output directory"""
        if os.path.isabs(path) or os.path.dirname(path):
            resolved = path
        else:
            resolved = os.path.join(self.output_dir, path)
        directory = os.path.dirname(resolved)
        if directory:
            os.makedirs(directory, exist_ok=True)
        return resolved

    def load_dataset(self, path: str, list_columns: Sequence[str], covariate_columns: Sequence[str],
                     id_column: Optional[str] = 'id') -> Dataset:
        """
        Parse a CSV with one row per observed unit. List columns hold 0/1,
        covariate columns hold finite reals. Errors carry the CSV row number
        (header is row 1) and the column name.
        """
        list_columns = list(list_columns)
        covariate_columns = list(covariate_columns)
        if len(list_columns) < 2:
            raise DatasetError(f"at least two list columns are required, got {list_columns}")

        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except FileNotFoundError:
            logger.error(f"❌ Input file not found: {path}")
            raise DatasetError(f"input file not found: {path}")
        except pd.errors.EmptyDataError:
            raise DatasetError(f"input file is empty: {path}")
        except pd.errors.ParserError as e:
            raise DatasetError(f"malformed CSV {path}: {e}")

        frame.columns = [str(c).strip() for c in frame.columns]
        for column in list_columns + covariate_columns:
            if column not in frame.columns:
                raise DatasetError("column not found in input header", column=column)
        if id_column and id_column not in frame.columns:
            logger.debug(f"No '{id_column}' column; row numbers become unit ids")
            id_column = None

        bits = np.zeros((len(frame), len(list_columns)), dtype=int)
        for j, column in enumerate(list_columns):
            values = frame[column].str.strip()
            bad = ~values.isin(['0', '1'])
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise DatasetError(f"list membership must be 0 or 1, got '{values.iloc[row]}'", row=row + 2, column=column)
            bits[:, j] = values.astype(int).to_numpy()

        covariates = np.zeros((len(frame), len(covariate_columns)))
        for d, column in enumerate(covariate_columns):
            values = frame[column].str.strip().map(_parse_float).astype(float)
            bad = values.isna() | ~np.isfinite(values.fillna(0.0))
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise DatasetError(f"covariate must be a finite number, got '{frame[column].iloc[row]}'",
                                   row=row + 2, column=column)
            covariates[:, d] = values.to_numpy(dtype=float)

        unseen = np.flatnonzero(bits.sum(axis=1) == 0)
        if len(unseen):
            raise DatasetError("unit appears on none of the lists", row=int(unseen[0]) + 2)

        ids = frame[id_column].str.strip().tolist() if id_column else [str(i + 1) for i in range(len(frame))]
        if len(set(ids)) != len(ids):
            logger.warning(f"⚠️ Duplicate unit ids in {path}")

        units = tuple(
            ObservedUnit(id=ids[i], covariates=tuple(covariates[i]), pattern=CapturePattern(tuple(bits[i])))
            for i in range(len(frame))
        )
        dataset = Dataset(
            k=len(list_columns),
            q=len(covariate_columns),
            units=units,
            list_labels=tuple(list_columns),
            covariate_labels=tuple(covariate_columns),
        )
        logger.info(f"📥 Loaded {dataset.n_c} units, k={dataset.k} lists, q={dataset.q} covariates from {path}")
        return dataset

    def save_dataset(self, dataset: Dataset, path: str) -> str:
        """Write a dataset in the same layout load_dataset reads"""
        filepath = self._resolve(path)
        frame = pd.DataFrame({'id': list(dataset.ids)})
        x = dataset.covariate_matrix
        for d, label in enumerate(dataset.covariate_labels):
            frame[label] = x[:, d]
        y = dataset.pattern_matrix
        for j, label in enumerate(dataset.list_labels):
            frame[label] = y[:, j]
        frame.to_csv(filepath, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"💾 Dataset saved: {filepath} ({dataset.n_c} units)")
        return filepath

    def emit_curves(self, report: EstimateReport, path: str, sort_by: int = 0) -> str:
        """
        One row per unit, sorted by a covariate: the smoothed pattern
        probabilities stacked cumulatively, then 1 + pi0 as the top curve.
        """
        if not report.has_tables:
            raise ValueError("curves need the smoothed tables of a freshly computed report")
        if report.covariate_labels and not 0 <= sort_by < len(report.covariate_labels):
            raise ValueError(f"sort covariate {sort_by} out of range")

        x = np.array([unit.x for unit in report.per_unit], dtype=float).reshape(report.n_c, -1)
        stacked = np.cumsum(np.array([unit.probs for unit in report.per_unit], dtype=float), axis=1)
        frame = pd.DataFrame({'id': [unit.id for unit in report.per_unit]})
        for d, label in enumerate(report.covariate_labels):
            frame[label] = x[:, d]
        for m, label in enumerate(pattern_labels(report.k)):
            frame[f"cum_{label}"] = stacked[:, m]
        frame['top'] = 1.0 + report.pi0
        frame['pi0'] = report.pi0
        if report.covariate_labels:
            frame = frame.sort_values(report.covariate_labels[sort_by], kind='stable')

        filepath = self._resolve(path)
        frame.to_csv(filepath, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"📈 Curves written: {filepath} ({len(frame)} rows)")
        return filepath

    def save_truth(self, truth: Dict[str, Any], path: str) -> str:
        """Ground-truth sidecar of a synthetic dataset"""
        filepath = self._resolve(path)
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(truth, f, indent=2)
        logger.info(f"💾 Truth sidecar saved: {filepath}")
        return filepath

    def save_synthetic(self, dataset: Dataset, truth: Dict[str, Any], csv_path: str) -> Tuple[str, str]:
        """Synthetic CSV plus a sidecar named <stem>.truth.json"""
        csv_file = self.save_dataset(dataset, csv_path)
        stem, _ = os.path.splitext(csv_file)
        truth_file = self.save_truth(truth, f"{stem}.truth.json")
        return csv_file, truth_file
