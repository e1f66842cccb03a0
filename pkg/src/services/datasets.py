"""
Data generation, CSV ingestion and CSV output.
"""
import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import EmptyData, ParseError
from src.models.gp import Dataset, Hyperparams, Standardization
from src.models.lab import CsvSource, GPPriorSource, ToySineSource
from src.services.kernels import kernel_matrix
from src.services.numerics import cholesky_factor, make_rng

logger = logging.getLogger(__name__)

PRIOR_JITTER = 1e-10


def sample_gp_prior(X: np.ndarray, theta: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """y = L·ε + σ·ε′ with L the Cholesky factor of the noiseless kernel."""
    K = kernel_matrix(X, theta, include_noise=False)
    L = cholesky_factor(K, jitter=PRIOR_JITTER)
    n = K.shape[0]
    return L @ rng.standard_normal(n) + math.sqrt(theta.noise_sq) * rng.standard_normal(n)


def gen_gp_dataset(n: int, d: int, theta: Hyperparams, rng: np.random.Generator,
                   low: float = 0.0, high: float = 1.0) -> Dataset:
    """Uniform random inputs on [low, high]^d with a GP-prior target."""
    X = rng.uniform(low, high, size=(n, d))
    return Dataset(X=X, y=sample_gp_prior(X, theta, rng))


def gen_toy_sine(n: int, noise_sd: float = 0.1, rng: Optional[np.random.Generator] = None) -> Dataset:
    """y = x·sin(5πx) + ε, ε ~ N(0, noise_sd²), x on a uniform grid over [0, 1]."""
    if n < 2:
        raise ValueError(f"toy data needs n ≥ 2, got {n}")
    rng = rng if rng is not None else make_rng(0)
    x = np.linspace(0.0, 1.0, n)
    y = x * np.sin(5.0 * np.pi * x)
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    return Dataset(X=x[:, None], y=y)


def fit_standardization(X: np.ndarray, y: np.ndarray) -> Standardization:
    x_scale = X.std(axis=0)
    y_scale = float(y.std())
    return Standardization(
        x_mean=X.mean(axis=0),
        x_scale=np.where(x_scale > 0, x_scale, 1.0),
        y_mean=float(y.mean()),
        y_scale=y_scale if y_scale > 0 else 1.0,
    )


def standardize(data: Dataset) -> Dataset:
    """Z-score inputs and target, recording the transform."""
    record = fit_standardization(data.X, data.y)
    return Dataset(X=record.standardize_x(data.X), y=record.standardize_y(data.y), standardization=record)


def _rejected_row(path, row_idx: int, col_idx: int, message: str) -> ParseError:
    logger.warning("%s: rejected row %d, column %d: %s", path, row_idx, col_idx, message)
    return ParseError(row_idx, col_idx, message)


def read_numeric_csv(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """Header and a float matrix; every cell must parse to a finite float.

    The first bad row is logged at WARNING and raised as ``ParseError``; no rows are skipped.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise EmptyData(f"{path} is empty") from None
        rows = []
        for row_idx, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise _rejected_row(path, row_idx, min(len(row), len(header)),
                                    f"row {row_idx} has {len(row)} cells, header has {len(header)}")
            values = []
            for col_idx, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise _rejected_row(path, row_idx, col_idx,
                                        f"row {row_idx}, column {col_idx}: cannot parse {cell!r}") from None
                if not math.isfinite(value):
                    raise _rejected_row(path, row_idx, col_idx,
                                        f"row {row_idx}, column {col_idx}: non-finite value {cell!r}")
                values.append(value)
            rows.append(values)
    if not rows:
        raise EmptyData(f"{path} has no data rows")
    return header, np.asarray(rows, dtype=np.float64)


def load_csv(path: Union[str, Path], target_column: str, standardize_data: bool = True) -> Dataset:
    """Split a numeric CSV into features and target, optionally z-scored."""
    header, table = read_numeric_csv(path)
    if target_column not in header:
        raise EmptyData(f"target column {target_column!r} not in header {header}")
    target = header.index(target_column)
    features = [i for i in range(len(header)) if i != target]
    if not features:
        raise EmptyData("CSV has no feature columns")
    data = Dataset(X=table[:, features], y=table[:, target])
    logger.info("loaded %s: N=%d d=%d", path, data.n, data.d)
    return standardize(data) if standardize_data else data


def load_source(source: Union[ToySineSource, GPPriorSource, CsvSource],
                standardize_data: Optional[bool] = None) -> Dataset:
    """Materialize a configured data source."""
    if isinstance(source, ToySineSource):
        return gen_toy_sine(source.n, source.noise_sd, make_rng(source.seed))
    if isinstance(source, GPPriorSource):
        return gen_gp_dataset(source.n, source.d, source.theta, make_rng(source.seed), source.low, source.high)
    flag = source.standardize if standardize_data is None else standardize_data
    return load_csv(source.path, source.target_column, flag)


def format_float(value: float) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(value))


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_dataset_csv(path: Union[str, Path], data: Dataset, target_name: str = "y") -> Path:
    header = [f"x{k}" for k in range(data.d)] + [target_name]
    rows = (list(x) + [y] for x, y in zip(data.X.tolist(), data.y.tolist()))
    return write_csv(path, header, rows)


def read_csv_rows(path: Union[str, Path]) -> Tuple[List[str], List[List[str]]]:
    """Header and raw string cells of any CSV this package writes."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path} is empty") from None
        return header, [row for row in reader if row]
