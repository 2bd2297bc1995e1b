"""
Data service for BayesBoost.

This module reads clustered datasets from CSV, brings them into canonical
cluster-contiguous order, validates them and writes them back.
"""
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from models.dataset import ClusterConstantMask, Dataset, ValidationReport
from utils.error_handling import DataError, ParseError, SchemaError, StructureError
from utils.logging_config import configure_logging

logger = configure_logging()

CONSTANT_TOL = 1e-12

PathLike = Union[str, Path]


def _parse_column(values: pd.Series, name: str) -> np.ndarray:
    """
    Parse one CSV column of strings into floats.

    Raises:
        ParseError: Naming the first missing, non-numeric or infinite cell
    """
    stripped = values.str.strip()
    coerced = pd.to_numeric(stripped, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(coerced))
    if bad.size:
        row = int(bad[0]) + 1
        raise ParseError(
            f"Missing or non-numeric value {stripped.iloc[bad[0]]!r} in column '{name}' at row {row}",
            row=row,
            column=name,
        )
    # float() parsing keeps written values bit-exact
    return stripped.to_numpy(dtype=object).astype(float)


def load_dataset(path: PathLike, response_col: str, cluster_col: str) -> Dataset:
    """
    Load a clustered dataset from CSV.

    The header row is required. Besides the response and the cluster column
    every column is a numeric covariate. Rows are reordered so that each
    cluster is contiguous, clusters in order of first appearance; the input
    order is kept in ``Dataset.original_order``.

    Args:
        path: CSV file
        response_col: Name of the response column
        cluster_col: Name of the integer cluster column

    Returns:
        Dataset: The validated dataset in canonical order

    Raises:
        DataError: If the file does not exist or is empty
        SchemaError: If a named column is missing
        ParseError: If a cell is missing or not numeric (1-based data row)
        StructureError: If there are fewer than two clusters or another
            invariant fails
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Input file not found: {path}")

    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise DataError(f"Input file is empty: {path}") from e

    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)

    for col in (response_col, cluster_col):
        if col not in header:
            raise SchemaError(f"Column '{col}' not found in {path}; columns are {header}")
    if response_col == cluster_col:
        raise SchemaError("Response and cluster column must differ")

    response_idx = header.index(response_col)
    cluster_idx = header.index(cluster_col)
    covariate_idx = [j for j in range(len(header)) if j not in (response_idx, cluster_idx)]

    y = _parse_column(body.iloc[:, response_idx], response_col)
    cluster_values = _parse_column(body.iloc[:, cluster_idx], cluster_col)
    non_integer = np.flatnonzero(cluster_values != np.round(cluster_values))
    if non_integer.size:
        row = int(non_integer[0]) + 1
        raise ParseError(
            f"Cluster label {cluster_values[non_integer[0]]} at row {row} is not an integer",
            row=row,
            column=cluster_col,
        )
    X = np.column_stack(
        [_parse_column(body.iloc[:, j], header[j]) for j in covariate_idx]
    ) if covariate_idx else np.zeros((y.size, 0))
    names = tuple(header[j] for j in covariate_idx)

    labels = cluster_values.astype(np.int64)
    codes, uniques = pd.factorize(labels, sort=False)
    if uniques.size < 2:
        raise StructureError(f"Need at least 2 clusters, found {uniques.size}")

    order = np.argsort(codes, kind="stable")
    cluster_ids = codes[order] + 1
    d = Dataset(
        y=y[order],
        X=X[order],
        cluster_ids=cluster_ids,
        n_i=np.bincount(codes, minlength=uniques.size),
        names=names,
        original_order=order,
        response_name=response_col,
        cluster_name=cluster_col,
        cluster_labels=tuple(int(u) for u in uniques),
    )

    report = validate(d)
    for warning in report.warnings:
        logger.warning(warning)
    if not report.ok:
        raise StructureError("; ".join(report.errors))

    logger.info(f"Loaded {path}: n={d.n}, m={d.m}, p={d.p}")
    return d


def detect_cluster_constant(d: Dataset) -> ClusterConstantMask:
    """
    Find covariates with zero within-cluster variance in every cluster.

    Args:
        d: A valid dataset

    Returns:
        ClusterConstantMask: ``is_constant[k]`` per covariate
    """
    if d.p == 0:
        return ClusterConstantMask(is_constant=np.zeros(0, dtype=bool))
    within = pd.DataFrame(d.X).groupby(d.cluster_ids).var(ddof=0)
    return ClusterConstantMask(is_constant=(within.max(axis=0) <= CONSTANT_TOL).to_numpy())


def validate(d: Dataset) -> ValidationReport:
    """
    Check every Dataset invariant.

    Never raises; violations are listed in the report.

    Args:
        d: Dataset to check

    Returns:
        ValidationReport: Errors (invariant violations) and warnings
    """
    report = ValidationReport()
    errors: List[str] = report.errors
    n = d.y.size

    if d.X.shape[0] != n:
        errors.append(f"X has {d.X.shape[0]} rows, y has {n}")
    if d.cluster_ids.size != n:
        errors.append(f"cluster_ids has {d.cluster_ids.size} entries, y has {n}")
    if d.p < 1:
        errors.append("Need at least one covariate")
    if d.m < 2:
        errors.append(f"Need at least 2 clusters, found {d.m}")
    if len(d.names) != d.p:
        errors.append(f"{len(d.names)} names for {d.p} covariates")
    if not np.all(np.isfinite(d.y)) or not np.all(np.isfinite(d.X)):
        errors.append("Missing or non-finite values")

    empty = np.flatnonzero(d.n_i < 1) + 1
    if empty.size:
        errors.append(f"Clusters without rows: {empty.tolist()}")
    if int(d.n_i.sum()) != n:
        errors.append(f"n = {n} differs from the sum of cluster sizes {int(d.n_i.sum())}")

    ids = d.cluster_ids
    if ids.size and (ids.min() < 1 or ids.max() > d.m):
        errors.append(f"Cluster ids must lie in 1..{d.m}")
    elif ids.size == n and n:
        runs = 1 + int(np.count_nonzero(np.diff(ids)))
        if runs != np.unique(ids).size:
            errors.append("Rows of the same cluster are not contiguous")
        elif not np.array_equal(np.bincount(ids - 1, minlength=d.m), d.n_i):
            errors.append("Cluster sizes do not match the cluster ids")

    duplicates = sorted({name for name in d.names if d.names.count(name) > 1})
    if duplicates:
        report.warnings.append(f"Duplicate covariate names: {duplicates}")
    if d.X.shape[0] == n and n and np.all(np.isfinite(d.X)):
        constant = [d.names[k] if k < len(d.names) else str(k + 1)
                    for k in np.flatnonzero(d.X.var(axis=0) <= CONSTANT_TOL)]
        if constant:
            report.warnings.append(f"Constant covariates: {constant}")

    return report


def write_dataset(d: Dataset, path: PathLike) -> Path:
    """
    Write a dataset as CSV in canonical row order.

    Columns are response, cluster (input labels) and covariates. Floats are
    written with 17 significant digits so ``load_dataset`` reads back the
    same values.

    Args:
        d: Dataset to write
        path: Target file

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    frame = pd.DataFrame(np.asarray(d.X), columns=list(d.names))
    labels = np.asarray(d.cluster_labels, dtype=np.int64)[d.cluster_index]
    frame.insert(0, d.cluster_name, labels, allow_duplicates=True)
    frame.insert(0, d.response_name, np.asarray(d.y), allow_duplicates=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    logger.debug(f"Wrote dataset with {d.n} rows to {path}")
    return path


def standardize(d: Dataset) -> Dataset:
    """
    Centre and scale every non-constant covariate to unit sample standard deviation.

    Args:
        d: Dataset

    Returns:
        Dataset: Copy with standardized covariates; constant columns are untouched
    """
    X = np.array(d.X, dtype=float)
    sd = X.std(axis=0, ddof=1) if d.n > 1 else np.zeros(d.p)
    scalable = sd > np.sqrt(CONSTANT_TOL)
    X[:, scalable] = (X[:, scalable] - X[:, scalable].mean(axis=0)) / sd[scalable]
    logger.info(f"Standardized {int(scalable.sum())} of {d.p} covariates")
    return d.with_covariates(X)


class DataService:
    """
    Service for loading and writing clustered datasets.

    Attributes:
        response_col: Name of the response column
        cluster_col: Name of the cluster column
        scale_covariates: Whether loaded covariates are standardized
    """

    def __init__(self, response_col: str, cluster_col: str, scale_covariates: bool = False) -> None:
        self.response_col = response_col
        self.cluster_col = cluster_col
        self.scale_covariates = scale_covariates
        logger.debug(f"Data service initialized for response '{response_col}' by '{cluster_col}'")

    def load(self, path: PathLike) -> Dataset:
        """
        Load and validate a CSV, standardizing the covariates when configured.

        Args:
            path: CSV file with the response, cluster and covariate columns

        Returns:
            Dataset: Canonically ordered dataset
        """
        d = load_dataset(path, self.response_col, self.cluster_col)
        return standardize(d) if self.scale_covariates else d

    def write(self, d: Dataset, path: PathLike) -> Path:
        return write_dataset(d, path)
