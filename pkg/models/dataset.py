"""
Clustered dataset types.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


def _readonly(a: np.ndarray, dtype: type) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """
    Clustered observations in canonical (cluster-contiguous) row order.

    The constructor stores what it is given so that ``validate`` can report
    on malformed data; ``load_dataset`` only returns datasets that pass it.
    Arrays are copied and made read-only.

    Attributes:
        y: Response, length n
        X: Covariates, n × p, no intercept column
        cluster_ids: Cluster of every row, in 1..m
        n_i: Rows per cluster, length m
        names: Covariate labels
        original_order: ``original_order[r]`` is the input row of canonical row r
        response_name: Response column label
        cluster_name: Cluster column label
        cluster_labels: Input label of cluster 1..m
    """
    y: np.ndarray
    X: np.ndarray
    cluster_ids: np.ndarray
    n_i: np.ndarray
    names: Tuple[str, ...]
    original_order: np.ndarray = field(default=None)  # type: ignore[assignment]
    response_name: str = "y"
    cluster_name: str = "cluster"
    cluster_labels: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.X, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "y", _readonly(self.y, float))
        object.__setattr__(self, "X", _readonly(x, float))
        object.__setattr__(self, "cluster_ids", _readonly(self.cluster_ids, int))
        object.__setattr__(self, "n_i", _readonly(self.n_i, int))
        object.__setattr__(self, "names", tuple(self.names))
        order = np.arange(self.y.size) if self.original_order is None else self.original_order
        object.__setattr__(self, "original_order", _readonly(order, int))
        if not self.cluster_labels:
            object.__setattr__(self, "cluster_labels", tuple(range(1, self.n_i.size + 1)))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def m(self) -> int:
        return int(self.n_i.size)

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def cluster_index(self) -> np.ndarray:
        """0-based cluster of every row."""
        return self.cluster_ids - 1

    def to_input_order(self, values: np.ndarray) -> np.ndarray:
        """
        Map a canonical-order vector back to the input row order.

        Args:
            values: Length-n vector in canonical order

        Returns:
            np.ndarray: The same values in the order the rows were read
        """
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.original_order] = values
        return out

    def with_covariates(self, X: np.ndarray) -> "Dataset":
        """Copy of the dataset with a replaced covariate matrix."""
        return Dataset(
            y=self.y,
            X=X,
            cluster_ids=self.cluster_ids,
            n_i=self.n_i,
            names=self.names,
            original_order=self.original_order,
            response_name=self.response_name,
            cluster_name=self.cluster_name,
            cluster_labels=self.cluster_labels,
        )


@dataclass(frozen=True)
class ClusterConstantMask:
    """
    Which covariates are constant within every cluster.

    Attributes:
        is_constant: Boolean per covariate
    """
    is_constant: np.ndarray

    @property
    def indices(self) -> List[int]:
        """1-based indices of the cluster-constant covariates."""
        return [int(k) + 1 for k in np.flatnonzero(self.is_constant)]


@dataclass
class ValidationReport:
    """
    Result of validating a Dataset.

    Attributes:
        errors: Violated invariants
        warnings: Suspicious but accepted properties
    """
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors
