"""
Model selection result types.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CaicSeries:
    """
    cAIC values of a fit before and after Hampel filtering.

    Attributes:
        raw: cAIC per iteration
        filtered: Hampel-corrected values, same length as ``raw``
        window: Hampel half-width
        k_sigma: Hampel threshold in scaled MADs
    """
    raw: np.ndarray
    filtered: np.ndarray
    window: int
    k_sigma: float


@dataclass(frozen=True)
class StoppingResult:
    """
    Stopping iteration chosen from a cAIC series.

    Attributes:
        s: Stopping iteration, 1-based
        caic_at_s: Series value at ``s``
        alpha: Patience used
        zeta: Number of leading iterations skipped
        method: "patience" or "min"
        stabilized: False when the series ended before the patience ran out
    """
    s: int
    caic_at_s: float
    alpha: int
    zeta: int
    method: str = "patience"
    stabilized: bool = True
