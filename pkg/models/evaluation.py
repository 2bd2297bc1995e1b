"""
Simulation truth and evaluation metric types.
"""
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class SimTruth:
    """
    Parameters a simulated dataset was generated from.

    Attributes:
        design: "random_intercept" or "random_slope"
        beta_true: Fixed effects, length p+1
        informative_fixed: 1-based covariates with a nonzero coefficient
        informative_random: 1-based covariates with a random slope
        effects: Random effects of the generating model, intercept (0) first
        Q_true: Random-effects covariance, |E| × |E|
        sigma2_true: Error variance
        gamma_true: Random effects, m × |E|
    """
    design: str
    beta_true: np.ndarray
    informative_fixed: Tuple[int, ...]
    informative_random: Tuple[int, ...]
    effects: Tuple[int, ...]
    Q_true: np.ndarray
    sigma2_true: float
    gamma_true: np.ndarray

    @property
    def p(self) -> int:
        return int(self.beta_true.size - 1)

    @property
    def m(self) -> int:
        return int(self.gamma_true.shape[0])


@dataclass(frozen=True)
class Metrics:
    """
    Scores of one fit against its generating parameters.

    Attributes:
        mse_beta: ‖β − β̂‖²
        mse_gamma: ‖γ − γ̂‖² summed over aligned coordinates
        mse_sigma2: (σ² − σ̂²)²
        mse_tau2: (τ² − τ̂²)² for the random-intercept design
        mse_Q: Frobenius distance ‖Q − Q̂‖_F for the random-slope design
        fp_beta: Share of noise covariates selected as fixed effects
        fn_beta: Share of informative covariates missed as fixed effects
        fp_gamma: Share of noise covariates selected as random slopes
        fn_gamma: Share of informative random slopes missed
        stopping_iteration: Stopping iteration of the fit
    """
    mse_beta: float
    mse_gamma: float
    mse_sigma2: float
    mse_tau2: Optional[float]
    mse_Q: Optional[float]
    fp_beta: float
    fn_beta: float
    fp_gamma: float
    fn_gamma: float
    stopping_iteration: int

    @property
    def mse_tau2_or_Q(self) -> float:
        return float(self.mse_tau2 if self.mse_tau2 is not None else self.mse_Q)

    def to_dict(self) -> Dict[str, Any]:
        row = asdict(self)
        row["mse_tau2_or_Q"] = self.mse_tau2_or_Q
        return row
