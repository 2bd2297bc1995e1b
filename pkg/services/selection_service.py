"""
Model selection service for BayesBoost.

This module computes the conditional AIC of a fitted iteration, cleans the
cAIC series with a Hampel filter and picks the stopping iteration, either
with the patience rule or as the least filtered cAIC.
"""
from typing import NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg as sla

from config.hyperparams import Hyperparams
from models.dataset import Dataset
from models.selection import CaicSeries, StoppingResult
from models.state import ModelState
from utils.error_handling import NumericError, PreconditionError
from utils.linalg import safe_cholesky
from utils.logging_config import configure_logging
from utils.timing import count

logger = configure_logging()

# MAD to Gaussian standard deviation
MAD_SCALE = 1.4826


class CaicResult(NamedTuple):
    """cAIC of one iteration with its parts."""
    caic: float
    log_likelihood: float
    effective_dof: float
    q_repaired: bool


def caic_value(rss: float, n: int, sigma2: float, rho: float) -> Tuple[float, float]:
    """
    cAIC from the residual sum of squares and the effective degrees of freedom.

    Args:
        rss: Residual sum of squares at the conditional mean
        n: Number of observations
        sigma2: Error variance
        rho: Effective degrees of freedom of the mean

    Returns:
        Tuple: (cAIC, conditional log-likelihood)
    """
    log_lik = -0.5 * n * np.log(2.0 * np.pi * sigma2) - rss / (2.0 * sigma2)
    return float(-2.0 * log_lik + 2.0 * (rho + 1.0)), float(log_lik)


def random_effects_hat_trace(
    Z: np.ndarray, Q: np.ndarray, sigma2: float
) -> Tuple[float, bool]:
    """
    Trace of the random-effects smoother ``Z Σ_γ Zᵀ / σ²``.

    ``Σ_γ = (ZᵀZ/σ² + blockdiag(Q⁻¹))⁻¹`` with one Q block per cluster.

    Returns:
        Tuple: (trace, whether Q or the precision needed a PD repair)
    """
    d = Q.shape[0]
    m = Z.shape[1] // d
    q_chol = safe_cholesky(Q)
    q_inv = sla.cho_solve((q_chol.factor, True), np.eye(d))
    ztz = Z.T @ Z
    precision = ztz / sigma2 + np.kron(np.eye(m), q_inv)
    p_chol = safe_cholesky(precision)
    trace = np.trace(sla.cho_solve((p_chol.factor, True), ztz)) / sigma2
    return float(trace), q_chol.repaired or p_chol.repaired


def conditional_aic(y: np.ndarray, d: Dataset, state: ModelState) -> CaicResult:
    """
    Conditional AIC of a model state.

    ``cAIC = −2ℓ + 2(ρ + 1)`` where ℓ is the Gaussian log-density of y at
    mean ``Xβ̂ + Zγ̂`` with variance ``σ̂² I``, and ``ρ = 1 + #{nonzero
    slopes} + tr(H_γ)``. The final ``+1`` counts σ̂².

    Args:
        y: Response
        d: Dataset supplying X
        state: Model state with β̂, γ̂, σ̂², Q̂ and the corrected Z

    Returns:
        CaicResult: cAIC, log-likelihood, ρ and the repair flag

    Raises:
        NumericError: If σ̂² is not positive or the fit is not finite
    """
    sigma2 = float(state.sigma2_mode)
    if not sigma2 > 0.0:
        raise NumericError(f"sigma2 must be positive for the cAIC, got {sigma2}")

    Z = state.Z
    eta = state.beta[0] + d.X @ state.beta[1:] + Z @ state.gamma_mode
    resid = np.asarray(y) - eta
    if not np.all(np.isfinite(resid)):
        raise NumericError("Non-finite residuals in the cAIC")

    trace, repaired = random_effects_hat_trace(Z, state.Q_mode, sigma2)
    if repaired:
        count("caic_pd_repair")
    rho = 1.0 + np.count_nonzero(state.beta[1:]) + trace
    caic, log_lik = caic_value(float(resid @ resid), resid.size, sigma2, rho)
    return CaicResult(caic=caic, log_likelihood=log_lik, effective_dof=float(rho), q_repaired=repaired)


def _mad(window: np.ndarray) -> float:
    return float(np.median(np.abs(window - np.median(window))))


def hampel_filter(series: Sequence[float], window: int, k_sigma: float) -> np.ndarray:
    """
    Replace outliers with the local median.

    For every index the window ``[i−w, i+w]`` is clipped to the series. A
    value is replaced by the window median when it deviates from it by more
    than ``k_sigma · 1.4826 · MAD``; with a zero MAD any deviation counts.

    Args:
        series: Values to clean, length ≥ 1
        window: Half-width w ≥ 1
        k_sigma: Threshold in scaled MADs

    Returns:
        np.ndarray: Filtered series of the same length

    Raises:
        PreconditionError: If the series is empty or w < 1
    """
    values = pd.Series(np.asarray(series, dtype=float))
    if values.empty:
        raise PreconditionError("hampel_filter needs a non-empty series")
    if window < 1:
        raise PreconditionError("Hampel window half-width must be at least 1")

    rolling = values.rolling(2 * window + 1, center=True, min_periods=1)
    median = rolling.median()
    scale = MAD_SCALE * rolling.apply(_mad, raw=True)
    deviation = (values - median).abs()

    outlier = (deviation > k_sigma * scale) | ((scale == 0.0) & (deviation > 0.0))
    return values.where(~outlier, median).to_numpy()


def patience_stop(filtered: Sequence[float], alpha: int, zeta: int) -> StoppingResult:
    """
    Stopping iteration by the patience rule.

    Indices are 1-based. Starting after iteration ``α + ζ`` the running
    minimum ``v`` is tracked; each strict improvement resets the counter and
    moves the candidate ``s``, each non-improvement increments it, and the
    loop ends after ``α`` consecutive non-improvements. When the series ends
    first, the best index seen is returned with ``stabilized=False``.

    Args:
        filtered: Hampel-filtered cAIC series
        alpha: Patience α ≥ 1
        zeta: Leading iterations ζ ≥ 0 left out of the comparison

    Returns:
        StoppingResult: The stopping iteration

    Raises:
        PreconditionError: If the series is shorter than ζ + α + 2
    """
    series = np.asarray(filtered, dtype=float)
    if alpha < 1 or zeta < 0:
        raise PreconditionError(f"Need alpha >= 1 and zeta >= 0, got alpha={alpha}, zeta={zeta}")
    if series.size < zeta + alpha + 2:
        raise PreconditionError(
            f"cAIC series of length {series.size} is shorter than zeta + alpha + 2 = {zeta + alpha + 2}"
        )

    j = 0
    i = alpha + zeta
    v = np.inf
    s = i
    stabilized = True
    while j < alpha:
        i += 1
        if i > series.size:
            stabilized = False
            break
        if series[i - 1] < v:
            j = 0
            s = i
            v = series[i - 1]
        else:
            j += 1

    if not stabilized:
        logger.warning(f"No stabilized cAIC region found; using best iteration {s}")
    return StoppingResult(
        s=s, caic_at_s=float(series[s - 1]), alpha=alpha, zeta=zeta,
        method="patience", stabilized=stabilized,
    )


def minimum_stop(filtered: Sequence[float], zeta: int) -> StoppingResult:
    """
    Stopping iteration with the least filtered cAIC among indices after ζ.

    Ties go to the earliest iteration.

    Args:
        filtered: Hampel-filtered cAIC series
        zeta: Leading iterations left out

    Returns:
        StoppingResult: The stopping iteration

    Raises:
        PreconditionError: If no index after ζ exists
        NumericError: If every candidate value is NaN
    """
    series = np.asarray(filtered, dtype=float)
    if zeta < 0 or series.size <= zeta:
        raise PreconditionError(f"cAIC series of length {series.size} has no index after zeta={zeta}")
    tail = series[zeta:]
    if np.all(np.isnan(tail)):
        raise NumericError("cAIC series has no finite value after zeta")
    s = zeta + int(np.nanargmin(tail)) + 1
    return StoppingResult(s=s, caic_at_s=float(series[s - 1]), alpha=0, zeta=zeta, method="min")


def select_stopping(raw: Sequence[float], h: Hyperparams) -> Tuple[CaicSeries, StoppingResult]:
    """
    Filter a raw cAIC series and apply the configured stopping rule.

    Args:
        raw: cAIC per iteration
        h: Hyperparams with Hampel settings, α, ζ and the rule

    Returns:
        Tuple: (CaicSeries, StoppingResult)
    """
    raw = np.asarray(raw, dtype=float)
    filtered = hampel_filter(raw, h.hampel_window, h.hampel_k)
    series = CaicSeries(raw=raw, filtered=filtered, window=h.hampel_window, k_sigma=h.hampel_k)
    if h.stopping == "min":
        return series, minimum_stop(filtered, h.zeta)
    return series, patience_stop(filtered, h.patience, h.zeta)


class SelectionService:
    """
    Service that turns a raw cAIC series into a stopping iteration.

    Attributes:
        h: Hyperparams with the Hampel settings, α, ζ and the stopping rule
    """

    def __init__(self, h: Hyperparams) -> None:
        self.h = h

    def select(self, raw: Sequence[float]) -> Tuple[CaicSeries, StoppingResult]:
        """Filtered series and stopping iteration under the configured rule."""
        series, stopping = select_stopping(raw, self.h)
        logger.debug(
            f"{stopping.method} rule stopped at {stopping.s} of {len(series.raw)} "
            f"(alpha={stopping.alpha}, zeta={stopping.zeta})"
        )
        return series, stopping
