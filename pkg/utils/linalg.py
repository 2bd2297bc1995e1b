"""
Linear algebra helpers for BayesBoost.

This module provides the residual-maker correction of the random-effects
design, the nearest positive-definite repair and a Cholesky factorization
that falls back to that repair.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from utils.error_handling import NumericError, PreconditionError
from utils.logging_config import configure_logging
from utils.timing import count

logger = configure_logging()

# Relative eigenvalue floor used when no explicit eps is given
PD_FLOOR = 1e-8


@dataclass(frozen=True)
class CorrectedDesign:
    """
    Random-effects design before and after the residual-maker correction.

    Attributes:
        Z: Corrected design, dense in general
        Z_tilde: Raw design (block-sparse by cluster)
        projector_basis: Covariate submatrix the columns of Z are orthogonal to
    """
    Z: np.ndarray
    Z_tilde: np.ndarray
    projector_basis: np.ndarray


def _as_matrix(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise PreconditionError(f"{name} must be a matrix, got {a.ndim} dimensions")
    return a


def _check_finite(m: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} has non-finite entries")


def numerical_rank(basis: np.ndarray) -> int:
    """
    Numerical column rank from a column-pivoted QR factorization.

    Args:
        basis: n × r matrix

    Returns:
        int: Number of diagonal entries of R above the relative tolerance
    """
    if basis.shape[1] == 0:
        return 0
    _, r, _ = sla.qr(basis, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    tol = max(basis.shape) * np.finfo(float).eps * diag[0]
    return int(np.sum(diag > tol))


def residual_maker_correct(basis: np.ndarray, z_tilde: np.ndarray) -> CorrectedDesign:
    """
    Project the raw random-effects design onto the orthogonal complement of ``basis``.

    Computes ``Z = (I - B (BᵀB)⁻¹ Bᵀ) Z̃``. An empty basis returns ``Z̃``
    unchanged. A rank-deficient basis falls back to the pseudoinverse
    projection and logs a warning.

    Args:
        basis: n × r correction basis (r may be 0)
        z_tilde: n × M raw design, M ≥ 1

    Returns:
        CorrectedDesign: corrected and raw design plus the basis used

    Raises:
        PreconditionError: If the shapes do not agree or M is 0
        NumericError: If either input has non-finite entries
    """
    z_tilde = _as_matrix(z_tilde, "z_tilde")
    n = z_tilde.shape[0]
    basis = _as_matrix(basis, "basis") if np.size(basis) else np.zeros((n, 0))

    if z_tilde.shape[1] < 1:
        raise PreconditionError("z_tilde needs at least one column")
    if basis.shape[0] != n:
        raise PreconditionError(f"basis has {basis.shape[0]} rows, z_tilde has {n}")
    _check_finite(z_tilde, "z_tilde")
    _check_finite(basis, "basis")

    if basis.shape[1] == 0:
        return CorrectedDesign(Z=z_tilde.copy(), Z_tilde=z_tilde, projector_basis=basis)

    if numerical_rank(basis) == basis.shape[1]:
        q, _ = np.linalg.qr(basis, mode="reduced")
        z = z_tilde - q @ (q.T @ z_tilde)
    else:
        logger.warning(
            f"Correction basis with {basis.shape[1]} columns is rank deficient; "
            "using pseudoinverse projection"
        )
        count("rank_deficient_basis")
        z = z_tilde - basis @ (np.linalg.pinv(basis) @ z_tilde)

    return CorrectedDesign(Z=z, Z_tilde=z_tilde, projector_basis=basis)


def max_orthogonality_error(basis: np.ndarray, z: np.ndarray) -> float:
    """Largest absolute entry of ``basisᵀ Z`` (0.0 for an empty basis)."""
    if np.size(basis) == 0:
        return 0.0
    z = _as_matrix(z, "z")
    basis = _as_matrix(basis, "basis")
    if basis.shape[0] != z.shape[0]:
        raise PreconditionError(f"basis has {basis.shape[0]} rows, z has {z.shape[0]}")
    return float(np.max(np.abs(basis.T @ z)))


def default_eps(eigenvalues: np.ndarray) -> float:
    """Eigenvalue floor relative to the largest eigenvalue (at least ``PD_FLOOR``)."""
    return PD_FLOOR * max(float(np.max(eigenvalues)), 1.0)


def nearest_positive_definite(m_in: np.ndarray, eps: Optional[float] = None) -> np.ndarray:
    """
    Nearest symmetric matrix with smallest eigenvalue at least ``eps``.

    The input is symmetrized as ``(M + Mᵀ)/2`` and its eigenvalues are
    floored at ``eps``. Inputs that already satisfy the floor come back
    unchanged (up to symmetrization).

    Args:
        m_in: Square matrix
        eps: Eigenvalue floor; defaults to 1e-8 · max(largest eigenvalue, 1)

    Returns:
        np.ndarray: Symmetric positive definite matrix (PSD when eps is 0)

    Raises:
        PreconditionError: If the matrix is not square
        NumericError: If the matrix has non-finite entries
    """
    m = np.atleast_2d(np.asarray(m_in, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError(f"Expected a square matrix, got shape {m.shape}")
    _check_finite(m, "matrix")

    sym = (m + m.T) / 2.0
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    floor = default_eps(eigenvalues) if eps is None else float(eps)
    if eps is not None and floor < 0.0:
        raise PreconditionError("eps must be non-negative")

    if eigenvalues[0] >= floor:
        return sym

    clipped = np.maximum(eigenvalues, floor)
    repaired = (eigenvectors * clipped) @ eigenvectors.T
    return (repaired + repaired.T) / 2.0


@dataclass(frozen=True)
class CholeskyResult:
    """
    Lower-triangular factor and whether the input had to be repaired first.

    Attributes:
        factor: L with L Lᵀ equal to the (possibly repaired) input
        repaired: True when the input was not positive definite
    """
    factor: np.ndarray
    repaired: bool


def safe_cholesky(m_in: np.ndarray, eps: Optional[float] = None) -> CholeskyResult:
    """
    Cholesky factor of a symmetric matrix, repairing it when it is not PD.

    Args:
        m_in: Symmetric matrix
        eps: Eigenvalue floor passed to ``nearest_positive_definite``

    Returns:
        CholeskyResult: the factor and the repair flag

    Raises:
        NumericError: If the input has non-finite entries or the repaired
            matrix still cannot be factorized
    """
    m = np.atleast_2d(np.asarray(m_in, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise PreconditionError(f"Expected a square matrix, got shape {m.shape}")
    _check_finite(m, "matrix")

    try:
        return CholeskyResult(factor=sla.cholesky(m, lower=True), repaired=False)
    except np.linalg.LinAlgError:
        pass

    count("pd_repair")
    logger.debug(f"Matrix of size {m.shape[0]} is not positive definite; repairing")
    repaired = nearest_positive_definite(m, eps)
    try:
        return CholeskyResult(factor=sla.cholesky(repaired, lower=True), repaired=True)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"Cholesky failed after positive definite repair: {e}") from e
