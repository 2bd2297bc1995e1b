"""
Samplers for the full-conditional families and robust mode estimation.

The Gibbs sampler needs draws from a multivariate normal, an inverse gamma
and an inverse Wishart distribution. Point estimates from the draws are
half-sample modes.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla

from utils.error_handling import PreconditionError, StructureError
from utils.linalg import safe_cholesky


@dataclass
class RngStream:
    """
    Seeded random stream.

    Identical ``(seed, stream_id)`` pairs produce identical draw sequences.
    A stream is stateful and must not be shared between threads; give every
    replication its own ``stream_id``.

    Attributes:
        seed: Base seed
        stream_id: Independent sub-stream of the base seed
        generator: numpy Generator driving the draws
    """
    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise PreconditionError("seed and stream_id must be non-negative")
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, stream_id: int) -> "RngStream":
        """Another stream with the same seed and a different id."""
        return RngStream(self.seed, stream_id)


@dataclass(frozen=True)
class MvnParams:
    """Mean vector ``mu`` and covariance matrix ``sigma`` of a normal distribution."""
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (mu.size, mu.size):
            raise PreconditionError(f"sigma has shape {sigma.shape}, mu has length {mu.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise PreconditionError("MVN parameters must be finite")
        if np.any(np.diag(sigma) <= 0.0):
            raise PreconditionError("sigma must have a strictly positive diagonal")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class InvGammaParams:
    """Inverse gamma ``IG(shape, scale)``; both strictly positive."""
    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.shape > 0.0 and self.scale > 0.0):
            raise PreconditionError(
                f"Inverse gamma needs shape > 0 and scale > 0, got ({self.shape}, {self.scale})"
            )


@dataclass(frozen=True)
class InvWishartParams:
    """
    Inverse Wishart ``IW(dof, scale_matrix)``.

    Attributes:
        dof: Degrees of freedom, greater than d − 1
        scale_matrix: Positive definite d × d matrix
    """
    dof: float
    scale_matrix: np.ndarray

    def __post_init__(self) -> None:
        scale = np.atleast_2d(np.asarray(self.scale_matrix, dtype=float))
        if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
            raise PreconditionError(f"scale_matrix must be square, got shape {scale.shape}")
        d = scale.shape[0]
        if not self.dof > d - 1:
            raise PreconditionError(f"Inverse Wishart needs dof > {d - 1}, got {self.dof}")
        if not np.all(np.isfinite(scale)):
            raise PreconditionError("scale_matrix must be finite")
        try:
            sla.cholesky(scale, lower=True)
        except np.linalg.LinAlgError as e:
            raise PreconditionError("scale_matrix must be positive definite") from e
        object.__setattr__(self, "scale_matrix", scale)

    @property
    def dim(self) -> int:
        return int(self.scale_matrix.shape[0])


def sample_mvn(p: MvnParams, rng: RngStream) -> np.ndarray:
    """Draw ``mu + L z`` with ``L`` from ``safe_cholesky(sigma)``."""
    chol = safe_cholesky(p.sigma)
    z = rng.generator.standard_normal(p.mu.size)
    return p.mu + chol.factor @ z


def sample_mvn_precision(
    mean_rhs: np.ndarray, precision_factor: np.ndarray, rng: RngStream
) -> np.ndarray:
    """
    Draw from ``N(P⁻¹ b, P⁻¹)`` given the lower Cholesky factor ``L`` of ``P``.

    The mean solves ``L Lᵀ μ = b`` and the noise is ``L⁻ᵀ z``, so the
    covariance ``P⁻¹`` is never formed.

    Args:
        mean_rhs: The vector b
        precision_factor: Lower-triangular L with L Lᵀ = P
        rng: Random stream

    Returns:
        np.ndarray: One draw
    """
    mu = sla.cho_solve((precision_factor, True), mean_rhs)
    z = rng.generator.standard_normal(mu.size)
    return mu + sla.solve_triangular(precision_factor, z, lower=True, trans="T")


def sample_inverse_gamma(p: InvGammaParams, rng: RngStream) -> float:
    """Draw ``scale / Gamma(shape, 1)``."""
    return float(p.scale / rng.generator.gamma(p.shape, 1.0))


def sample_wishart_factor(dof: float, scale_inv: np.ndarray, rng: RngStream) -> np.ndarray:
    """
    Bartlett factor ``C = L A`` of a ``Wishart(dof, scale_inv)`` draw ``W = C Cᵀ``.

    ``L`` is the Cholesky factor of ``scale_inv``; ``A`` is lower triangular
    with ``sqrt(chi2(dof - i))`` on the diagonal and standard normals below.
    """
    d = scale_inv.shape[0]
    chol = sla.cholesky(scale_inv, lower=True)
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(rng.generator.chisquare(dof - np.arange(d)))
    rows, cols = np.tril_indices(d, -1)
    a[rows, cols] = rng.generator.standard_normal(rows.size)
    return chol @ a


def sample_inverse_wishart(p: InvWishartParams, rng: RngStream) -> np.ndarray:
    """
    Draw from ``IW(dof, scale)`` as the inverse of a ``Wishart(dof, scale⁻¹)`` draw.

    With the Bartlett factor ``C`` the draw is ``C⁻ᵀ C⁻¹``, which is
    symmetric positive definite by construction.
    """
    scale_inv = sla.cho_solve((sla.cholesky(p.scale_matrix, lower=True), True), np.eye(p.dim))
    scale_inv = (scale_inv + scale_inv.T) / 2.0
    c = sample_wishart_factor(p.dof, scale_inv, rng)
    c_inv = sla.solve_triangular(c, np.eye(p.dim), lower=True)
    draw = c_inv.T @ c_inv
    return (draw + draw.T) / 2.0


def _half_sample_mode(data: np.ndarray) -> float:
    """Half-sample mode of sorted data."""
    while data.size > 3:
        half = data.size // 2 + data.size % 2
        widths = data[half - 1:] - data[: data.size - half + 1]
        start = int(np.argmin(widths))
        data = data[start:start + half]

    if data.size == 1:
        return float(data[0])
    if data.size == 2:
        return float(data.mean())

    lower_gap = data[1] - data[0]
    upper_gap = data[2] - data[1]
    if lower_gap < upper_gap:
        return float(data[:2].mean())
    if upper_gap < lower_gap:
        return float(data[1:].mean())
    return float(data[1])


def posterior_mode_1d(samples: Sequence[float]) -> float:
    """
    Half-sample mode of a set of draws.

    The sorted sample is repeatedly shrunk to its densest half (the
    narrowest window holding half the points) until at most three points
    remain. Two points give their midpoint; three give the midpoint of the
    closer pair, or the middle point when both gaps are equal.

    Args:
        samples: One or more draws

    Returns:
        float: The mode estimate

    Raises:
        PreconditionError: If no samples are given
    """
    data = np.asarray(samples, dtype=float).ravel()
    if data.size == 0:
        raise PreconditionError("posterior_mode_1d needs at least one sample")
    return _half_sample_mode(np.sort(data))


def elementwise_mode(samples: Sequence[np.ndarray], symmetrize: Optional[bool] = None) -> np.ndarray:
    """
    Half-sample mode of every entry across a sequence of equally shaped draws.

    Args:
        samples: T ≥ 1 vectors or matrices of a common shape
        symmetrize: Return ``(M + Mᵀ)/2``; defaults to True for square matrices

    Returns:
        np.ndarray: Entry-wise modes in the common shape

    Raises:
        PreconditionError: If no samples are given
        StructureError: If the samples do not share one shape
    """
    if len(samples) == 0:
        raise PreconditionError("elementwise_mode needs at least one sample")
    shapes = {np.shape(s) for s in samples}
    if len(shapes) != 1:
        raise StructureError(f"Samples have mismatching shapes: {sorted(shapes)}")

    stacked = np.asarray(samples, dtype=float)
    shape = stacked.shape[1:]
    flat = stacked.reshape(stacked.shape[0], -1)
    modes = np.array([posterior_mode_1d(flat[:, j]) for j in range(flat.shape[1])]).reshape(shape)

    if symmetrize is None:
        symmetrize = len(shape) == 2 and shape[0] == shape[1]
    if symmetrize:
        modes = (modes + modes.T) / 2.0
    return modes
