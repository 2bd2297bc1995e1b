"""
Fit state types: the model state of one boosting iteration, the tentative
(potential) random-effects structure, Gibbs summaries and the fit trace.

Random-effect vectors are ordered cluster-major: coordinate ``i·|E| + e``
holds effect ``e`` of cluster ``i``. Effects are labelled 0 for the random
intercept and k (1-based) for a random slope on covariate k.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models.selection import StoppingResult
from utils.linalg import CorrectedDesign

INTERCEPT = 0


def assemble_design(blocks: Tuple[np.ndarray, ...]) -> np.ndarray:
    """Interleave per-effect n × m blocks into the cluster-major n × (m·|E|) design."""
    n, m = blocks[0].shape
    return np.stack(blocks, axis=2).reshape(n, m * len(blocks))


@dataclass(frozen=True)
class ModelState:
    """
    Estimates after one boosting iteration.

    Attributes:
        beta: Fixed effects, length p+1, index 0 is the intercept
        effects: Selected random effects, intercept first
        designs: Corrected design block per effect (aligned with ``effects``)
        Q_mode: Random-effects covariance, |E| × |E|, symmetric PD
        sigma2_mode: Error variance
        gamma_mode: Random effects, length m·|E|, cluster-major
        lambda0: Inverse Wishart prior scale, |E| × |E|
        iteration: Boosting iteration s (0 after initialization)
        fitted: Fitted values η̂ = Xβ̂ + Zγ̂ (cluster means at s = 0)
    """
    beta: np.ndarray
    effects: Tuple[int, ...]
    designs: Tuple[CorrectedDesign, ...]
    Q_mode: np.ndarray
    sigma2_mode: float
    gamma_mode: np.ndarray
    lambda0: np.ndarray
    iteration: int
    fitted: np.ndarray

    @property
    def q(self) -> int:
        """Number of random slopes."""
        return len(self.effects) - 1

    @property
    def Z(self) -> np.ndarray:
        return assemble_design(tuple(d.Z for d in self.designs))

    @property
    def Z_tilde(self) -> np.ndarray:
        return assemble_design(tuple(d.Z_tilde for d in self.designs))

    @property
    def random_slopes(self) -> Tuple[int, ...]:
        return tuple(e for e in self.effects if e != INTERCEPT)

    def gamma_matrix(self) -> np.ndarray:
        """Random effects as an m × |E| matrix (one row per cluster)."""
        return self.gamma_mode.reshape(-1, len(self.effects))

    def selected_fixed(self) -> Tuple[int, ...]:
        """1-based covariates with a nonzero coefficient."""
        return tuple(int(k) for k in np.flatnonzero(self.beta[1:]) + 1)


@dataclass(frozen=True)
class PotentialState:
    """
    Random-effects structure auditioned in one iteration.

    Equal to the current structure when nothing is auditioned. When a new
    effect is auditioned, Q and Λ0 gain a unit diagonal entry and its
    corrected design block is appended. γ is drawn first in every sweep, so
    only σ² and Q need warm starts.

    Attributes:
        effects: Effects of the potential structure
        designs: Corrected design blocks aligned with ``effects``
        Q_init: Warm start for Q
        lambda0: Prior scale Λ0
        sigma2_init: Warm start for σ²
        new_effect: The auditioned covariate, or None
    """
    effects: Tuple[int, ...]
    designs: Tuple[CorrectedDesign, ...]
    Q_init: np.ndarray
    lambda0: np.ndarray
    sigma2_init: float
    new_effect: Optional[int] = None

    @property
    def Z(self) -> np.ndarray:
        return assemble_design(tuple(d.Z for d in self.designs))

    @property
    def expanded(self) -> bool:
        return self.new_effect is not None


@dataclass(frozen=True)
class GibbsSummary:
    """
    Draws of one iteration's Gibbs sampler and their modes.

    Attributes:
        effects: Structure the draws were made under
        gamma_samples: T × (m·|E|) draws of γ
        sigma2_samples: T draws of σ²
        Q_samples: T × |E| × |E| draws of Q
        gamma_mode: Elementwise mode of γ
        sigma2_mode: Mode of σ²
        Q_mode_raw: Elementwise mode of Q before PD repair
        Q_mode: Q_mode_raw after PD repair
        q_repaired: Whether the repair changed Q_mode_raw
        precision_retries: Σ_γ factorizations that needed a PD repair
    """
    effects: Tuple[int, ...]
    gamma_samples: np.ndarray
    sigma2_samples: np.ndarray
    Q_samples: np.ndarray
    gamma_mode: np.ndarray
    sigma2_mode: float
    Q_mode_raw: np.ndarray
    Q_mode: np.ndarray
    q_repaired: bool = False
    precision_retries: int = 0

    @property
    def T(self) -> int:
        return int(self.sigma2_samples.size)

    def subset(self, keep: Tuple[int, ...]) -> "GibbsSummary":
        """
        Restrict the summary to the effects in ``keep``.

        Drops the γ coordinates and Q rows/columns of every other effect.
        """
        cols = [self.effects.index(e) for e in keep]
        d = len(self.effects)
        m = self.gamma_mode.size // d
        gamma_cols = np.array([i * d + c for i in range(m) for c in cols], dtype=int)
        grid = np.ix_(cols, cols)
        return GibbsSummary(
            effects=tuple(keep),
            gamma_samples=self.gamma_samples[:, gamma_cols],
            sigma2_samples=self.sigma2_samples,
            Q_samples=self.Q_samples[(slice(None),) + grid],
            gamma_mode=self.gamma_mode[gamma_cols],
            sigma2_mode=self.sigma2_mode,
            Q_mode_raw=self.Q_mode_raw[grid],
            Q_mode=self.Q_mode[grid],
            q_repaired=self.q_repaired,
            precision_retries=self.precision_retries,
        )


@dataclass(frozen=True)
class IterationRecord:
    """
    Compact record of one boosting iteration.

    Attributes:
        iteration: s, 1-based
        k_star: Covariate chosen by the base-learner comparison
        intercept: Intercept of the winning base learner
        slope: Slope of the winning base learner
        beta: β̂ after the update
        effects: Random effects after the iteration
        decision: "accepted", "rejected", "in_structure", "closed" or "fixed"
        mse_fixed: MSE of the winning base learner
        mse_random: MSE with the auditioned random effect (None without audition)
        caic: Raw cAIC
        effective_dof: ρ in the cAIC penalty
        sigma2_mode: σ̂²
        Q_mode: Q̂ (PD)
        gamma_mode: γ̂ modes, cluster-major
        lambda0: Λ0
        q_repaired: Whether Q̂ or the cAIC covariance needed a PD repair
    """
    iteration: int
    k_star: int
    intercept: float
    slope: float
    beta: np.ndarray
    effects: Tuple[int, ...]
    decision: str
    mse_fixed: float
    mse_random: Optional[float]
    caic: float
    effective_dof: float
    sigma2_mode: float
    Q_mode: np.ndarray
    gamma_mode: np.ndarray
    lambda0: np.ndarray
    q_repaired: bool = False


@dataclass
class FitTrace:
    """
    Everything a fit produced.

    Attributes:
        records: One record per completed iteration
        summaries: Gibbs summary per completed iteration (final structure)
        caic_filtered: Hampel-filtered cAIC series (set after the loop)
        stopping: Stopping result (set after the loop)
        final_state: Model state at the stopping iteration
        initial_state: State after initialization
    """
    records: List[IterationRecord] = field(default_factory=list)
    summaries: List[GibbsSummary] = field(default_factory=list)
    caic_filtered: Optional[np.ndarray] = None
    stopping: Optional[StoppingResult] = None
    final_state: Optional[ModelState] = None
    initial_state: Optional[ModelState] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def caic_raw(self) -> np.ndarray:
        return np.array([r.caic for r in self.records], dtype=float)

    @property
    def beta_path(self) -> np.ndarray:
        """(iterations × (p+1)) matrix of β̂ after every iteration."""
        return np.array([r.beta for r in self.records], dtype=float)

    @property
    def final_summary(self) -> Optional[GibbsSummary]:
        if self.stopping is None:
            return None
        return self.summaries[self.stopping.s - 1]
