"""
Boosting service for BayesBoost.

This module runs the BayesBoost loop for linear mixed models: componentwise
L2 boosting of the fixed effects, a Gibbs sampler for the random effects,
the audition of new random slopes and the cAIC-based stopping rule.
"""
from dataclasses import replace
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from config.hyperparams import Hyperparams
from models.dataset import Dataset
from models.state import (
    INTERCEPT,
    FitTrace,
    GibbsSummary,
    IterationRecord,
    ModelState,
    PotentialState,
)
from services.data_service import detect_cluster_constant
from services.selection_service import SelectionService, conditional_aic
from utils.distributions import (
    InvGammaParams,
    InvWishartParams,
    RngStream,
    elementwise_mode,
    posterior_mode_1d,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvn_precision,
)
from utils.error_handling import ConfigError, FitAbortedError, NumericError, PreconditionError
from utils.linalg import CorrectedDesign, nearest_positive_definite, residual_maker_correct, safe_cholesky
from utils.logging_config import configure_logging
from utils.timing import count, timed

logger = configure_logging()

# Relative tolerance for ties between base learners
TIE_TOL = 1e-12
ZERO_VARIANCE = 1e-12


class ComponentwiseFit(NamedTuple):
    """
    Result of fitting every covariate to the pseudo-residuals.

    Attributes:
        k_star: 1-based index of the best covariate
        beta_kstar: (intercept, slope) of the best base learner
        mse_fixed: MSE of every base learner, length p
    """
    k_star: int
    beta_kstar: Tuple[float, float]
    mse_fixed: np.ndarray

    @property
    def mse_kstar(self) -> float:
        return float(self.mse_fixed[self.k_star - 1])


class EffectDecision(NamedTuple):
    """
    Outcome of the random-effects selection step.

    Attributes:
        decision: "accepted", "rejected", "in_structure", "closed" or "fixed"
        mse_random: MSE with the auditioned random effect, None without audition
        effects: Random effects kept
        designs: Corrected design blocks kept
        lambda0: Prior scale kept
        summary: Gibbs summary restricted to the kept effects
    """
    decision: str
    mse_random: Optional[float]
    effects: Tuple[int, ...]
    designs: Tuple[CorrectedDesign, ...]
    lambda0: np.ndarray
    summary: GibbsSummary

    @property
    def accepted(self) -> bool:
        return self.decision == "accepted"


def negative_gradient(y: np.ndarray, state: ModelState) -> np.ndarray:
    """Pseudo-residuals ``u = y − ŷ`` of the L2 loss."""
    return np.asarray(y, dtype=float) - state.fitted


def fit_componentwise(u: np.ndarray, d: Dataset) -> ComponentwiseFit:
    """
    Fit a simple linear regression with intercept of ``u`` on every covariate.

    The best covariate minimizes the MSE; near-ties (relative 1e-12) go to
    the lowest index. A covariate without variance fits the intercept only.

    Args:
        u: Pseudo-residuals, length n
        d: Dataset

    Returns:
        ComponentwiseFit: Best covariate, its coefficients and all MSEs

    Raises:
        PreconditionError: If u does not have length n
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (d.n,):
        raise PreconditionError(f"u has shape {u.shape}, expected ({d.n},)")

    x_mean = d.X.mean(axis=0)
    xc = d.X - x_mean
    ss = np.einsum("ij,ij->j", xc, xc)
    u_mean = u.mean()

    varying = ss > ZERO_VARIANCE * d.n
    slopes = np.zeros(d.p)
    slopes[varying] = (xc[:, varying].T @ (u - u_mean)) / ss[varying]
    intercepts = u_mean - slopes * x_mean

    resid = u[:, None] - intercepts[None, :] - d.X * slopes[None, :]
    mse = np.mean(resid ** 2, axis=0)

    best = mse.min()
    k = int(np.flatnonzero(mse <= best + TIE_TOL * max(best, 1.0))[0])
    return ComponentwiseFit(
        k_star=k + 1, beta_kstar=(float(intercepts[k]), float(slopes[k])), mse_fixed=mse
    )


def update_fixed(
    state: ModelState, k_star: int, beta_kstar: Tuple[float, float], nu: float
) -> ModelState:
    """
    Add the shrunken base learner to the fixed effects.

    Only ``beta[0]`` and ``beta[k_star]`` change.

    Raises:
        PreconditionError: If k_star is not a covariate index
    """
    if not 1 <= k_star < state.beta.size:
        raise PreconditionError(f"k_star must lie in 1..{state.beta.size - 1}, got {k_star}")
    beta = state.beta.copy()
    beta[0] += nu * beta_kstar[0]
    beta[k_star] += nu * beta_kstar[1]
    return replace(state, beta=beta)


def cluster_indicators(d: Dataset) -> np.ndarray:
    """n × m matrix with a one in the column of each row's cluster."""
    indicators = np.zeros((d.n, d.m))
    indicators[np.arange(d.n), d.cluster_index] = 1.0
    return indicators


class BayesBoost:
    """
    BayesBoost estimator for one dataset.

    The instance owns the random stream, so repeated fits with the same
    seed produce the same trace.

    Attributes:
        d: Dataset
        h: Hyperparams
        rng: Random stream of the Gibbs sampler
        selection: Service that picks the stopping iteration
        mask: Cluster-constant covariates
        candidates: Covariates that may become random slopes
    """

    def __init__(self, d: Dataset, h: Hyperparams, rng: Optional[RngStream] = None) -> None:
        """
        Initialize the estimator.

        Raises:
            ConfigError: If a configured covariate index exceeds p
        """
        self.d = d
        self.h = h
        self.rng = rng or RngStream(h.seed)
        self.selection = SelectionService(h)
        self.mask = detect_cluster_constant(d)
        self._indicators = cluster_indicators(d)

        for name, indices in (("fixed_effects", h.fixed_effects), ("re_candidates", h.re_candidates or ())):
            too_large = [k for k in indices if k > d.p]
            if too_large:
                raise ConfigError(f"{name} {too_large} exceed the number of covariates {d.p}")

        if h.re_candidates is not None:
            self.candidates = frozenset(h.re_candidates)
        else:
            self.candidates = frozenset(
                k for k in range(1, d.p + 1) if not self.mask.is_constant[k - 1]
            )

    def correction_basis(self, effect: int) -> np.ndarray:
        """
        Basis the design block of ``effect`` is made orthogonal to.

        With the appendix correction the random intercept is corrected
        against the cluster-constant covariates and a random slope against
        its own covariate. The full correction uses ``[1, X]`` for every block.
        """
        X = self.d.X
        if self.h.correction == "full":
            return np.column_stack([np.ones(self.d.n), X])
        if effect == INTERCEPT:
            return X[:, self.mask.is_constant]
        return X[:, effect - 1:effect]

    def build_design(self, effect: int) -> CorrectedDesign:
        """Raw n × m design block of ``effect`` and its correction."""
        z_tilde = self._indicators
        if effect != INTERCEPT:
            z_tilde = self._indicators * self.d.X[:, effect - 1][:, None]
        return residual_maker_correct(self.correction_basis(effect), z_tilde)

    def init_state(self) -> ModelState:
        """
        Initial state before the first boosting iteration.

        β = (ȳ, 0, …, 0); σ² = 1; Q and Λ0 are 1 (identity of the declared
        structure in fixed mode); fitted values are the cluster means.
        """
        d, h = self.d, self.h
        beta = np.zeros(d.p + 1)
        beta[0] = d.y.mean()

        effects: Tuple[int, ...] = (INTERCEPT,)
        if h.re_mode == "fixed":
            effects = (INTERCEPT,) + tuple(h.fixed_effects)
        size = len(effects)

        cluster_means = np.bincount(d.cluster_index, weights=d.y, minlength=d.m) / d.n_i
        state = ModelState(
            beta=beta,
            effects=effects,
            designs=tuple(self.build_design(e) for e in effects),
            Q_mode=np.eye(size),
            sigma2_mode=1.0,
            gamma_mode=np.zeros(d.m * size),
            lambda0=h.lambda0_init * np.eye(size),
            iteration=0,
            fitted=cluster_means[d.cluster_index],
        )
        logger.debug(f"Initialized with random effects {effects} and beta0={beta[0]:.4f}")
        return state

    def expansion_blocker(self, state: ModelState, k_star: int) -> Optional[str]:
        """Why ``k_star`` is not auditioned, or None when it is."""
        if self.h.re_mode == "fixed":
            return "fixed"
        if k_star in state.effects:
            return "in_structure"
        if k_star not in self.candidates or state.beta[k_star] == 0.0:
            return "closed"
        if self.h.max_random_slopes is not None and state.q >= self.h.max_random_slopes:
            return "closed"
        return None

    def expand_potential_structure(self, state: ModelState, k_star: int) -> PotentialState:
        """
        Structure the Gibbs sampler runs under in this iteration.

        A covariate that is not yet a random effect is auditioned: Q and Λ0
        are extended by a unit diagonal entry (Λ0 by ``lambda0_init``) and
        its corrected design block is appended. Otherwise the current
        structure is returned unchanged.
        """
        current = PotentialState(
            effects=state.effects,
            designs=state.designs,
            Q_init=state.Q_mode,
            lambda0=state.lambda0,
            sigma2_init=state.sigma2_mode,
        )
        if self.expansion_blocker(state, k_star) is not None:
            return current

        return PotentialState(
            effects=state.effects + (k_star,),
            designs=state.designs + (self.build_design(k_star),),
            Q_init=sla.block_diag(state.Q_mode, 1.0),
            lambda0=sla.block_diag(state.lambda0, self.h.lambda0_init),
            sigma2_init=state.sigma2_mode,
            new_effect=k_star,
        )

    @timed("gibbs_sweep")
    def gibbs_sweep(
        self, y: np.ndarray, beta: np.ndarray, pot: PotentialState, n_samples: Optional[int] = None
    ) -> GibbsSummary:
        """
        Draw T samples from the full conditionals of γ, σ² and Q.

        Each sweep samples ``γ | σ², Q ~ N(μ_γ, Σ_γ)`` on ``ỹ = y − Xβ``,
        then ``σ² | γ ~ IG(a + n/2, b + ½‖ỹ − Zγ‖²)``, then
        ``Q | γ ~ IW(v0 + m, Λ0 + ΓᵀΓ)`` with Γ the m × |E| matrix of
        cluster blocks. The chain starts from the previous modes and no
        draw is discarded.

        Args:
            y: Response
            beta: Fixed effects held constant during the sweep
            pot: Structure to sample under
            n_samples: Number of draws (defaults to ``mcmc_samples``)

        Returns:
            GibbsSummary: Draws and their modes; Q's mode is PD-repaired

        Raises:
            NumericError: If the precision of γ cannot be factorized after repair
        """
        d, h = self.d, self.h
        T = n_samples or h.mcmc_samples
        size = len(pot.effects)
        Z = pot.Z
        y_tilde = np.asarray(y, dtype=float) - beta[0] - d.X @ beta[1:]
        ztz = Z.T @ Z
        zty = Z.T @ y_tilde
        identity_m = np.eye(d.m)

        ig_shape = h.a + d.n / 2.0
        iw_dof = h.v0 + d.m

        gamma_samples = np.empty((T, d.m * size))
        sigma2_samples = np.empty(T)
        q_samples = np.empty((T, size, size))

        sigma2 = pot.sigma2_init
        q = pot.Q_init
        retries = 0
        for t in range(T):
            q_chol = safe_cholesky(q)
            q_inv = sla.cho_solve((q_chol.factor, True), np.eye(size))
            precision = ztz / sigma2 + np.kron(identity_m, q_inv)
            p_chol = safe_cholesky(precision)
            if p_chol.repaired:
                retries += 1
                count("precision_retry")
            gamma = sample_mvn_precision(zty / sigma2, p_chol.factor, self.rng)

            resid = y_tilde - Z @ gamma
            sigma2 = sample_inverse_gamma(InvGammaParams(ig_shape, h.b + 0.5 * resid @ resid), self.rng)

            blocks = gamma.reshape(d.m, size)
            q = sample_inverse_wishart(InvWishartParams(iw_dof, pot.lambda0 + blocks.T @ blocks), self.rng)

            gamma_samples[t] = gamma
            sigma2_samples[t] = sigma2
            q_samples[t] = q

        q_mode_raw = elementwise_mode(list(q_samples))
        q_mode = nearest_positive_definite(q_mode_raw)
        q_repaired = not np.array_equal(q_mode, q_mode_raw)
        if q_repaired:
            count("q_mode_repair")
            logger.warning(f"Posterior mode of Q for effects {pot.effects} was repaired to be positive definite")

        return GibbsSummary(
            effects=pot.effects,
            gamma_samples=gamma_samples,
            sigma2_samples=sigma2_samples,
            Q_samples=q_samples,
            gamma_mode=elementwise_mode(list(gamma_samples), symmetrize=False),
            sigma2_mode=posterior_mode_1d(sigma2_samples),
            Q_mode_raw=q_mode_raw,
            Q_mode=q_mode,
            q_repaired=q_repaired,
            precision_retries=retries,
        )

    def random_effect_decision(
        self,
        state: ModelState,
        fit: ComponentwiseFit,
        u: np.ndarray,
        pot: PotentialState,
        summary: GibbsSummary,
    ) -> EffectDecision:
        """
        Keep or drop the auditioned random slope.

        The slope is accepted iff the base learner's MSE is strictly larger
        than the MSE after also subtracting the auditioned block's random
        effects, ``(1/n)‖u − X_k β_k − Z_k γ_k‖²``. On rejection the previous
        structure is restored and the draws are subset to it; σ̂² is kept
        either way.

        Args:
            state: State of the previous iteration
            fit: Componentwise fit of this iteration
            u: Pseudo-residuals of this iteration
            pot: Structure sampled under
            summary: Gibbs summary under ``pot``

        Returns:
            EffectDecision: What was kept
        """
        if not pot.expanded:
            return EffectDecision(
                decision=self.expansion_blocker(state, fit.k_star) or "in_structure",
                mse_random=None,
                effects=state.effects,
                designs=state.designs,
                lambda0=state.lambda0,
                summary=summary,
            )

        k = fit.k_star
        col = pot.effects.index(k)
        gamma_k = summary.gamma_mode.reshape(self.d.m, len(pot.effects))[:, col]
        intercept, slope = fit.beta_kstar
        resid = u - intercept - slope * self.d.X[:, k - 1] - pot.designs[col].Z @ gamma_k
        mse_random = float(np.mean(resid ** 2))

        if fit.mse_kstar > mse_random:
            return EffectDecision(
                decision="accepted",
                mse_random=mse_random,
                effects=pot.effects,
                designs=pot.designs,
                lambda0=pot.lambda0,
                summary=summary,
            )

        count("random_effect_rejected")
        return EffectDecision(
            decision="rejected",
            mse_random=mse_random,
            effects=state.effects,
            designs=state.designs,
            lambda0=state.lambda0,
            summary=summary.subset(state.effects),
        )

    def step(self, state: ModelState) -> Tuple[ModelState, IterationRecord, GibbsSummary]:
        """
        Run one boosting iteration.

        Args:
            state: State after the previous iteration

        Returns:
            Tuple: (new state, iteration record, Gibbs summary of the kept structure)
        """
        d, h = self.d, self.h
        s = state.iteration + 1

        u = negative_gradient(d.y, state)
        fit = fit_componentwise(u, d)
        updated = update_fixed(state, fit.k_star, fit.beta_kstar, h.nu)

        pot = self.expand_potential_structure(updated, fit.k_star)
        summary = self.gibbs_sweep(d.y, updated.beta, pot)
        decision = self.random_effect_decision(updated, fit, u, pot, summary)
        kept = decision.summary

        new_state = ModelState(
            beta=updated.beta,
            effects=decision.effects,
            designs=decision.designs,
            Q_mode=kept.Q_mode,
            sigma2_mode=kept.sigma2_mode,
            gamma_mode=kept.gamma_mode,
            lambda0=decision.lambda0,
            iteration=s,
            fitted=np.zeros(d.n),
        )
        fitted = new_state.beta[0] + d.X @ new_state.beta[1:] + new_state.Z @ new_state.gamma_mode
        new_state = replace(new_state, fitted=fitted)

        caic = conditional_aic(d.y, d, new_state)

        if decision.accepted:
            logger.info(f"Iteration {s}: covariate {fit.k_star} accepted as random slope")
        logger.debug(
            f"Iteration {s}: k*={fit.k_star}, mse_fixed={fit.mse_kstar:.6g}, "
            f"mse_random={decision.mse_random}, decision={decision.decision}, cAIC={caic.caic:.4f}"
        )

        record = IterationRecord(
            iteration=s,
            k_star=fit.k_star,
            intercept=fit.beta_kstar[0],
            slope=fit.beta_kstar[1],
            beta=new_state.beta.copy(),
            effects=new_state.effects,
            decision=decision.decision,
            mse_fixed=fit.mse_kstar,
            mse_random=decision.mse_random,
            caic=caic.caic,
            effective_dof=caic.effective_dof,
            sigma2_mode=new_state.sigma2_mode,
            Q_mode=new_state.Q_mode.copy(),
            gamma_mode=new_state.gamma_mode.copy(),
            lambda0=new_state.lambda0.copy(),
            q_repaired=kept.q_repaired or caic.q_repaired,
        )
        return new_state, record, kept

    @timed("boost_fit")
    def fit(self) -> FitTrace:
        """
        Run ``max_iter`` boosting iterations and select the stopping iteration.

        Returns:
            FitTrace: Records, summaries, filtered cAIC, stopping result and
                the state at the stopping iteration

        Raises:
            ConfigError: If max_iter < ζ + α + 2
            FitAbortedError: If an iteration fails; carries the partial trace
        """
        h = self.h
        needed = h.zeta + h.patience + 2
        if h.max_iter < needed:
            raise ConfigError(f"max_iter must be at least zeta + patience + 2 = {needed}, got {h.max_iter}")

        logger.info(
            f"Fitting n={self.d.n}, m={self.d.m}, p={self.d.p} for {h.max_iter} iterations "
            f"(nu={h.nu}, T={h.mcmc_samples}, re_mode={h.re_mode})"
        )
        state = self.init_state()
        trace = FitTrace(initial_state=state)
        states: List[ModelState] = []

        for s in range(1, h.max_iter + 1):
            try:
                state, record, summary = self.step(state)
            except (NumericError, PreconditionError, np.linalg.LinAlgError) as e:
                logger.error(f"Iteration {s} aborted: {e}")
                raise FitAbortedError(f"Iteration {s} aborted: {e}", partial_trace=trace) from e
            states.append(state)
            trace.records.append(record)
            trace.summaries.append(summary)

        series, stopping = self.selection.select(trace.caic_raw)
        trace.caic_filtered = series.filtered
        trace.stopping = stopping
        trace.final_state = states[stopping.s - 1]

        final = trace.final_state
        logger.info(
            f"Stopped at iteration {stopping.s} ({stopping.method}); "
            f"{len(final.selected_fixed())} fixed effects, random effects {final.effects}"
        )
        return trace


def boost_fit(d: Dataset, h: Hyperparams, rng: Optional[RngStream] = None) -> FitTrace:
    """
    Fit a linear mixed model with BayesBoost.

    Args:
        d: Dataset
        h: Hyperparams
        rng: Random stream (defaults to ``RngStream(h.seed)``)

    Returns:
        FitTrace: The full trace with the stopping iteration
    """
    return BayesBoost(d, h, rng).fit()


def predict(trace: FitTrace, d: Dataset) -> np.ndarray:
    """
    Fitted values ``Xβ̂ + Zγ̂`` at the stopping iteration, in canonical row order.

    Raises:
        PreconditionError: If the trace has no stopping iteration
    """
    if trace.final_state is None:
        raise PreconditionError("Trace has no final state; the fit did not complete")
    state = trace.final_state
    return state.beta[0] + d.X @ state.beta[1:] + state.Z @ state.gamma_mode
