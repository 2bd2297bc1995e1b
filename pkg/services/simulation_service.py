"""
Simulation service for BayesBoost.

This module generates clustered data from the random-intercept and
random-slope designs, scores fits against the generating parameters and
runs replicated benchmark cells in parallel.
"""
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config.hyperparams import SimConfig
from models.dataset import Dataset
from models.evaluation import Metrics, SimTruth
from models.state import INTERCEPT, FitTrace
from services.boosting_service import boost_fit
from utils.distributions import RngStream
from utils.error_handling import ConfigError, PreconditionError, capture_failure
from utils.logging_config import configure_logging
from utils.timing import timed

logger = configure_logging()

INFORMATIVE_BETA = (1.0, 2.0, 4.0, 3.0, 5.0)
CLUSTER_CONSTANT = (1, 2)

SUMMARY_COLUMNS = [
    "tau", "p", "mse_beta", "mse_tau2_or_Q", "mse_sigma2", "mse_gamma",
    "fp_beta", "fn_gamma", "stopping_iter", "failures",
    "fn_beta", "fp_gamma", "n_replications",
]
METRIC_COLUMNS = [
    "mse_beta", "mse_gamma", "mse_sigma2", "mse_tau2", "mse_Q", "mse_tau2_or_Q",
    "fp_beta", "fn_beta", "fp_gamma", "fn_gamma", "stopping_iteration",
]
RUN_COLUMNS = ["tau", "p", "replication", "failed", "error"] + METRIC_COLUMNS


class BenchmarkResult(NamedTuple):
    """Aggregated rows (one per cell) and per-replication rows."""
    summary: pd.DataFrame
    runs: pd.DataFrame


def true_covariance(tau: float, corr: float, size: int) -> np.ndarray:
    """
    Equicorrelated covariance with variance τ² and covariance corr·τ².

    Raises:
        ConfigError: If the matrix is not positive definite
    """
    q = tau ** 2 * ((1.0 - corr) * np.eye(size) + corr * np.ones((size, size)))
    if np.linalg.eigvalsh(q).min() <= 0.0:
        raise ConfigError(f"corr={corr} gives a covariance that is not positive definite in {size} dimensions")
    return q


def _check_design(cfg: SimConfig, design: str) -> None:
    if cfg.design != design:
        raise ConfigError(f"Expected design '{design}', got '{cfg.design}'")
    if cfg.p < len(INFORMATIVE_BETA) - 1:
        raise ConfigError(f"The simulation designs need p >= 4, got {cfg.p}")


def _covariates(cfg: SimConfig, cluster_index: np.ndarray, rng: RngStream) -> np.ndarray:
    """Standard normal covariates; x1 and x2 are drawn once per cluster."""
    X = rng.generator.standard_normal((cluster_index.size, cfg.p))
    for k in CLUSTER_CONSTANT:
        X[:, k - 1] = rng.generator.standard_normal(cfg.m)[cluster_index]
    return X


def _true_beta(p: int) -> np.ndarray:
    beta = np.zeros(p + 1)
    beta[: len(INFORMATIVE_BETA)] = INFORMATIVE_BETA
    return beta


def _generate(
    cfg: SimConfig, rng: RngStream, effects: Tuple[int, ...], q_true: np.ndarray
) -> Tuple[Dataset, SimTruth]:
    cluster_index = np.repeat(np.arange(cfg.m), cfg.n_i)
    X = _covariates(cfg, cluster_index, rng)
    beta = _true_beta(cfg.p)

    chol = np.linalg.cholesky(q_true)
    gamma = rng.generator.standard_normal((cfg.m, len(effects))) @ chol.T
    eps = cfg.sigma * rng.generator.standard_normal(cluster_index.size)

    y = beta[0] + X @ beta[1:] + eps
    for col, effect in enumerate(effects):
        z = np.ones(cluster_index.size) if effect == INTERCEPT else X[:, effect - 1]
        y = y + gamma[cluster_index, col] * z

    d = Dataset(
        y=y,
        X=X,
        cluster_ids=cluster_index + 1,
        n_i=np.full(cfg.m, cfg.n_i),
        names=tuple(f"x{k}" for k in range(1, cfg.p + 1)),
    )
    truth = SimTruth(
        design=cfg.design,
        beta_true=beta,
        informative_fixed=tuple(range(1, len(INFORMATIVE_BETA))),
        informative_random=tuple(e for e in effects if e != INTERCEPT),
        effects=effects,
        Q_true=q_true,
        sigma2_true=cfg.sigma ** 2,
        gamma_true=gamma,
    )
    return d, truth


def gen_random_intercept(cfg: SimConfig, rng: RngStream) -> Tuple[Dataset, SimTruth]:
    """
    Random-intercept data: ``y = 1 + 2x1 + 4x2 + 3x3 + 5x4 + γ0 + ε``.

    Covariates are standard normal with x1 and x2 cluster-constant,
    ``γ0 ~ N(0, τ²)`` and ``ε ~ N(0, σ²)``.

    Raises:
        ConfigError: If the design is not random_intercept or p < 4
    """
    _check_design(cfg, "random_intercept")
    return _generate(cfg, rng, (INTERCEPT,), np.array([[cfg.tau ** 2]]))


def gen_random_slope(cfg: SimConfig, rng: RngStream) -> Tuple[Dataset, SimTruth]:
    """
    Random-slope data with random effects on the intercept, x3 and x4.

    ``(γ0, γ1, γ2) ~ N(0, Q)`` where Q has diagonal τ² and off-diagonal
    ``corr · τ²``.

    Raises:
        ConfigError: If the design is not random_slope, p < 4 or Q is not PD
    """
    _check_design(cfg, "random_slope")
    effects = (INTERCEPT,) + cfg.true_random_slopes
    return _generate(cfg, rng, effects, true_covariance(cfg.tau, cfg.corr, len(effects)))


def generate(cfg: SimConfig, rng: RngStream) -> Tuple[Dataset, SimTruth]:
    """Generate one dataset of the configured design."""
    if cfg.design == "random_slope":
        return gen_random_slope(cfg, rng)
    return gen_random_intercept(cfg, rng)


def _aligned(values: np.ndarray, effects: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Columns of ``values`` for the ``target`` effects, zeros for absent ones."""
    out = np.zeros((values.shape[0], len(target)))
    for col, effect in enumerate(target):
        if effect in effects:
            out[:, col] = values[:, list(effects).index(effect)]
    return out


def _rate(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def evaluate_estimates(
    beta_hat: np.ndarray,
    effects_hat: Sequence[int],
    gamma_hat: np.ndarray,
    Q_hat: np.ndarray,
    sigma2_hat: float,
    truth: SimTruth,
    stopping_iteration: int,
) -> Metrics:
    """
    Score estimates against the generating parameters.

    γ is compared over the union of true and estimated effects, so a missed
    effect contributes its true values and an extra one its estimates. Q is
    compared on the true effects, with zeros for effects the fit lacks.

    Args:
        beta_hat: Fixed effects, length p+1
        effects_hat: Estimated random effects
        gamma_hat: Random effects, m × |effects_hat|
        Q_hat: Covariance, |effects_hat| × |effects_hat|
        sigma2_hat: Error variance
        truth: Generating parameters
        stopping_iteration: Stopping iteration of the fit

    Returns:
        Metrics: All scores
    """
    effects_hat = list(effects_hat)
    union = list(truth.effects) + [e for e in effects_hat if e not in truth.effects]
    gamma_err = _aligned(truth.gamma_true, truth.effects, union) - _aligned(gamma_hat, effects_hat, union)

    idx = [effects_hat.index(e) if e in effects_hat else None for e in truth.effects]
    q_aligned = np.array(
        [[Q_hat[i, j] if i is not None and j is not None else 0.0 for j in idx] for i in idx]
    )
    slope_design = truth.design == "random_slope"

    selected = set(int(k) for k in np.flatnonzero(beta_hat[1:]) + 1)
    informative = set(truth.informative_fixed)
    selected_random = set(e for e in effects_hat if e != INTERCEPT)
    informative_random = set(truth.informative_random)

    return Metrics(
        mse_beta=float(np.sum((truth.beta_true - beta_hat) ** 2)),
        mse_gamma=float(np.sum(gamma_err ** 2)),
        mse_sigma2=float((truth.sigma2_true - sigma2_hat) ** 2),
        mse_tau2=None if slope_design else float((truth.Q_true[0, 0] - q_aligned[0, 0]) ** 2),
        mse_Q=float(np.linalg.norm(truth.Q_true - q_aligned, "fro")) if slope_design else None,
        fp_beta=_rate(len(selected - informative), truth.p - len(informative)),
        fn_beta=_rate(len(informative - selected), len(informative)),
        fp_gamma=_rate(len(selected_random - informative_random), truth.p - len(informative_random)),
        fn_gamma=_rate(len(informative_random - selected_random), len(informative_random)),
        stopping_iteration=int(stopping_iteration),
    )


def evaluate_fit(trace: FitTrace, truth: SimTruth) -> Metrics:
    """
    Score the state at a trace's stopping iteration.

    Raises:
        PreconditionError: If the fit did not complete
    """
    if trace.final_state is None or trace.stopping is None:
        raise PreconditionError("evaluate_fit needs a completed fit")
    state = trace.final_state
    return evaluate_estimates(
        beta_hat=state.beta,
        effects_hat=state.effects,
        gamma_hat=state.gamma_matrix(),
        Q_hat=state.Q_mode,
        sigma2_hat=state.sigma2_mode,
        truth=truth,
        stopping_iteration=trace.stopping.s,
    )


def _failure_row(e: BaseException) -> Dict[str, Any]:
    return {"failed": True, "error": f"{e.__class__.__name__}: {e}"}


@capture_failure(_failure_row)
def _evaluate_replication(cfg: SimConfig, replication: int) -> Dict[str, Any]:
    d, truth = generate(cfg, RngStream(cfg.seed, 2 * replication))
    trace = boost_fit(d, cfg.fit_hyperparams(), RngStream(cfg.seed, 2 * replication + 1))
    return {"failed": False, "error": "", **evaluate_fit(trace, truth).to_dict()}


@timed("replication")
def run_replication(cfg: SimConfig, replication: int) -> Dict[str, Any]:
    """
    Generate, fit and score one replication.

    Replication r draws its data from stream ``2r`` and its Gibbs samples
    from stream ``2r + 1`` of the configured seed. Failures come back as
    rows with ``failed=True`` and the error message.
    """
    row: Dict[str, Any] = {"tau": cfg.tau, "p": cfg.p, "replication": replication}
    row.update(_evaluate_replication(cfg, replication))
    return row


def aggregate_runs(runs: pd.DataFrame, cfg: SimConfig) -> Dict[str, Any]:
    """Mean metrics over the successful runs of one cell."""
    ok = runs.loc[~runs["failed"].astype(bool)]
    means = ok[METRIC_COLUMNS].astype(float).mean() if len(ok) else pd.Series(np.nan, index=METRIC_COLUMNS)
    return {
        "tau": cfg.tau,
        "p": cfg.p,
        "mse_beta": means["mse_beta"],
        "mse_tau2_or_Q": means["mse_tau2_or_Q"],
        "mse_sigma2": means["mse_sigma2"],
        "mse_gamma": means["mse_gamma"],
        "fp_beta": means["fp_beta"],
        "fn_gamma": means["fn_gamma"],
        "stopping_iter": means["stopping_iteration"],
        "failures": int(len(runs) - len(ok)),
        "fn_beta": means["fn_beta"],
        "fp_gamma": means["fp_gamma"],
        "n_replications": int(len(runs)),
    }


def run_benchmark(cfg: SimConfig, workers: int = 1) -> BenchmarkResult:
    """
    Run ``n_replications`` independent generate-fit-score replications.

    Args:
        cfg: Simulation cell
        workers: Parallel joblib workers; results do not depend on it

    Returns:
        BenchmarkResult: One summary row and one row per replication
    """
    logger.info(
        f"Benchmark cell design={cfg.design}, tau={cfg.tau}, p={cfg.p}, "
        f"re_mode={cfg.re_mode}: {cfg.n_replications} replications on {workers} workers"
    )
    rows: List[Dict[str, Any]] = Parallel(n_jobs=workers)(
        delayed(run_replication)(cfg, r) for r in range(cfg.n_replications)
    )
    runs = pd.DataFrame(rows).reindex(columns=RUN_COLUMNS)
    summary = pd.DataFrame([aggregate_runs(runs, cfg)], columns=SUMMARY_COLUMNS)

    failures = int(summary.loc[0, "failures"])
    if failures:
        logger.warning(f"{failures} of {cfg.n_replications} replications failed")
    logger.info(
        f"Cell tau={cfg.tau}, p={cfg.p}: mse_beta={summary.loc[0, 'mse_beta']:.4g}, "
        f"fp_beta={summary.loc[0, 'fp_beta']:.3g}, fn_gamma={summary.loc[0, 'fn_gamma']:.3g}"
    )
    return BenchmarkResult(summary=summary, runs=runs)


def run_grid(
    cfg: SimConfig,
    taus: Optional[Sequence[float]] = None,
    ps: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> BenchmarkResult:
    """
    Run one benchmark cell per (τ, p) pair.

    Args:
        cfg: Base cell configuration
        taus: τ values (defaults to ``cfg.tau``)
        ps: p values (defaults to ``cfg.p``)
        workers: Parallel joblib workers

    Returns:
        BenchmarkResult: One summary row per cell and all replication rows
    """
    results = [
        run_benchmark(SimConfig.model_validate({**cfg.model_dump(), "tau": tau, "p": p}), workers)
        for tau in (taus or [cfg.tau])
        for p in (ps or [cfg.p])
    ]
    return BenchmarkResult(
        summary=pd.concat([r.summary for r in results], ignore_index=True),
        runs=pd.concat([r.runs for r in results], ignore_index=True),
    )


class SimulationService:
    """
    Service for simulated datasets and benchmark grids of one base cell.

    Attributes:
        cfg: Base simulation cell
        workers: Parallel joblib workers for benchmarks
    """

    def __init__(self, cfg: SimConfig, workers: int = 1) -> None:
        self.cfg = cfg
        self.workers = workers
        logger.debug(f"Simulation service initialized for design {cfg.design} with {workers} workers")

    def simulate(self) -> Tuple[Dataset, SimTruth]:
        """One dataset from stream 0, the data of benchmark replication 0."""
        return generate(self.cfg, RngStream(self.cfg.seed, 0))

    def benchmark(
        self, taus: Optional[Sequence[float]] = None, ps: Optional[Sequence[int]] = None
    ) -> BenchmarkResult:
        """Replicated cells over the (τ, p) grid, defaulting to the base cell."""
        return run_grid(self.cfg, taus, ps, self.workers)
