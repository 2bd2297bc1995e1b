"""
Bench task for BayesBoost.

This module implements the ``bench`` command: replicated simulation cells
over a grid of τ and p values.
"""
from config.hyperparams import RunConfig
from services.artifact_service import ArtifactService
from services.simulation_service import SimulationService
from utils.logging_config import configure_logging

logger = configure_logging()


def cmd_bench(config: RunConfig) -> int:
    """
    Run the ``bench`` command.

    Writes ``bench_summary.csv`` (one row per cell), ``bench_runs.csv``
    (one row per replication) and ``bench_config.json``.

    Args:
        config: Validated run configuration with a simulation config

    Returns:
        int: 0 on success
    """
    cfg = config.sim
    assert cfg is not None
    result = SimulationService(cfg, config.workers).benchmark(config.taus, config.ps)
    settings = {**cfg.model_dump(), "taus": config.taus or [cfg.tau], "ps": config.ps or [cfg.p]}
    ArtifactService(config.out_dir, settings).write_bench(result)
    return 0
