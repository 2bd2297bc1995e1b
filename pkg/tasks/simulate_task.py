"""
Simulate task for BayesBoost.

This module implements the ``simulate`` command: draw one dataset from a
simulation design and write it with its generating parameters.
"""
from config.hyperparams import RunConfig
from services.artifact_service import ArtifactService
from services.simulation_service import SimulationService
from utils.logging_config import configure_logging

logger = configure_logging()


def cmd_simulate(config: RunConfig) -> int:
    """
    Run the ``simulate`` command.

    The data come from stream 0 of the seed, the same stream the first
    benchmark replication draws its data from.

    Args:
        config: Validated run configuration with a simulation config

    Returns:
        int: 0 on success
    """
    cfg = config.sim
    assert cfg is not None
    d, truth = SimulationService(cfg).simulate()

    artifacts = ArtifactService(config.out_dir, cfg.model_dump())
    artifacts.write_simulation(d, truth)
    logger.info(f"Simulated {cfg.design} data with n={d.n}, m={d.m}, p={d.p} into {artifacts.out_dir}")
    return 0
