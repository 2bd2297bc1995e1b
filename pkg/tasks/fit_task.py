"""
Fit task for BayesBoost.

This module implements the ``fit`` command: load a CSV, run BayesBoost and
write the model report, the iteration trace and the fitted values.
"""
from typing import Any, Dict, List

from config.hyperparams import Hyperparams, RunConfig
from models.dataset import Dataset
from services.artifact_service import ArtifactService
from services.boosting_service import boost_fit
from services.data_service import DataService
from utils.error_handling import ConfigError, FitAbortedError
from utils.logging_config import configure_logging

logger = configure_logging()


def resolve_fixed_effects(spec: str, d: Dataset) -> List[int]:
    """
    Resolve a comma-separated list of covariate names or 1-based indices.

    Args:
        spec: e.g. ``"x3,x4"`` or ``"3,4"``
        d: Dataset whose covariates are referenced

    Returns:
        List[int]: 1-based covariate indices

    Raises:
        ConfigError: If an entry names no covariate
    """
    indices = []
    for token in (t.strip() for t in spec.split(",")):
        if not token:
            continue
        if token in d.names:
            indices.append(d.names.index(token) + 1)
        elif token.isdigit() and 1 <= int(token) <= d.p:
            indices.append(int(token))
        else:
            raise ConfigError(f"'{token}' is neither a covariate name nor an index in 1..{d.p}")
    return indices


def fit_hyperparams(config: RunConfig, d: Dataset) -> Hyperparams:
    """Hyperparams of the run with a ``fixed:<spec>`` structure resolved against the data."""
    h = config.hyperparams
    if h.re_mode != "fixed":
        return h
    fixed = resolve_fixed_effects(config.fixed_spec or "", d)
    return Hyperparams.model_validate({**h.model_dump(), "fixed_effects": tuple(fixed)})


def provenance(config: RunConfig, h: Hyperparams) -> Dict[str, Any]:
    """Settings printed into the header of every CSV artifact."""
    return {
        "command": config.command,
        "input": config.input_path,
        "response": config.response,
        "cluster": config.cluster,
        "standardize": config.standardize,
        **h.model_dump(),
    }


def cmd_fit(config: RunConfig) -> int:
    """
    Run the ``fit`` command.

    Writes ``model.json``, ``trace.csv`` and ``fitted.csv`` into the output
    directory. When an iteration fails, the completed iterations are written
    to ``trace_partial.csv`` before the error propagates.

    Args:
        config: Validated run configuration

    Returns:
        int: 0 on success
    """
    d = DataService(config.response, config.cluster, config.standardize).load(config.input_path)
    h = fit_hyperparams(config, d)
    artifacts = ArtifactService(config.out_dir, provenance(config, h))

    try:
        trace = boost_fit(d, h)
    except FitAbortedError as e:
        artifacts.write_partial_trace(d, e.partial_trace)
        raise

    artifacts.write_fit(d, trace, h.model_dump())

    return 0
