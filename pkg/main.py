#!/usr/bin/env python3
"""
BayesBoost - Command-Line Entry Point

This module parses the ``fit``, ``simulate`` and ``bench`` subcommands,
validates them into a ``RunConfig`` and dispatches to the task modules.
"""
import argparse
import sys
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from config.hyperparams import RunConfig
from config.settings import get_settings
from tasks import cmd_bench, cmd_fit, cmd_simulate
from utils.error_handling import EXIT_CONFIG, BayesBoostError, exit_code_for
from utils.logging_config import configure_logging
from utils.timing import runtime_stats

# Initialize logger
logger = configure_logging()

# Get settings
settings = get_settings()

COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}

# argparse destination -> Hyperparams field
HYPERPARAM_FLAGS = {
    "nu": "nu",
    "mcmc_samples": "mcmc_samples",
    "max_iter": "max_iter",
    "patience": "patience",
    "zeta": "zeta",
    "hampel_window": "hampel_window",
    "hampel_k": "hampel_k",
    "correction": "correction",
    "stopping": "stopping",
    "max_random_slopes": "max_random_slopes",
}

SIM_FLAGS = {
    "design": "design",
    "m": "m",
    "n_i": "n_i",
    "sigma": "sigma",
    "corr": "corr",
    "replications": "n_replications",
}


def parse_re_mode(value: str) -> Tuple[str, Optional[str]]:
    """
    Split ``auto`` or ``fixed:<covariates>`` into the mode and the covariate list.

    Raises:
        argparse.ArgumentTypeError: For any other value
    """
    if value == "auto":
        return "auto", None
    if value.startswith("fixed:") and value[len("fixed:"):].strip():
        return "fixed", value[len("fixed:"):]
    raise argparse.ArgumentTypeError("expected 'auto' or 'fixed:<names or 1-based indices>'")


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("boosting")
    group.add_argument("--nu", type=float, help="step length in (0, 1] (default 0.3)")
    group.add_argument("--mcmc-samples", type=int, help="Gibbs draws per iteration (default 30)")
    group.add_argument("--max-iter", type=int, help="boosting iterations (default 150)")
    group.add_argument("--patience", type=int, help="non-improvements before stopping (default 3)")
    group.add_argument("--zeta", type=int, help="leading iterations ignored by the stopping rule (default 10)")
    group.add_argument("--hampel-window", type=int, help="Hampel half-width (default 7)")
    group.add_argument("--hampel-k", type=float, help="Hampel threshold in scaled MADs (default 2)")
    group.add_argument("--correction", choices=["appendix", "full"], help="random-effect design correction")
    group.add_argument("--stopping", choices=["patience", "min"], help="stopping rule on the filtered cAIC")
    group.add_argument("--max-random-slopes", type=int, help="cap on selected random slopes")
    group.add_argument("--seed", type=int, help="random seed (default BAYESBOOST_SEED)")
    group.add_argument("--out-dir", default=settings.out_dir, help="output directory")


def _add_sim_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("simulation")
    group.add_argument("--design", choices=["random_intercept", "random_slope"], help="data generating design")
    group.add_argument("--m", type=int, help="number of clusters (default 50)")
    group.add_argument("--n-i", type=int, help="observations per cluster (default 10)")
    group.add_argument("--p", type=int, nargs="+", help="number of covariates; several values form a bench grid")
    group.add_argument("--tau", type=float, nargs="+", help="random-effect sd; several values form a bench grid")
    group.add_argument("--sigma", type=float, help="error sd (default 0.4)")
    group.add_argument("--corr", type=float, help="random-effect correlation (random_slope only)")
    group.add_argument("--replications", type=int, help="replications per bench cell (default 100)")
    group.add_argument(
        "--sim-re-mode", choices=["auto", "fixed"], default="auto",
        help="fit with selection ('auto') or with the true random-slope structure ('fixed')",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(
        prog="bayesboost",
        description="Componentwise boosting for linear mixed models with Gibbs-sampled random effects",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a CSV dataset")
    fit.add_argument("--input", required=True, help="CSV with a header row")
    fit.add_argument("--response", default="y", help="response column (default 'y')")
    fit.add_argument("--cluster", default="cluster", help="integer cluster column (default 'cluster')")
    fit.add_argument("--re-mode", type=parse_re_mode, default=("auto", None), help="'auto' or 'fixed:<covariates>'")
    fit.add_argument("--standardize", action="store_true", help="standardize covariates before fitting")
    _add_fit_options(fit)

    simulate = sub.add_parser("simulate", help="write one simulated dataset and its truth")
    _add_sim_options(simulate)
    _add_fit_options(simulate)

    bench = sub.add_parser("bench", help="run replicated simulation cells")
    _add_sim_options(bench)
    _add_fit_options(bench)
    bench.add_argument("--workers", type=int, default=settings.workers, help="parallel replications")

    return parser


def _present(args: argparse.Namespace, flags: Dict[str, str]) -> Dict[str, Any]:
    return {
        field: getattr(args, dest)
        for dest, field in flags.items()
        if getattr(args, dest, None) is not None
    }


def build_config(args: argparse.Namespace) -> RunConfig:
    """
    Turn parsed arguments into a validated ``RunConfig``.

    Flags that were not given fall back to the model defaults; the seed
    falls back to ``BAYESBOOST_SEED``.

    Raises:
        ValidationError: If a value is out of range
    """
    seed = args.seed if args.seed is not None else settings.seed
    hyperparams = {**_present(args, HYPERPARAM_FLAGS), "seed": seed}
    data: Dict[str, Any] = {"command": args.command, "out_dir": args.out_dir}

    if args.command == "fit":
        re_mode, fixed_spec = args.re_mode
        hyperparams["re_mode"] = re_mode
        data.update(
            input_path=args.input,
            response=args.response,
            cluster=args.cluster,
            fixed_spec=fixed_spec,
            standardize=args.standardize,
        )
    else:
        sim = {**_present(args, SIM_FLAGS), "seed": seed, "re_mode": args.sim_re_mode}
        taus: List[float] = args.tau or []
        ps: List[int] = args.p or []
        if taus:
            sim["tau"] = taus[0]
        if ps:
            sim["p"] = ps[0]
        sim["hyperparams"] = hyperparams
        data["sim"] = sim
        if args.command == "bench":
            data.update(taus=taus, ps=ps, workers=args.workers)

    data["hyperparams"] = hyperparams
    return RunConfig.model_validate(data)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Command-line arguments (default ``sys.argv[1:]``)

    Returns:
        int: Exit code (0 ok, 2 configuration, 3 data, 4 numeric, 1 unexpected)
    """
    args = build_parser().parse_args(argv)

    try:
        config = build_config(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    try:
        code = COMMANDS[config.command](config)
    except (BayesBoostError, ValidationError) as e:
        logger.error(f"{config.command} failed: {e.__class__.__name__}: {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.exception(f"Unexpected error in {config.command}: {e}")
        return exit_code_for(e)
    finally:
        logger.debug(f"Runtime summary: {runtime_stats.get_summary()}")

    return code


if __name__ == "__main__":
    sys.exit(main())
