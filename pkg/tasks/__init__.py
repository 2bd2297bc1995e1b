"""
Tasks package for BayesBoost.

This package contains one module per command-line command: fitting a CSV,
simulating a dataset and running a benchmark.
"""

from tasks.bench_task import cmd_bench
from tasks.fit_task import cmd_fit
from tasks.simulate_task import cmd_simulate

__all__ = ["cmd_fit", "cmd_simulate", "cmd_bench"]
