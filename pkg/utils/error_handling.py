"""
Error handling utilities for BayesBoost.

This module provides the exception hierarchy, the mapping from exceptions to
command-line exit codes, and a decorator that turns failures into records so
that batch work (benchmark replications) can continue past a failed unit.
"""
import functools
import traceback
from typing import Any, Callable, TypeVar, cast

from loguru import logger
from pydantic import ValidationError

# Type variable for generic function types
F = TypeVar('F', bound=Callable[..., Any])

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class BayesBoostError(Exception):
    """Base class for all errors raised by BayesBoost."""

    exit_code: int = EXIT_UNEXPECTED


class ConfigError(BayesBoostError):
    """Invalid configuration or hyperparameters."""

    exit_code = EXIT_CONFIG


class PreconditionError(BayesBoostError, ValueError):
    """An operation was called with arguments violating its precondition."""

    exit_code = EXIT_CONFIG


class DataError(BayesBoostError):
    """Input data could not be read or does not describe a clustered dataset."""

    exit_code = EXIT_DATA


class SchemaError(DataError):
    """A required column is missing from the input."""


class ParseError(DataError):
    """A cell is missing or not numeric.

    Attributes:
        row: 1-based data row (header excluded) of the offending cell
        column: Column name of the offending cell
    """

    def __init__(self, message: str, row: int, column: str) -> None:
        super().__init__(message)
        self.row = row
        self.column = column


class StructureError(DataError):
    """The data violates a structural invariant (e.g. fewer than two clusters)."""


class NumericError(BayesBoostError):
    """A numerical routine failed (non-finite input, failed factorization)."""

    exit_code = EXIT_NUMERIC


class FitAbortedError(NumericError):
    """A boosting iteration failed; the partial trace is preserved.

    Attributes:
        partial_trace: FitTrace holding the completed iterations
    """

    def __init__(self, message: str, partial_trace: Any) -> None:
        super().__init__(message)
        self.partial_trace = partial_trace


def exit_code_for(e: BaseException) -> int:
    """
    Map an exception to the command-line exit code.

    Args:
        e: The exception

    Returns:
        int: 2 for configuration problems, 3 for data problems,
            4 for numeric failures, 1 for anything unexpected
    """
    if isinstance(e, BayesBoostError):
        return e.exit_code
    if isinstance(e, ValidationError):
        return EXIT_CONFIG
    return EXIT_UNEXPECTED


def capture_failure(on_failure: Callable[[BaseException], Any]) -> Callable[[F], F]:
    """
    Decorator that converts any exception into a failure record.

    The wrapped call never raises; when it fails, the error is logged and
    ``on_failure(exc)`` is returned instead.

    Args:
        on_failure: Builds the value returned in place of a failed result

    Returns:
        A decorator function

    Example:
        @capture_failure(lambda e: {"failed": True, "error": str(e)})
        def run_one(index):
            return expensive_fit(index)
    """
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except Exception as e:
                logger.warning(f"{func.__name__} failed: {e.__class__.__name__}: {e}")
                logger.debug(f"Exception details: {traceback.format_exc()}")
                return on_failure(e)
        return cast(F, wrapper)
    return decorator
