"""
Runtime statistics for BayesBoost.

This module keeps per-process wall-clock timings and event counters for the
expensive steps (fits, Gibbs sweeps, replications) and numeric events such as
positive-definite repairs.
"""
import functools
import statistics
import time
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, TypeVar, cast

from utils.logging_config import configure_logging

logger = configure_logging()

# Type variable for generic function types
F = TypeVar('F', bound=Callable[..., Any])

SLOW_CALL_MS = 60_000.0


class RuntimeStats:
    """
    Process-wide timings and event counters.

    Attributes:
        _instance: Singleton instance
        execution_times: Execution times in milliseconds by category
        events: Event counts by name
        last_reset: Timestamp of the last reset
    """
    _instance = None

    def __new__(cls) -> "RuntimeStats":
        """Create a singleton instance."""
        if cls._instance is None:
            cls._instance = super(RuntimeStats, cls).__new__(cls)
            cls._instance._initialize()
        return cls._instance

    def _initialize(self) -> None:
        """Initialize the dictionaries."""
        self.execution_times: Dict[str, List[float]] = {}
        self.events: Dict[str, int] = {}
        self.last_reset = datetime.now()

    def track_execution_time(self, category: str, time_ms: float) -> None:
        """
        Track a call duration.

        Args:
            category: Category or function name
            time_ms: Execution time in milliseconds
        """
        times = self.execution_times.setdefault(category, [])
        times.append(time_ms)

        # Gibbs sweeps run thousands of times per fit
        if len(times) > 10_000:
            self.execution_times[category] = times[-10_000:]

    def count(self, event: str, increment: int = 1) -> None:
        """
        Count an event occurrence.

        Args:
            event: Event name
            increment: Amount to add
        """
        self.events[event] = self.events.get(event, 0) + increment

    def get_execution_stats(self, category: Optional[str] = None) -> Dict[str, Any]:
        """
        Get execution time statistics.

        Args:
            category: Optional category to filter by

        Returns:
            Dict: count, min, max, mean and median milliseconds per category
        """
        selected = (
            {category: self.execution_times.get(category, [])}
            if category
            else self.execution_times
        )
        return {
            cat: {
                "count": len(times),
                "min_ms": min(times),
                "max_ms": max(times),
                "mean_ms": statistics.mean(times),
                "median_ms": statistics.median(times),
            }
            for cat, times in selected.items()
            if times
        }

    def get_summary(self) -> Dict[str, Any]:
        """
        Get a summary of all statistics.

        Returns:
            Dict: Summary of timings and events
        """
        return {
            "time_since_reset_seconds": (datetime.now() - self.last_reset).total_seconds(),
            "execution_times": self.get_execution_stats(),
            "events": dict(self.events),
        }

    def reset(self) -> None:
        """Reset all statistics."""
        self._initialize()


runtime_stats = RuntimeStats()


def timed(category: str) -> Callable[[F], F]:
    """
    Decorator to time function execution and record it.

    Args:
        category: Category name for this measurement

    Returns:
        Decorated function

    Example:
        @timed("gibbs_sweep")
        def gibbs_sweep(...):
            ...
    """
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                execution_time_ms = (time.perf_counter() - start_time) * 1000.0
                runtime_stats.track_execution_time(category, execution_time_ms)
                if execution_time_ms > SLOW_CALL_MS:
                    logger.warning(f"Slow execution: {category} took {execution_time_ms:.0f}ms")

        return cast(F, wrapper)

    return decorator


def count(event: str, increment: int = 1) -> None:
    """Count an event on the process-wide runtime stats."""
    runtime_stats.count(event, increment)
