"""
Settings module for BayesBoost.

This module defines the process-level settings using Pydantic for validation
and environment variable loading. Algorithm settings live in
``config.hyperparams``; this module only covers what the environment controls.
"""
from functools import lru_cache
from typing import Any, Dict, Literal

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

ENV_PREFIX = "BAYESBOOST_"


class Settings(BaseModel):
    """
    Process settings with environment variable loading and validation.

    Every field is read from ``BAYESBOOST_<FIELD>`` (e.g. ``BAYESBOOST_SEED``).

    Attributes:
        seed: Fallback seed used when a command is run without ``--seed``
        log_level: Logging level
        environment: Application environment
        workers: Default number of parallel replication workers for ``bench``
        out_dir: Default directory for written artifacts
    """
    model_config = ConfigDict(
        case_sensitive=False,
        extra="ignore",
        populate_by_name=True,
    )

    seed: int = 2024
    log_level: str = "INFO"
    environment: Literal["development", "testing", "production"] = "development"
    workers: int = 1
    out_dir: str = "out"

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """
        Validate that the log level is one of the loguru levels.

        Args:
            v: The log level string to validate

        Returns:
            The validated, upper-cased log level

        Raises:
            ValueError: If the log level is not valid
        """
        valid_levels = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workers must be at least 1")
        return v

    @model_validator(mode="before")
    @classmethod
    def load_from_env(cls, data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Load values from ``BAYESBOOST_*`` environment variables.

        Explicitly passed values win; missing ones are looked up in the
        environment after loading an optional ``.env`` file.

        Args:
            data: The input data dictionary

        Returns:
            The updated data dictionary with values from environment variables
        """
        import os

        from dotenv import load_dotenv

        load_dotenv()

        env_data = dict(data or {})
        for field_name in cls.model_fields:
            env_var_name = f"{ENV_PREFIX}{field_name.upper()}"
            if field_name not in env_data and env_var_name in os.environ:
                env_data[field_name] = os.environ[env_var_name]

        return env_data


@lru_cache()
def get_settings() -> Settings:
    """
    Get process settings with caching.

    Returns:
        Settings: Settings instance
    """
    return Settings()
