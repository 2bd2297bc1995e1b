"""
Run-time configuration models for BayesBoost.

This module defines the validated configuration of a fit (Hyperparams), of a
simulation study (SimConfig) and of one command-line invocation (RunConfig).
Every model is checked on construction so no work starts on invalid input.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Hyperparams(BaseModel):
    """
    Tuning constants of the boosting loop and the Gibbs sampler.

    Defaults mirror the simulation study settings (ν=0.3, T=30,
    a=b=0.001, v0=1, Λ0=1, α=3, Hampel k=2).

    Attributes:
        nu: Step length ν in (0, 1]
        mcmc_samples: Gibbs draws T per boosting iteration
        max_iter: Number of boosting iterations m_stop
        a: Inverse gamma prior shape
        b: Inverse gamma prior scale
        v0: Inverse Wishart prior degrees of freedom
        lambda0_init: Diagonal value of the initial Λ0
        patience: α, consecutive non-improvements before stopping
        zeta: ζ, number of leading iterations skipped by the stopping rule
        hampel_window: Half-width w of the Hampel window
        hampel_k: Hampel threshold in scaled MADs
        seed: Seed of the fit's random stream
        re_mode: "auto" selects random slopes, "fixed" uses ``fixed_effects``
        fixed_effects: 1-based covariate indices of a pre-declared random-slope structure
        re_candidates: 1-based covariate indices allowed to become random slopes
            (None: every covariate that is not cluster-constant)
        max_random_slopes: Cap on the number of random slopes (None: no cap)
        correction: "appendix" corrects each block against its own covariate,
            "full" corrects every block against [1, X]
        stopping: "patience" (stabilization rule) or "min" (least filtered cAIC)
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    nu: float = Field(0.3, gt=0.0, le=1.0)
    mcmc_samples: int = Field(30, ge=1)
    max_iter: int = Field(150, ge=0)
    a: float = Field(0.001, gt=0.0)
    b: float = Field(0.001, gt=0.0)
    v0: float = Field(1.0, ge=1.0)
    lambda0_init: float = Field(1.0, gt=0.0)
    patience: int = Field(3, ge=1)
    zeta: int = Field(10, ge=0)
    hampel_window: int = Field(7, ge=1)
    hampel_k: float = Field(2.0, ge=0.0)
    seed: int = Field(2024, ge=0)
    re_mode: Literal["auto", "fixed"] = "auto"
    fixed_effects: Tuple[int, ...] = ()
    re_candidates: Optional[Tuple[int, ...]] = None
    max_random_slopes: Optional[int] = Field(None, ge=0)
    correction: Literal["appendix", "full"] = "appendix"
    stopping: Literal["patience", "min"] = "patience"

    @field_validator("fixed_effects", "re_candidates")
    @classmethod
    def validate_indices(cls, v: Optional[Tuple[int, ...]]) -> Optional[Tuple[int, ...]]:
        """
        Validate covariate index lists.

        Args:
            v: 1-based covariate indices

        Returns:
            The sorted, de-duplicated indices

        Raises:
            ValueError: If an index is below 1
        """
        if v is None:
            return v
        if any(k < 1 for k in v):
            raise ValueError("covariate indices are 1-based")
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def validate_iterations(self) -> "Hyperparams":
        """Require enough iterations for the stopping rule to run at least once."""
        needed = self.zeta + self.patience + 2
        if self.max_iter < needed:
            raise ValueError(
                f"max_iter must be at least zeta + patience + 2 = {needed}, got {self.max_iter}"
            )
        return self


class SimConfig(BaseModel):
    """
    Configuration of a simulation study cell.

    Attributes:
        design: Data generating design
        m: Number of clusters
        n_i: Replicates per cluster
        p: Number of covariates (the first four are informative)
        tau: Random-effect standard deviation
        sigma: Error standard deviation
        corr: Correlation between random effects (random_slope only)
        n_replications: Independent replications
        seed: Base seed of the replication streams
        hyperparams: Fit configuration
        re_mode: "auto" selects random slopes, "fixed" declares the true structure
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    design: Literal["random_intercept", "random_slope"] = "random_intercept"
    m: int = Field(50, ge=2)
    n_i: int = Field(10, ge=1)
    p: int = Field(10, ge=4)
    tau: float = Field(0.4, gt=0.0)
    sigma: float = Field(0.4, gt=0.0)
    corr: float = 0.6
    n_replications: int = Field(100, ge=1)
    seed: int = Field(2024, ge=0)
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)
    re_mode: Literal["auto", "fixed"] = "auto"

    @field_validator("corr")
    @classmethod
    def validate_corr(cls, v: float) -> float:
        if not -1.0 < v < 1.0:
            raise ValueError("corr must lie in (-1, 1)")
        return v

    @property
    def true_random_slopes(self) -> Tuple[int, ...]:
        """1-based covariates carrying a random slope in the generating model."""
        return (3, 4) if self.design == "random_slope" else ()

    def fit_hyperparams(self) -> Hyperparams:
        """
        Hyperparams for fitting one replication.

        In fixed mode the true random-effects structure is declared up front.
        """
        if self.re_mode == "fixed":
            return self.hyperparams.model_copy(
                update={"re_mode": "fixed", "fixed_effects": self.true_random_slopes}
            )
        return self.hyperparams.model_copy(update={"re_mode": "auto", "fixed_effects": ()})


class RunConfig(BaseModel):
    """
    One command-line invocation.

    Attributes:
        command: Subcommand
        input_path: CSV to fit (fit only)
        response: Response column name
        cluster: Cluster column name
        fixed_spec: Raw ``fixed:<spec>`` covariate list, resolved against the data
        standardize: Standardize covariates before fitting
        out_dir: Output directory
        workers: Parallel replication workers (bench only)
        hyperparams: Fit configuration
        sim: Simulation configuration (simulate and bench)
        taus: τ grid for bench
        ps: p grid for bench
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["fit", "simulate", "bench"]
    input_path: Optional[str] = None
    response: str = "y"
    cluster: str = "cluster"
    fixed_spec: Optional[str] = None
    standardize: bool = False
    out_dir: str = "out"
    workers: int = Field(1, ge=1)
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)
    sim: Optional[SimConfig] = None
    taus: List[float] = Field(default_factory=list)
    ps: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_command(self) -> "RunConfig":
        """Check that each command has the inputs it needs."""
        if self.command == "fit" and not self.input_path:
            raise ValueError("fit needs an input path")
        if self.command in ("simulate", "bench") and self.sim is None:
            raise ValueError(f"{self.command} needs a simulation configuration")
        if any(t <= 0 for t in self.taus):
            raise ValueError("tau values must be positive")
        if any(p < 4 for p in self.ps):
            raise ValueError("p values must be at least 4")
        return self
