"""
Artifact service for BayesBoost.

This module writes the files the commands produce and reads them back:
the model report (JSON with a schema version), the per-iteration trace and
fitted values (CSV with a ``# key=value`` provenance header), the
simulation truth (JSON) and the benchmark tables (CSV).
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from models.dataset import Dataset
from models.evaluation import SimTruth
from models.state import INTERCEPT, FitTrace
from services.boosting_service import predict
from services.data_service import write_dataset
from services.simulation_service import BenchmarkResult
from utils.error_handling import DataError, PreconditionError
from utils.logging_config import configure_logging

logger = configure_logging()

SCHEMA_VERSION = 1
QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)
INTERCEPT_NAME = "(Intercept)"

PathLike = Union[str, Path]


class Quantiles(BaseModel):
    """Sample quantiles of one parameter's Gibbs draws."""
    q2_5: float
    q25: float
    q50: float
    q75: float
    q97_5: float

    @classmethod
    def of(cls, samples: np.ndarray) -> "Quantiles":
        values = np.percentile(np.asarray(samples, dtype=float), QUANTILES)
        return cls(**dict(zip(cls.model_fields, (float(v) for v in values))))


class CoefficientEntry(BaseModel):
    index: int
    name: str
    value: float


class RandomEffectEntry(BaseModel):
    cluster: int
    effect: int
    effect_name: str
    mode: float
    quantiles: Quantiles


class CovarianceEntry(BaseModel):
    row: int
    col: int
    mode: float
    quantiles: Quantiles


class StoppingEntry(BaseModel):
    iteration: int
    caic: float
    method: str
    stabilized: bool
    alpha: int
    zeta: int


class ModelReport(BaseModel):
    """
    Contents of the model file written by ``fit``.

    Attributes:
        schema_version: Format version of this file
        response: Response column
        cluster: Cluster column
        n: Observations
        m: Clusters
        p: Covariates
        hyperparams: Settings the fit ran with
        stopping: Stopping iteration and rule
        intercept: β̂₀
        coefficients: β̂ of every covariate
        selected_fixed: Names of covariates with a nonzero β̂
        random_effects: Names of the selected random effects
        random_effect_ids: Effect ids (0 intercept, k covariate k)
        sigma2: σ̂²
        sigma2_quantiles: Quantiles of the σ² draws
        Q: Q̂
        Q_entries: Q̂ entries with quantiles of their draws
        gamma: γ̂ per cluster and effect with quantiles of their draws
    """
    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    response: str
    cluster: str
    n: int
    m: int
    p: int
    hyperparams: Dict[str, Any]
    stopping: StoppingEntry
    intercept: float
    coefficients: List[CoefficientEntry]
    selected_fixed: List[str]
    random_effects: List[str]
    random_effect_ids: List[int]
    sigma2: float
    sigma2_quantiles: Quantiles
    Q: List[List[float]]
    Q_entries: List[CovarianceEntry]
    gamma: List[RandomEffectEntry]


class TruthFile(BaseModel):
    """JSON form of SimTruth."""
    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    design: str
    beta_true: List[float]
    informative_fixed: List[int]
    informative_random: List[int]
    effects: List[int]
    Q_true: List[List[float]]
    sigma2_true: float
    gamma_true: List[List[float]]
    config: Dict[str, Any] = {}


def effect_name(effect: int, names: Tuple[str, ...]) -> str:
    return INTERCEPT_NAME if effect == INTERCEPT else names[effect - 1]


def _provenance_lines(provenance: Mapping[str, Any]) -> str:
    return "".join(f"# {key}={value}\n" for key, value in provenance.items())


def _write_csv(path: Path, frame: pd.DataFrame, provenance: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_provenance_lines(provenance))
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def read_provenance(path: PathLike) -> Dict[str, str]:
    """``# key=value`` header lines of a CSV artifact."""
    provenance: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            provenance[key] = value
    return provenance


def build_model_report(d: Dataset, trace: FitTrace, hyperparams: Mapping[str, Any]) -> ModelReport:
    """
    Collect the stopped model, its draws' quantiles and the settings.

    Raises:
        PreconditionError: If the fit did not complete
    """
    state, summary, stopping = trace.final_state, trace.final_summary, trace.stopping
    if state is None or summary is None or stopping is None:
        raise PreconditionError("Model report needs a completed fit")

    size = len(state.effects)
    gamma_q = np.percentile(summary.gamma_samples, QUANTILES, axis=0)
    gamma_entries = []
    for i, label in enumerate(d.cluster_labels):
        for c, effect in enumerate(state.effects):
            j = i * size + c
            gamma_entries.append(RandomEffectEntry(
                cluster=int(label),
                effect=effect,
                effect_name=effect_name(effect, d.names),
                mode=float(state.gamma_mode[j]),
                quantiles=Quantiles(**dict(zip(Quantiles.model_fields, map(float, gamma_q[:, j])))),
            ))

    q_entries = [
        CovarianceEntry(
            row=state.effects[r], col=state.effects[c], mode=float(state.Q_mode[r, c]),
            quantiles=Quantiles.of(summary.Q_samples[:, r, c]),
        )
        for r in range(size)
        for c in range(r, size)
    ]

    return ModelReport(
        response=d.response_name,
        cluster=d.cluster_name,
        n=d.n,
        m=d.m,
        p=d.p,
        hyperparams=dict(hyperparams),
        stopping=StoppingEntry(
            iteration=stopping.s, caic=stopping.caic_at_s, method=stopping.method,
            stabilized=stopping.stabilized, alpha=stopping.alpha, zeta=stopping.zeta,
        ),
        intercept=float(state.beta[0]),
        coefficients=[
            CoefficientEntry(index=k, name=d.names[k - 1], value=float(state.beta[k]))
            for k in range(1, d.p + 1)
        ],
        selected_fixed=[d.names[k - 1] for k in state.selected_fixed()],
        random_effects=[effect_name(e, d.names) for e in state.effects],
        random_effect_ids=list(state.effects),
        sigma2=float(state.sigma2_mode),
        sigma2_quantiles=Quantiles.of(summary.sigma2_samples),
        Q=state.Q_mode.tolist(),
        Q_entries=q_entries,
        gamma=gamma_entries,
    )


def write_model_report(path: PathLike, report: ModelReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote model report to {path}")
    return path


def load_model_report(path: PathLike) -> ModelReport:
    """
    Read a model report.

    Raises:
        DataError: If the file has another schema version
    """
    report = ModelReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    if report.schema_version != SCHEMA_VERSION:
        raise DataError(f"Unsupported model report schema version {report.schema_version}")
    return report


def trace_frame(trace: FitTrace, d: Dataset) -> pd.DataFrame:
    """
    One row per iteration: β̂ path, raw and filtered cAIC, σ̂² and Q̂ entries.

    Q̂ columns ``Q_<a>_<b>`` cover every pair of effects that ever entered
    the structure and are empty while an effect is absent.
    """
    effects: List[int] = []
    for record in trace.records:
        effects.extend(e for e in record.effects if e not in effects)

    filtered = trace.caic_filtered if trace.caic_filtered is not None else np.full(len(trace), np.nan)
    rows = []
    for record, caic_filtered in zip(trace.records, filtered):
        row: Dict[str, Any] = {
            "iteration": record.iteration,
            "k_star": record.k_star,
            "decision": record.decision,
            "mse_fixed": record.mse_fixed,
            "mse_random": record.mse_random,
            "caic_raw": record.caic,
            "caic_filtered": float(caic_filtered),
            "effective_dof": record.effective_dof,
            "sigma2": record.sigma2_mode,
            "random_effects": "|".join(str(e) for e in record.effects),
        }
        for k in range(d.p + 1):
            row[f"beta_{k}"] = record.beta[k]
        for a_pos, a in enumerate(effects):
            for b in effects[a_pos:]:
                value = np.nan
                if a in record.effects and b in record.effects:
                    value = record.Q_mode[record.effects.index(a), record.effects.index(b)]
                row[f"Q_{a}_{b}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def write_trace(path: PathLike, trace: FitTrace, d: Dataset, provenance: Mapping[str, Any]) -> Path:
    path = _write_csv(Path(path), trace_frame(trace, d), provenance)
    logger.info(f"Wrote trace of {len(trace)} iterations to {path}")
    return path


def load_trace(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Trace table and its provenance header."""
    frame = pd.read_csv(path, comment="#", keep_default_na=True, float_precision="round_trip")
    return frame, read_provenance(path)


def write_fitted(
    path: PathLike, d: Dataset, fitted: np.ndarray, provenance: Mapping[str, Any]
) -> Path:
    """Fitted values and residuals in input row order (``row`` is 1-based)."""
    y = d.to_input_order(d.y)
    fitted_in = d.to_input_order(fitted)
    labels = d.to_input_order(np.asarray(d.cluster_labels)[d.cluster_index])
    frame = pd.DataFrame({
        "row": np.arange(1, d.n + 1),
        "cluster": labels,
        "y": y,
        "fitted": fitted_in,
        "residual": y - fitted_in,
    })
    path = _write_csv(Path(path), frame, provenance)
    logger.info(f"Wrote fitted values to {path}")
    return path


def load_fitted(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def write_truth(path: PathLike, truth: SimTruth, config: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = TruthFile(
        design=truth.design,
        beta_true=truth.beta_true.tolist(),
        informative_fixed=list(truth.informative_fixed),
        informative_random=list(truth.informative_random),
        effects=list(truth.effects),
        Q_true=truth.Q_true.tolist(),
        sigma2_true=float(truth.sigma2_true),
        gamma_true=truth.gamma_true.tolist(),
        config=dict(config),
    )
    path.write_text(payload.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote simulation truth to {path}")
    return path


def load_truth(path: PathLike) -> SimTruth:
    payload = TruthFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
    return SimTruth(
        design=payload.design,
        beta_true=np.array(payload.beta_true),
        informative_fixed=tuple(payload.informative_fixed),
        informative_random=tuple(payload.informative_random),
        effects=tuple(payload.effects),
        Q_true=np.array(payload.Q_true),
        sigma2_true=payload.sigma2_true,
        gamma_true=np.array(payload.gamma_true),
    )


def write_bench(out_dir: PathLike, result: BenchmarkResult, config: Mapping[str, Any]) -> Tuple[Path, Path]:
    """
    Write ``bench_summary.csv``, ``bench_runs.csv`` and ``bench_config.json``.

    Returns:
        Tuple: Paths of the summary and the per-run table
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / "bench_summary.csv"
    runs_path = out / "bench_runs.csv"
    result.summary.to_csv(summary_path, index=False, lineterminator="\n")
    result.runs.to_csv(runs_path, index=False, lineterminator="\n")
    (out / "bench_config.json").write_text(
        json.dumps(dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info(f"Wrote benchmark tables to {summary_path} and {runs_path}")
    return summary_path, runs_path


def load_bench_summary(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def load_bench_runs(path: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    return frame.fillna({"error": ""})


class ArtifactService:
    """
    Service that writes every artifact of a command into one output directory.

    Attributes:
        out_dir: Output directory
        provenance: Settings written into the header of every CSV artifact
    """

    MODEL_FILE = "model.json"
    TRACE_FILE = "trace.csv"
    PARTIAL_TRACE_FILE = "trace_partial.csv"
    FITTED_FILE = "fitted.csv"
    DATASET_FILE = "simulated.csv"
    TRUTH_FILE = "truth.json"

    def __init__(self, out_dir: PathLike, provenance: Optional[Mapping[str, Any]] = None) -> None:
        self.out_dir = Path(out_dir)
        self.provenance = dict(provenance or {})

    def write_fit(self, d: Dataset, trace: FitTrace, hyperparams: Mapping[str, Any]) -> Dict[str, Path]:
        """
        Write the model report, the trace and the fitted values of a completed fit.

        Returns:
            Dict: Path per file name
        """
        paths = {
            self.MODEL_FILE: write_model_report(
                self.out_dir / self.MODEL_FILE, build_model_report(d, trace, hyperparams)
            ),
            self.TRACE_FILE: write_trace(self.out_dir / self.TRACE_FILE, trace, d, self.provenance),
            self.FITTED_FILE: write_fitted(
                self.out_dir / self.FITTED_FILE, d, predict(trace, d), self.provenance
            ),
        }
        return paths

    def write_partial_trace(self, d: Dataset, trace: FitTrace) -> Optional[Path]:
        """Completed iterations of an aborted fit; nothing when none completed."""
        if not len(trace):
            return None
        return write_trace(self.out_dir / self.PARTIAL_TRACE_FILE, trace, d, self.provenance)

    def write_simulation(self, d: Dataset, truth: SimTruth) -> Tuple[Path, Path]:
        """Simulated data and its generating parameters."""
        return (
            write_dataset(d, self.out_dir / self.DATASET_FILE),
            write_truth(self.out_dir / self.TRUTH_FILE, truth, self.provenance),
        )

    def write_bench(self, result: BenchmarkResult) -> Tuple[Path, Path]:
        return write_bench(self.out_dir, result, self.provenance)
