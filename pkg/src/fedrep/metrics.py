"""MSE evaluation and scenario summaries.

Holdout evaluation runs the model in inference mode over a retailer whose
data never entered training. MSE can be reported in the scaled space the
model trains in (default) or mapped back to raw kWh through the holdout's
own scaling parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ScalingParams, WindowedDataset
from .federated import TrainingRun
from .model import ModelParams, predict

__all__ = [
    "EvalResult",
    "ScenarioSummary",
    "mse",
    "evaluate_holdout",
    "summarize_scenario",
    "write_scenario_summary",
    "write_predictions_csv",
]


@dataclass(frozen=True)
class EvalResult:
    """Forecast error of one model on one dataset.

    n_predictions counts individual predicted values (windows * horizon);
    mse averages over all of them, per_horizon_mse per look-ahead step.
    """

    mse: float
    per_horizon_mse: tuple[float, ...]
    n_predictions: int


@dataclass(frozen=True)
class ScenarioSummary:
    """Min/max/mean holdout MSE over a scenario's repeated runs."""

    scenario_id: str
    n_retailers: int
    min_mse: float
    max_mse: float
    mean_mse: float
    rounds_to_convergence: float

    def __post_init__(self) -> None:
        if not self.min_mse <= self.mean_mse <= self.max_mse:
            raise ValueError("summary statistics out of order (min <= mean <= max)")


def mse(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean squared error: mean((y - yhat)^2) over all values."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ValueError(f"shape mismatch: {actual.shape} vs {predicted.shape}")
    if actual.size == 0:
        raise ValueError("mse of empty sequences is undefined")
    diff = actual - predicted
    return float(np.mean(diff * diff))


def evaluate_holdout(
    params: ModelParams,
    holdout: WindowedDataset,
    mode: str = "scaled",
    scaler: ScalingParams | None = None,
) -> EvalResult:
    """Inference-mode forecast error over every holdout window.

    mode "scaled" compares in the model's input space; mode "raw" inverse
    transforms predictions and targets through the holdout retailer's
    scaler before computing errors.
    """
    if holdout.count < 1:
        raise ValueError("holdout dataset is empty")
    if mode not in ("scaled", "raw"):
        raise ValueError(f"mode must be 'scaled' or 'raw', got {mode!r}")
    predictions = predict(params, holdout.inputs)
    targets = holdout.targets
    if mode == "raw":
        if scaler is None:
            raise ValueError("raw mode needs the holdout's ScalingParams")
        span = scaler.max - scaler.min
        predictions = predictions * span + scaler.min
        targets = targets * span + scaler.min
    sq = (targets - predictions) ** 2
    per_horizon = tuple(float(v) for v in sq.mean(axis=0))
    return EvalResult(
        mse=float(sq.mean()),
        per_horizon_mse=per_horizon,
        n_predictions=int(sq.size),
    )


def summarize_scenario(
    scenario_id: str,
    n_retailers: int,
    runs: Sequence[tuple[TrainingRun, EvalResult]],
) -> ScenarioSummary:
    """Collapse repeated runs into the summary row for the scenario table."""
    if not runs:
        raise ValueError("at least one run is required")
    final = [ev.mse for _, ev in runs]
    rounds = [run.rounds for run, _ in runs]
    return ScenarioSummary(
        scenario_id=scenario_id,
        n_retailers=n_retailers,
        min_mse=min(final),
        max_mse=max(final),
        mean_mse=sum(final) / len(final),
        rounds_to_convergence=sum(rounds) / len(rounds),
    )


def write_scenario_summary(path, summaries: Sequence[ScenarioSummary], mse_space: str = "scaled") -> None:
    lines = ["scenario_id,n_retailers,min_mse,max_mse,mean_mse,rounds_to_convergence,mse_space"]
    for s in summaries:
        lines.append(
            f"{s.scenario_id},{s.n_retailers},{s.min_mse!r},{s.max_mse!r},"
            f"{s.mean_mse!r},{s.rounds_to_convergence!r},{mse_space}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_predictions_csv(path, timestamps: np.ndarray, actual: np.ndarray, predicted: np.ndarray) -> None:
    """Per-step forecasts: timestamp, horizon (1-based), actual, predicted.

    timestamps/actual/predicted all have shape (windows, horizon).
    """
    if not (timestamps.shape == actual.shape == predicted.shape):
        raise ValueError("timestamps, actual and predicted must align")
    lines = ["timestamp,horizon,actual,predicted"]
    horizon = actual.shape[1]
    for i in range(actual.shape[0]):
        for j in range(horizon):
            ts = np.datetime_as_string(timestamps[i, j], unit="m")
            lines.append(f"{ts},{j + 1},{actual[i, j]!r},{predicted[i, j]!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
