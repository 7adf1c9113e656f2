"""End-to-end evaluation of one parameter setting and the linear loss.

One evaluation repeats R times: subsample the training half at
proportion p, train a forest, predict the full validation half. The R
prediction vectors give the RMSPD, the per-run AUCs average into the
error term, and the per-run training times (wall clock or the analytic
cost model) average into the cost term. The three combine linearly:

    loss = beta * rmspd + gamma * runtime - alpha * auc
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitDataset, subsample
from .errors import DataError
from .forest import ForestParams, predict_proba, train_forest, training_cost
from .metrics import PredictionMatrix, auc, rmspd
from .seeding import derive_seed

WALL_CLOCK = "wall_clock"
DETERMINISTIC = "deterministic"
COST_MODES = (WALL_CLOCK, DETERMINISTIC)

__all__ = [
    "WALL_CLOCK",
    "DETERMINISTIC",
    "COST_MODES",
    "LossWeights",
    "EvaluationResult",
    "loss",
    "evaluate_params",
]


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights: alpha scales AUC, beta RMSPD, gamma runtime."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class EvaluationResult:
    """Metrics for one parameter setting over R repeated runs."""

    auc: float
    rmspd: float
    runtime: float
    loss: float
    runs: int
    params: ForestParams
    predictions: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "auc": self.auc,
            "rmspd": self.rmspd,
            "runtime_seconds": self.runtime,
            "loss": self.loss,
            "n_trees": self.params.n_trees,
            "max_depth": self.params.max_depth,
            "train_proportion": self.params.train_proportion,
            "runs": self.runs,
        }


def loss(weights: LossWeights, auc_value: float, rmspd_value: float, runtime: float) -> float:
    """beta * rmspd + gamma * runtime - alpha * auc."""
    for name, v in (("auc", auc_value), ("rmspd", rmspd_value), ("runtime", runtime)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    return weights.beta * rmspd_value + weights.gamma * runtime - weights.alpha * auc_value


def evaluate_params(
    data: SplitDataset,
    params: ForestParams,
    runs: int,
    weights: LossWeights,
    seed: int,
    cost_mode: str = WALL_CLOCK,
    keep_predictions: bool = False,
) -> EvaluationResult:
    """Train/predict ``runs`` times from scratch and aggregate the metrics.

    Each run draws its own subsample and forest seed from ``seed``, so
    the result in deterministic cost mode is a pure function of
    (data, params, runs, weights, seed). Runs execute sequentially so
    wall-clock timing of one run never includes work from another.
    """
    if runs < 2:
        raise ValueError("evaluation needs at least 2 runs for a stability estimate")
    if cost_mode not in COST_MODES:
        raise ValueError(f"cost_mode must be one of {COST_MODES}, got {cost_mode!r}")
    labels = data.validation.labels
    if labels.size == 0 or labels.min() == labels.max():
        raise DataError("validation half contains a single class; AUC undefined")

    predictions = np.empty((runs, data.validation.n_rows), dtype=np.float64)
    aucs = np.empty(runs, dtype=np.float64)
    times = np.empty(runs, dtype=np.float64)
    for r in range(runs):
        sub = subsample(data.train, params.train_proportion, derive_seed(seed, "subsample", r))
        start = time.perf_counter()
        forest = train_forest(sub, params, derive_seed(seed, "forest", r))
        elapsed = time.perf_counter() - start
        predictions[r] = predict_proba(forest, data.validation.features)
        aucs[r] = auc(predictions[r], labels)
        times[r] = elapsed if cost_mode == WALL_CLOCK else training_cost(sub.n_rows, params)

    matrix = PredictionMatrix(predictions)
    stability = rmspd(matrix)
    mean_auc = float(aucs.mean())
    runtime = float(times.mean())
    return EvaluationResult(
        auc=mean_auc,
        rmspd=stability,
        runtime=runtime,
        loss=loss(weights, mean_auc, stability, runtime),
        runs=runs,
        params=params,
        predictions=matrix.values if keep_predictions else None,
    )
