"""Prediction-stability metrics (MSPD / RMSPD) and rank-based AUC.

MSPD is the mean squared difference between the predictions of two
independently retrained models on the same validation points, averaged
over all unordered pairs of runs. It admits an equivalent decomposition
into the per-point variance over runs minus the per-point covariance
between runs; both forms are implemented and must agree to floating
precision. The per-point run variance also yields an upper bound:
MSPD <= 4 * mean_i Var_runs(prediction_i).

Accumulations use extended precision (long double) so the pairwise and
decomposed forms agree to ~1e-12 relative even on large matrices.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "PredictionMatrix",
    "StabilityReport",
    "mspd_pairwise",
    "mspd_decomposed",
    "rmspd",
    "mean_run_variance",
    "stability_report",
    "auc",
]


@dataclass(frozen=True)
class PredictionMatrix:
    """R x N matrix of positive-class probabilities from repeated runs.

    Entry (j, i) is the probability assigned to validation point i by the
    model trained in run j.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("prediction matrix must be 2-D (runs x points)")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("prediction matrix must have at least one run and one point")
        if not np.all(np.isfinite(values)):
            raise ValueError("predictions must be finite")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("predictions must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def n_runs(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class StabilityReport:
    """MSPD, its square root, and the variance-based upper bound."""

    mspd: float
    rmspd: float
    mean_variance: float
    upper_bound: float

    def to_dict(self) -> dict:
        return {
            "mspd": self.mspd,
            "rmspd": self.rmspd,
            "mean_variance": self.mean_variance,
            "upper_bound": self.upper_bound,
        }


def _runs_matrix(preds) -> np.ndarray:
    """Validated (R, N) float array with R >= 2."""
    if isinstance(preds, PredictionMatrix):
        values = preds.values
    else:
        values = PredictionMatrix(np.asarray(preds)).values
    if values.shape[0] < 2:
        raise ValueError("stability metrics require at least 2 runs")
    return values


def mspd_pairwise(preds) -> float:
    """Mean squared prediction delta over all unordered run pairs.

    (2 / (R(R-1))) * sum_{j<k} mean_i (pred_i_run_j - pred_i_run_k)^2
    """
    v = _runs_matrix(preds).astype(np.longdouble)
    r, n = v.shape
    acc = np.longdouble(0.0)
    for j in range(1, r):
        d = v[j] - v[:j]
        acc += np.sum(d * d)
    return float(2.0 * acc / (np.longdouble(r) * (r - 1) * n))


def mspd_decomposed(preds) -> float:
    """MSPD via per-point variance and between-run covariance.

    For each point i, with m_i the mean prediction over runs:
      (2/N) * sum_i [ sample variance_i  -  (1/(R(R-1))) sum_j sum_k dev_ij * dev_ik ]

    The double sum (covariance term) is evaluated literally rather than
    assumed zero, so agreement with mspd_pairwise is a computed identity.
    """
    v = _runs_matrix(preds).astype(np.longdouble)
    r, n = v.shape
    mean = v.mean(axis=0)
    dev = v - mean
    var_term = np.sum(dev * dev, axis=0) / (r - 1)
    cross = np.einsum("jn,kn->n", dev, dev)
    cov_term = cross / (np.longdouble(r) * (r - 1))
    return float(2.0 / n * np.sum(var_term - cov_term))


def rmspd(preds) -> float:
    """Root mean squared prediction delta, on the same scale as predictions."""
    return float(np.sqrt(mspd_pairwise(preds)))


def mean_run_variance(preds) -> float:
    """Mean over points of the per-point sample variance across runs.

    Four times this value upper-bounds the MSPD.
    """
    v = _runs_matrix(preds).astype(np.longdouble)
    return float(v.var(axis=0, ddof=1).mean())


def stability_report(preds) -> StabilityReport:
    m = mspd_pairwise(preds)
    mv = mean_run_variance(preds)
    report = StabilityReport(
        mspd=m,
        rmspd=float(np.sqrt(m)),
        mean_variance=mv,
        upper_bound=4.0 * mv,
    )
    if report.mspd > report.upper_bound + 1e-9:
        raise AssertionError(
            f"stability bound violated: mspd={report.mspd} > 4*mean_variance={report.upper_bound}"
        )
    return report


def auc(scores, labels) -> float:
    """Area under the ROC curve, exact Mann-Whitney form.

    Equals the fraction of (positive, negative) pairs ranked correctly,
    with ties getting half credit. Average ranks make this exact, not a
    trapezoidal approximation.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1 or s.shape != y.shape:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
