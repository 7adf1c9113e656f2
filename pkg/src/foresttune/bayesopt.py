"""Loss minimisation over (n_trees, max_depth, train_proportion).

A Gaussian-process surrogate with a Matern-5/2 ARD kernel models the
loss over the unit cube (each parameter affinely normalised to [0, 1]).
Expected improvement picks the next setting to evaluate: a Sobol scan
of the cube followed by coordinate-wise golden-section refinement.
Integer parameters are relaxed to the continuous cube and rounded at
evaluation time. The observed losses are standardised before fitting;
kernel hyperparameters maximise the log marginal likelihood via a
multistart bounded L-BFGS-B search.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .forest import ForestParams
from .objective import EvaluationResult

log = logging.getLogger(__name__)

LENGTHSCALE_BOUNDS = (0.05, 2.0)
SIGNAL_VAR_BOUNDS = (0.1, 10.0)
NOISE_VAR_BOUNDS = (1e-6, 1.0)

_DEFAULT_LENGTHSCALE = 0.5
_DEFAULT_SIGNAL_VAR = 1.0
_DEFAULT_NOISE_VAR = 1e-6

__all__ = [
    "ParameterSpace",
    "Observation",
    "SurrogateState",
    "fit_surrogate",
    "posterior",
    "expected_improvement",
    "suggest_next",
    "optimize",
]


@dataclass(frozen=True)
class ParameterSpace:
    """Box bounds for the three tuned parameters, normalised to [0,1]^3."""

    n_trees: tuple = (1, 200)
    max_depth: tuple = (1, 20)
    train_proportion: tuple = (0.1, 1.0)

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "train_proportion"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} bounds must satisfy lo <= hi, got ({lo}, {hi})")
        if not (0.0 < self.train_proportion[0] and self.train_proportion[1] <= 1.0):
            raise ValueError("train_proportion bounds must lie in (0, 1]")
        if self.n_trees[0] < 1:
            raise ValueError("n_trees lower bound must be >= 1")
        if self.max_depth[0] < 1:
            raise ValueError("max_depth lower bound must be >= 1")

    def _bounds(self):
        return (self.n_trees, self.max_depth, self.train_proportion)

    def normalize(self, params: ForestParams) -> np.ndarray:
        raw = (params.n_trees, params.max_depth, params.train_proportion)
        if raw[1] is None:
            raise ValueError("cannot normalise an unbounded max_depth")
        out = np.empty(3, dtype=np.float64)
        for d, (value, (lo, hi)) in enumerate(zip(raw, self._bounds())):
            out[d] = 0.0 if hi == lo else (value - lo) / (hi - lo)
        return out

    def denormalize(self, point) -> ForestParams:
        """Map a cube point to parameters, rounding the integer coordinates."""
        pt = np.clip(np.asarray(point, dtype=np.float64), 0.0, 1.0)
        values = [lo + u * (hi - lo) for u, (lo, hi) in zip(pt, self._bounds())]
        n_trees = int(np.rint(values[0]))
        depth = int(np.rint(values[1]))
        n_trees = min(max(n_trees, self.n_trees[0]), self.n_trees[1])
        depth = min(max(depth, self.max_depth[0]), self.max_depth[1])
        p = min(max(values[2], self.train_proportion[0]), self.train_proportion[1])
        return ForestParams(n_trees=n_trees, max_depth=depth, train_proportion=p)


@dataclass(frozen=True)
class Observation:
    """One evaluated setting: cube point, raw parameters and its loss."""

    point: tuple
    params: ForestParams
    value: float
    result: EvaluationResult | None = None

    def __post_init__(self):
        pt = tuple(float(v) for v in self.point)
        if len(pt) != 3 or any(not (0.0 <= v <= 1.0) for v in pt):
            raise ValueError(f"observation point must lie in the unit cube, got {pt}")
        if not math.isfinite(self.value):
            raise ValueError(f"observation value must be finite, got {self.value}")
        object.__setattr__(self, "point", pt)

    def to_json_dict(self) -> dict:
        doc = {
            "point": list(self.point),
            "n_trees": self.params.n_trees,
            "max_depth": self.params.max_depth,
            "train_proportion": self.params.train_proportion,
            "loss": self.value,
        }
        if self.result is not None:
            doc["metrics"] = self.result.to_json_dict()
        return doc


@dataclass(frozen=True)
class SurrogateState:
    """GP posterior over the cube, with the training factorisation cached."""

    x: np.ndarray  # (n, 3) merged unique points
    y: np.ndarray  # (n,) merged raw values
    observations: tuple
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float
    y_std: float
    chol: np.ndarray | None
    alpha: np.ndarray | None

    @classmethod
    def empty(cls) -> "SurrogateState":
        return cls(
            x=np.zeros((0, 3)),
            y=np.zeros(0),
            observations=(),
            lengthscales=np.full(3, _DEFAULT_LENGTHSCALE),
            signal_var=_DEFAULT_SIGNAL_VAR,
            noise_var=_DEFAULT_NOISE_VAR,
            y_mean=0.0,
            y_std=1.0,
            chol=None,
            alpha=None,
        )

    @property
    def n_observations(self) -> int:
        return self.x.shape[0]

    def standardized_values(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_std


def _matern52(x1: np.ndarray, x2: np.ndarray, lengthscales, signal_var: float) -> np.ndarray:
    scaled1 = x1 / lengthscales
    scaled2 = x2 / lengthscales
    sq = np.maximum(
        scaled1[:, None, :] @ np.zeros((0, 0)) if False else
        np.sum((scaled1[:, None, :] - scaled2[None, :, :]) ** 2, axis=-1),
        0.0,
    )
    r = np.sqrt(sq)
    sr = math.sqrt(5.0) * r
    return signal_var * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def _merge_duplicates(points: np.ndarray, values: np.ndarray):
    """Average values observed at identical cube points, keeping first-seen order."""
    seen = {}
    order = []
    for pt, val in zip(map(tuple, points), values):
        if pt not in seen:
            seen[pt] = []
            order.append(pt)
        seen[pt].append(val)
    merged_x = np.array(order, dtype=np.float64).reshape(len(order), -1)
    merged_y = np.array([np.mean(seen[pt]) for pt in order], dtype=np.float64)
    return merged_x, merged_y


def _neg_log_marginal_likelihood(log_theta, x, y_std, fixed_noise):
    theta = np.exp(log_theta)
    ls = theta[:3]
    sv = theta[3]
    nv = fixed_noise if fixed_noise is not None else theta[4]
    n = x.shape[0]
    k = _matern52(x, x, ls, sv) + nv * np.eye(n)
    try:
        chol = linalg.cholesky(k, lower=True)
    except linalg.LinAlgError:
        return 1e25
    alpha = linalg.cho_solve((chol, True), y_std)
    return float(
        0.5 * y_std @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * math.log(2.0 * math.pi)
    )


def _fit_hyperparameters(x: np.ndarray, y_std: np.ndarray, fixed_noise):
    ls_lo, ls_hi = LENGTHSCALE_BOUNDS
    sv_lo, sv_hi = SIGNAL_VAR_BOUNDS
    nv_lo, nv_hi = NOISE_VAR_BOUNDS
    bounds = [(math.log(ls_lo), math.log(ls_hi))] * 3 + [(math.log(sv_lo), math.log(sv_hi))]
    if fixed_noise is None:
        bounds.append((math.log(nv_lo), math.log(nv_hi)))
    starts = [
        (0.3, 0.3, 0.3, 1.0, 1e-2),
        (1.0, 1.0, 1.0, 1.0, 1e-4),
        (0.1, 0.1, 0.1, 3.0, 1e-1),
        (0.7, 0.7, 0.7, 0.3, 1e-3),
    ]
    best_val = np.inf
    best_theta = None
    for start in starts:
        x0 = np.log(start[: len(bounds)])
        res = minimize(
            _neg_log_marginal_likelihood,
            x0,
            args=(x, y_std, fixed_noise),
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 60},
        )
        if res.fun < best_val:
            best_val = res.fun
            best_theta = res.x
    theta = np.exp(best_theta)
    ls = theta[:3]
    sv = float(theta[3])
    nv = float(fixed_noise) if fixed_noise is not None else float(theta[4])
    return ls, sv, nv


def _factorize(x, y_std, ls, sv, nv):
    """Cholesky of K + noise*I, escalating the noise floor if singular."""
    n = x.shape[0]
    k = _matern52(x, x, ls, sv)
    noise = nv
    for _ in range(10):
        try:
            chol = linalg.cholesky(k + noise * np.eye(n), lower=True)
            alpha = linalg.cho_solve((chol, True), y_std)
            return chol, alpha, noise
        except linalg.LinAlgError:
            log.warning("kernel matrix singular at noise %.3g; raising the noise floor", noise)
            noise = max(noise * 10.0, 1e-10)
    raise linalg.LinAlgError("kernel matrix not positive definite even with inflated noise")


def fit_surrogate(observations, fixed_noise: float | None = None) -> SurrogateState:
    """Fit the GP to the observation log.

    Duplicate points are merged by averaging their values. Values are
    standardised to zero mean / unit variance before the kernel
    hyperparameters are fitted. ``fixed_noise`` pins the noise variance
    instead of fitting it (useful for noiseless objectives).
    """
    observations = tuple(observations)
    if not observations:
        raise ValueError("fit_surrogate requires at least one observation")
    points = np.array([obs.point for obs in observations], dtype=np.float64)
    values = np.array([obs.value for obs in observations], dtype=np.float64)
    x, y = _merge_duplicates(points, values)

    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        y_std = 1.0
    y_tilde = (y - y_mean) / y_std

    if x.shape[0] == 1:
        ls = np.full(3, _DEFAULT_LENGTHSCALE)
        sv = _DEFAULT_SIGNAL_VAR
        nv = float(fixed_noise) if fixed_noise is not None else _DEFAULT_NOISE_VAR
    else:
        ls, sv, nv = _fit_hyperparameters(x, y_tilde, fixed_noise)
    chol, alpha, nv = _factorize(x, y_tilde, ls, sv, nv)

    return SurrogateState(
        x=x,
        y=y,
        observations=observations,
        lengthscales=np.asarray(ls, dtype=np.float64),
        signal_var=sv,
        noise_var=nv,
        y_mean=y_mean,
        y_std=y_std,
        chol=chol,
        alpha=alpha,
    )


def _posterior_std(state: SurrogateState, points: np.ndarray):
    """Latent posterior mean/variance on the standardised scale, batched."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if state.n_observations == 0:
        return np.zeros(pts.shape[0]), np.full(pts.shape[0], state.signal_var)
    k_star = _matern52(pts, state.x, state.lengthscales, state.signal_var)
    mean = k_star @ state.alpha
    v = linalg.solve_triangular(state.chol, k_star.T, lower=True)
    var = state.signal_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def posterior(state: SurrogateState, x):
    """Posterior (mean, variance) at a cube point, on the raw value scale."""
    pt = np.asarray(x, dtype=np.float64)
    if pt.ndim != 1 or pt.shape[0] != 3 or pt.min() < 0.0 or pt.max() > 1.0:
        raise ValueError("query point must lie in the unit cube")
    mean, var = _posterior_std(state, pt[None, :])
    return float(state.y_mean + state.y_std * mean[0]), float(state.y_std**2 * var[0])


def _expected_improvement_batch(state, points, best_value):
    mean, var = _posterior_std(state, points)
    sigma = np.sqrt(var)
    improvement = best_value - mean
    ei = np.where(
        sigma > 0.0,
        improvement * norm.cdf(np.divide(improvement, sigma, out=np.zeros_like(sigma), where=sigma > 0.0))
        + sigma * norm.pdf(np.divide(improvement, sigma, out=np.zeros_like(sigma), where=sigma > 0.0)),
        np.maximum(improvement, 0.0),
    )
    return np.maximum(ei, 0.0)


def expected_improvement(state: SurrogateState, x, best_value: float) -> float:
    """Closed-form EI for minimisation at a cube point.

    ``best_value`` is the incumbent (minimum observed) loss on the
    surrogate's standardised scale. With z = (best - mu) / sigma:
    EI = (best - mu) * Phi(z) + sigma * phi(z), and max(best - mu, 0)
    in the noiseless sigma = 0 limit.
    """
    pt = np.asarray(x, dtype=np.float64)
    return float(_expected_improvement_batch(state, pt[None, :], best_value)[0])


def _golden_section(fun, lo, hi, steps):
    """Maximise a scalar function on [lo, hi]; returns the best point probed."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
            if fc > best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
            if fd > best_f:
                best_x, best_f = d, fd
    return best_x, best_f


def suggest_next(state: SurrogateState, space: ParameterSpace, rng) -> ForestParams:
    """Parameters maximising expected improvement.

    2048 scrambled-Sobol cube points are scored, then the best candidate
    is refined coordinate-wise with 20 golden-section steps in a local
    window. Exact EI ties break toward cheaper settings: smaller n_trees,
    then smaller max_depth.
    """
    if state.n_observations == 0:
        raise ValueError("suggest_next requires a fitted surrogate")
    best_std = float(state.standardized_values().min())

    sobol = qmc.Sobol(d=3, scramble=True, seed=rng)
    candidates = sobol.random_base2(m=11)
    ei = _expected_improvement_batch(state, candidates, best_std)

    rounded = [space.denormalize(pt) for pt in candidates]
    n_trees = np.array([p.n_trees for p in rounded])
    depths = np.array([p.max_depth for p in rounded])
    order = np.lexsort((depths, n_trees, -ei))
    best_idx = int(order[0])
    best_point = candidates[best_idx].copy()
    best_ei = float(ei[best_idx])

    window = 0.25
    for dim in range(3):
        lo = max(0.0, best_point[dim] - window)
        hi = min(1.0, best_point[dim] + window)
        if hi <= lo:
            continue

        def along(t, dim=dim):
            probe = best_point.copy()
            probe[dim] = t
            return float(_expected_improvement_batch(state, probe[None, :], best_std)[0])

        x_best, f_best = _golden_section(along, lo, hi, steps=20)
        if f_best > best_ei:
            best_point[dim] = x_best
            best_ei = f_best

    return space.denormalize(best_point)


def _penalty_value(observations) -> float:
    values = [obs.value for obs in observations]
    if not values:
        return 1.0
    spread = float(np.std(values))
    return max(values) + (spread if spread > 0.0 else 1.0)


def _evaluate(evaluator, params, observations):
    try:
        outcome = evaluator(params)
    except Exception:
        log.warning("objective evaluation failed at %s; recording a penalty", params, exc_info=True)
        return _penalty_value(observations), None
    if isinstance(outcome, EvaluationResult):
        value, result = outcome.loss, outcome
    else:
        value, result = float(outcome), None
    if not math.isfinite(value):
        log.warning("objective returned non-finite loss at %s; recording a penalty", params)
        return _penalty_value(observations), None
    return value, result


def optimize(evaluator, space: ParameterSpace, n_init: int = 5, n_iter: int = 20, seed: int = 0):
    """Minimise ``evaluator`` over ``space``.

    ``evaluator`` maps ForestParams to a loss (a float or a full
    EvaluationResult). After ``n_init`` quasi-random evaluations and
    ``n_iter`` surrogate-guided ones, returns (best params, best result
    or None, trace). Best-observed is returned rather than the posterior
    minimiser. A failed evaluation records worst-so-far plus one spread
    unit and the search continues.
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if n_iter < 0:
        raise ValueError("n_iter must be >= 0")
    rng = np.random.default_rng(seed)

    sobol = qmc.Sobol(d=3, scramble=True, seed=rng)
    n_pow2 = 1 << max(0, math.ceil(math.log2(n_init)))
    init_points = sobol.random_base2(m=int(math.log2(n_pow2)))[:n_init]

    observations = []
    for point in init_points:
        params = space.denormalize(point)
        value, result = _evaluate(evaluator, params, observations)
        observations.append(
            Observation(tuple(space.normalize(params)), params, value, result)
        )

    for _ in range(n_iter):
        state = fit_surrogate(observations)
        params = suggest_next(state, space, rng)
        value, result = _evaluate(evaluator, params, observations)
        observations.append(
            Observation(tuple(space.normalize(params)), params, value, result)
        )

    best = min(observations, key=lambda obs: obs.value)
    return best.params, best.result, observations
