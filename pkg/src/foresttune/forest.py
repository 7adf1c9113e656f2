"""Compact deterministic random-forest classifier.

Each tree is a Gini CART grown on a bootstrap resample of the training
rows, with a fresh feature subset drawn per node. All randomness flows
from splitmix64 streams derived from (seed, tree_index), so retraining
with the same seed reproduces the forest bit for bit and tree order is
irrelevant: results are identical to sequential execution no matter how
training would be scheduled.

The hot loops (bootstrap, tree growth, prediction) are numba-compiled.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import EncodedDataset
from .seeding import MASK64

__all__ = [
    "ForestParams",
    "DecisionTree",
    "RandomForest",
    "train_forest",
    "predict_proba",
    "training_cost",
    "bootstrap_indices",
    "max_leaf_depth",
    "forest_to_json",
    "forest_from_json",
    "FOREST_FORMAT_VERSION",
]

FOREST_FORMAT_VERSION = 1

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class ForestParams:
    """The tuned triple (n_trees, max_depth, train_proportion) plus fixed settings.

    max_depth=None means unbounded, which in practice caps at the number
    of training rows. features_per_split=None means floor(sqrt(F)).
    train_proportion is applied upstream by the evaluation loop, not here.
    """

    n_trees: int
    max_depth: int | None = None
    train_proportion: float = 1.0
    features_per_split: int | None = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 when bounded")
        if not (0.0 < self.train_proportion <= 1.0):
            raise ValueError("train_proportion must be in (0, 1]")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class DecisionTree:
    """Flat node arrays; feature[i] == -1 marks node i as a leaf.

    leaf_value holds the fraction of positive training rows at each leaf.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


@dataclass(frozen=True)
class RandomForest:
    trees: tuple
    params: ForestParams
    seed: int
    n_features: int


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


@njit(cache=True)
def _stream_for(seed, index):
    # counter-based stream derivation: mix(mix(seed + GOLDEN) + index * GOLDEN)
    return _mix64(_mix64(seed + _GOLDEN) + _U64(index) * _GOLDEN)


@njit(cache=True)
def _rand_below(state, n):
    # unbiased bounded draw; rejection keeps the modulo exact
    n64 = _U64(n)
    threshold = (_U64(0) - n64) % n64
    while True:
        state = state + _GOLDEN
        value = _mix64(state)
        if value >= threshold:
            return state, value % n64


@njit(cache=True)
def _bootstrap(state, n):
    out = np.empty(n, np.int64)
    for i in range(n):
        state, v = _rand_below(state, n)
        out[i] = np.int64(v)
    return state, out


@njit(cache=True)
def _grow_tree(X, y, sample, max_depth, k_features, min_leaf, state):
    """Grow one CART tree on X[sample]; returns flat node arrays.

    Nodes are visited depth-first, left child first, so the RNG stream
    consumption order is fixed. Split search scans each sampled feature
    in ascending index order with thresholds at midpoints of consecutive
    distinct values; the first strictly-best (impurity, feature,
    threshold) candidate wins, which breaks exact ties toward the lowest
    feature index then the lowest threshold.
    """
    n = sample.shape[0]
    n_feat = X.shape[1]
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    leaf_value = np.zeros(max_nodes, np.float64)
    node_count = 1

    idx = sample.copy()
    stack = np.empty((max_nodes, 4), np.int64)  # node, start, end, depth
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    feat_scratch = np.empty(n_feat, np.int64)
    tmp = np.empty(n, np.int64)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]

        if (
            pos == 0
            or pos == m
            or depth >= max_depth
            or m < 2 * min_leaf
            or n_feat == 0
        ):
            leaf_value[node] = pos / m
            continue

        # sample k features without replacement (partial Fisher-Yates),
        # then visit them in ascending index order
        for f in range(n_feat):
            feat_scratch[f] = f
        for i in range(k_features):
            state, j = _rand_below(state, n_feat - i)
            jj = i + np.int64(j)
            feat_scratch[i], feat_scratch[jj] = feat_scratch[jj], feat_scratch[i]
        chosen = np.sort(feat_scratch[:k_features])

        best_score = np.inf  # weighted child impurity, lower is better
        best_feature = -1
        best_threshold = 0.0
        xs = np.empty(m, np.float64)
        ys = np.empty(m, np.int64)
        for c in range(k_features):
            f = chosen[c]
            for i in range(m):
                xs[i] = X[idx[start + i], f]
            order = np.argsort(xs)
            cum_pos = 0
            for i in range(m):
                ys[i] = y[idx[start + order[i]]]
            for i in range(m - 1):
                cum_pos += ys[i]
                lo = xs[order[i]]
                hi = xs[order[i + 1]]
                if lo == hi:
                    continue
                m_left = i + 1
                m_right = m - m_left
                if m_left < min_leaf or m_right < min_leaf:
                    continue
                pos_left = cum_pos
                pos_right = pos - cum_pos
                # binary Gini is 2*p*q; weighted sum over children, /2 dropped
                score = (
                    pos_left * (m_left - pos_left) / m_left
                    + pos_right * (m_right - pos_right) / m_right
                )
                thr = 0.5 * (lo + hi)
                if thr >= hi:  # adjacent floats can round the midpoint up
                    thr = lo
                if score < best_score or (
                    score == best_score
                    and (f < best_feature or (f == best_feature and thr < best_threshold))
                ):
                    best_score = score
                    best_feature = f
                    best_threshold = thr

        if best_feature < 0:
            # all sampled features constant within the node
            leaf_value[node] = pos / m
            continue

        # stable in-place partition of idx[start:end]
        n_left = 0
        n_right = 0
        for i in range(start, end):
            row = idx[i]
            if X[row, best_feature] <= best_threshold:
                idx[start + n_left] = row
                n_left += 1
            else:
                tmp[n_right] = row
                n_right += 1
        for i in range(n_right):
            idx[start + n_left + i] = tmp[i]

        feature[node] = np.int32(best_feature)
        threshold[node] = best_threshold
        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        left[node] = np.int32(left_id)
        right[node] = np.int32(right_id)
        stack[top, 0] = right_id
        stack[top, 1] = start + n_left
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = start + n_left
        stack[top, 3] = depth + 1
        top += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        leaf_value[:node_count].copy(),
    )


@njit(cache=True)
def _train_tree(X, y, seed, tree_index, max_depth, k_features, min_leaf):
    state = _stream_for(seed, tree_index)
    state, sample = _bootstrap(state, X.shape[0])
    return _grow_tree(X, y, sample, max_depth, k_features, min_leaf, state)


@njit(cache=True)
def _predict_tree(feature, threshold, left, right, leaf_value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += leaf_value[node]


def bootstrap_indices(seed: int, tree_index: int, n_rows: int) -> np.ndarray:
    """The bootstrap resample tree ``tree_index`` trains on, for inspection."""
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    state = _stream_for(_U64(seed & MASK64), tree_index)
    _, sample = _bootstrap(state, n_rows)
    return sample


def _effective_depth(params: ForestParams, n_rows: int) -> int:
    return n_rows if params.max_depth is None else params.max_depth


def _effective_features(params: ForestParams, n_features: int) -> int:
    if n_features == 0:
        return 0
    if params.features_per_split is None:
        return max(1, math.floor(math.sqrt(n_features)))
    return min(params.features_per_split, n_features)


def train_forest(train: EncodedDataset, params: ForestParams, seed: int) -> RandomForest:
    """Train ``params.n_trees`` CARTs on independent bootstraps of ``train``.

    Deterministic: the same (train, params, seed) always produces an
    identical forest.
    """
    n = train.n_rows
    if n == 0:
        raise ValueError("cannot train on empty data")
    X = np.ascontiguousarray(train.features, dtype=np.float64)
    y = np.ascontiguousarray(train.labels, dtype=np.int64)
    depth = _effective_depth(params, n)
    k = _effective_features(params, train.n_features)
    seed64 = _U64(seed & MASK64)
    trees = []
    for t in range(params.n_trees):
        arrays = _train_tree(X, y, seed64, t, depth, k, params.min_samples_leaf)
        trees.append(DecisionTree(*arrays))
    return RandomForest(trees=tuple(trees), params=params, seed=seed & MASK64, n_features=train.n_features)


def predict_proba(forest: RandomForest, features) -> np.ndarray:
    """Positive-class probability per row: mean of the trees' leaf values."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if X.shape[1] != forest.n_features:
        raise ValueError(
            f"feature count mismatch: forest trained on {forest.n_features}, got {X.shape[1]}"
        )
    out = np.zeros(X.shape[0], dtype=np.float64)
    for tree in forest.trees:
        _predict_tree(tree.feature, tree.threshold, tree.left, tree.right, tree.leaf_value, X, out)
    out /= len(forest.trees)
    return np.clip(out, 0.0, 1.0)


def training_cost(train_size: int, params: ForestParams) -> float:
    """Analytic training-cost model in arbitrary units.

    cost = n_trees * train_size * log2(train_size + 1)
           * min(effective_depth, log2(train_size + 1))

    Linear in the tree count; depth saturates once it exceeds the
    log-scale of the data. Used as the runtime proxy in deterministic
    cost mode so tests never depend on machine speed.
    """
    if train_size < 1:
        raise ValueError("train_size must be >= 1")
    log_size = math.log2(train_size + 1)
    depth = float(_effective_depth(params, train_size))
    return params.n_trees * train_size * log_size * min(depth, log_size)


def max_leaf_depth(tree: DecisionTree) -> int:
    """Longest root-to-leaf path, in edges."""
    best = 0
    stack = [(0, 0)]
    while stack:
        node, depth = stack.pop()
        if tree.feature[node] < 0:
            best = max(best, depth)
        else:
            stack.append((int(tree.left[node]), depth + 1))
            stack.append((int(tree.right[node]), depth + 1))
    return best


def forest_to_json(forest: RandomForest) -> dict:
    """JSON-serialisable document for caching trained forests."""
    return {
        "format_version": FOREST_FORMAT_VERSION,
        "seed": int(forest.seed),
        "n_features": int(forest.n_features),
        "params": {
            "n_trees": forest.params.n_trees,
            "max_depth": forest.params.max_depth,
            "train_proportion": forest.params.train_proportion,
            "features_per_split": forest.params.features_per_split,
            "min_samples_leaf": forest.params.min_samples_leaf,
        },
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "leaf_value": tree.leaf_value.tolist(),
            }
            for tree in forest.trees
        ],
    }


def forest_from_json(doc: dict) -> RandomForest:
    version = doc.get("format_version")
    if version != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format_version: {version!r}")
    params = ForestParams(**doc["params"])
    trees = []
    for rec in doc["trees"]:
        tree = DecisionTree(
            feature=np.asarray(rec["feature"], dtype=np.int32),
            threshold=np.asarray(rec["threshold"], dtype=np.float64),
            left=np.asarray(rec["left"], dtype=np.int32),
            right=np.asarray(rec["right"], dtype=np.int32),
            leaf_value=np.asarray(rec["leaf_value"], dtype=np.float64),
        )
        n = tree.n_nodes
        if not (
            tree.threshold.shape[0] == n
            and tree.left.shape[0] == n
            and tree.right.shape[0] == n
            and tree.leaf_value.shape[0] == n
        ):
            raise ValueError("inconsistent tree arrays in forest document")
        trees.append(tree)
    if len(trees) != params.n_trees:
        raise ValueError("tree count does not match params.n_trees")
    return RandomForest(
        trees=tuple(trees),
        params=params,
        seed=int(doc["seed"]),
        n_features=int(doc["n_features"]),
    )
