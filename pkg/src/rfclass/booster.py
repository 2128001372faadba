"""Multiclass softmax gradient-boosted trees with exact greedy split search.

One regression tree per class per round. Splits maximize the second-order
gain with L2 smoothing and a minimum-gain penalty; leaf values apply L1
soft-thresholding and an optional absolute clip before learning-rate
scaling. Trees record per-node hessian covers for attribution and audit.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError

PROB_CLIP = 1e-15


@dataclass(frozen=True)
class Hyperparameters:
    max_depth: int = 4
    min_child_weight: float = 2.0
    learning_rate: float = 0.05
    subsample: float = 0.9
    colsample_bytree: float = 1.0
    colsample_bylevel: float = 1.0
    alpha: float = 0.3
    lambda_: float = 0.03
    gamma: float = 0.01
    max_delta_step: float = 0.2
    num_class: int = 10
    num_rounds: int = 200
    objective: str = "multi:softmax"
    eval_metric: str = "mlogloss"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample_bytree <= 1 \
                or not 0 < self.colsample_bylevel <= 1:
            raise ValueError("subsample and colsample fractions must lie in (0, 1]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        for name in ("alpha", "lambda_", "gamma", "max_delta_step", "min_child_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.num_class < 2:
            raise ValueError("num_class must be at least 2")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be non-negative")

    def to_dict(self) -> dict:
        out = {
            "max_depth": self.max_depth,
            "min_child_weight": self.min_child_weight,
            "learning_rate": self.learning_rate,
            "subsample": self.subsample,
            "colsample_bytree": self.colsample_bytree,
            "colsample_bylevel": self.colsample_bylevel,
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "gamma": self.gamma,
            "max_delta_step": self.max_delta_step,
            "num_class": self.num_class,
            "num_rounds": self.num_rounds,
            "objective": self.objective,
            "eval_metric": self.eval_metric,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparameters":
        data = dict(data)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        return cls(**data)


#: Tuned settings per database combination (round count is a default; the
#: published set does not fix one).
COMBO_PRESETS = {
    "TC": Hyperparameters(max_depth=2, min_child_weight=6, learning_rate=0.1,
                          subsample=0.9, colsample_bytree=0.9, colsample_bylevel=0.9,
                          alpha=0.2, lambda_=0.01, gamma=0.01, max_delta_step=0.1),
    "TA": Hyperparameters(max_depth=4, min_child_weight=3, learning_rate=0.05,
                          subsample=0.8, colsample_bytree=1.0, colsample_bylevel=1.0,
                          alpha=0.8, lambda_=0.06, gamma=0.01, max_delta_step=0.1),
    "CA": Hyperparameters(max_depth=4, min_child_weight=2, learning_rate=0.05,
                          subsample=0.9, colsample_bytree=1.0, colsample_bylevel=1.0,
                          alpha=0.3, lambda_=0.04, gamma=0.01, max_delta_step=0.2),
    "TCA": Hyperparameters(max_depth=5, min_child_weight=2, learning_rate=0.05,
                           subsample=0.9, colsample_bytree=1.0, colsample_bylevel=1.0,
                           alpha=0.9, lambda_=0.03, gamma=0.01, max_delta_step=0.2),
}


@dataclass
class Tree:
    """One regression tree stored as parallel node arrays (preorder).

    Internal nodes carry (feature, threshold, gain); `value < threshold`
    routes left. Leaves carry the margin increment in `value` and have
    feature == -1. `cover` is the training hessian mass at each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    def n_nodes(self) -> int:
        return self.feature.size

    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def max_node_depth(self) -> int:
        depth = {0: 0}
        best = 0
        for node in range(self.n_nodes()):
            d = depth[node]
            if not self.is_leaf(node):
                depth[int(self.left[node])] = d + 1
                depth[int(self.right[node])] = d + 1
                best = max(best, d + 1)
        return best

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def as_lists(self) -> tuple[list, list, list, list, list, list]:
        """Node arrays as plain lists (cached); the attribution hot path
        avoids numpy scalar indexing."""
        cached = getattr(self, "_lists", None)
        if cached is None:
            cached = (self.feature.tolist(), self.threshold.tolist(),
                      self.left.tolist(), self.right.tolist(),
                      self.value.tolist(), self.cover.tolist())
            self._lists = cached
        return cached

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        leaf = self.feature < 0
        safe_feature = np.maximum(self.feature, 0)
        for _ in range(max(self.max_node_depth(), 0)):
            col = X[np.arange(n), safe_feature[idx]]
            step = np.where(col < self.threshold[idx], self.left[idx], self.right[idx])
            idx = np.where(leaf[idx], idx, step)
        return self.value[idx]

    def _node_dict(self, node: int) -> dict:
        if self.is_leaf(node):
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "gain": float(self.gain[node]),
            "cover": float(self.cover[node]),
            "left": self._node_dict(int(self.left[node])),
            "right": self._node_dict(int(self.right[node])),
        }

    def to_dict(self) -> dict:
        return self._node_dict(0)

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        builder = _TreeBuilder()

        def walk(node: dict) -> int:
            if "leaf" in node:
                return builder.add_leaf(node["leaf"], node["cover"])
            idx = builder.add_internal(node["feature"], node["threshold"],
                                       node["gain"], node["cover"])
            builder.attach(idx, walk(node["left"]), walk(node["right"]))
            return idx

        walk(root)
        return builder.build()


class _TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.cover: list[float] = []
        self.gain: list[float] = []

    def add_leaf(self, value: float, cover: float) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.cover.append(float(cover))
        self.gain.append(math.nan)
        return idx

    def add_internal(self, feature: int, threshold: float, gain: float, cover: float) -> int:
        idx = len(self.feature)
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.cover.append(float(cover))
        self.gain.append(float(gain))
        return idx

    def attach(self, parent: int, left: int, right: int) -> None:
        self.left[parent] = left
        self.right[parent] = right

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=float),
            cover=np.array(self.cover, dtype=float),
            gain=np.array(self.gain, dtype=float),
        )


def softmax_margins(margins: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-margin subtraction."""
    margins = np.asarray(margins, dtype=float)
    shifted = margins - margins.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def mlogloss(proba: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log probability of the true class, with clipped probabilities."""
    proba = np.asarray(proba, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if proba.ndim != 2 or labels.ndim != 1 or proba.shape[0] != labels.size:
        raise ValueError("proba must be (n, k) aligned with n labels")
    if labels.size == 0:
        raise ValueError("mlogloss of an empty sample is undefined")
    clipped = np.clip(proba, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(np.log(clipped[np.arange(labels.size), labels])))


def leaf_weight(G: float, H: float, hp: Hyperparameters) -> float:
    """Optimal leaf value: L1 soft-threshold on G, L2-smoothed, then clipped.

    The absolute clip to max_delta_step (when positive) applies before any
    learning-rate scaling.
    """
    if H < 0:
        raise ValueError("hessian sum must be non-negative")
    magnitude = max(abs(G) - hp.alpha, 0.0)
    w = -math.copysign(magnitude, G) / (H + hp.lambda_)
    if hp.max_delta_step > 0:
        w = max(-hp.max_delta_step, min(hp.max_delta_step, w))
    return w


def _best_split_over_columns(X, g, h, rows, cols, hp):
    """Best (feature, threshold, gain) over candidate columns, or None.

    Candidates are midpoints between consecutive distinct sorted values
    (degenerate midpoints that collapse onto the lower value are skipped).
    A split qualifies when both children carry at least min_child_weight of
    hessian mass and the gamma-penalized gain is non-negative. Ties break
    toward the smallest threshold within a column and the earliest column
    across columns.
    """
    n = rows.size
    if n < 2 or len(cols) == 0:
        return None
    Xn = X[np.ix_(rows, cols)]
    gn = g[rows]
    hn = h[rows]
    order = np.argsort(Xn, axis=0, kind="stable")
    Xs = np.take_along_axis(Xn, order, axis=0)
    GL = np.cumsum(gn[order], axis=0)[:-1]
    HL = np.cumsum(hn[order], axis=0)[:-1]
    G = float(gn.sum())
    H = float(hn.sum())
    GR = G - GL
    HR = H - HL
    mid = 0.5 * (Xs[:-1] + Xs[1:])
    lam = hp.lambda_
    with np.errstate(divide="ignore", invalid="ignore"):
        parent = G * G / (H + lam) if H + lam > 0 else math.inf
        gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - hp.gamma
    valid = (
        (Xs[1:] > Xs[:-1])
        & (mid > Xs[:-1])
        & (HL >= hp.min_child_weight)
        & (HR >= hp.min_child_weight)
        & np.isfinite(gain)
        & (gain >= 0.0)
    )
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    best = None
    for c in range(len(cols)):
        pos = int(np.argmax(gain[:, c]))  # first max: smallest threshold
        score = gain[pos, c]
        if score == -np.inf:
            continue
        if best is None or score > best[2]:
            best = (int(cols[c]), float(mid[pos, c]), float(score))
    return best


def find_best_split(g: np.ndarray, h: np.ndarray, column: np.ndarray, hp: Hyperparameters):
    """Best (threshold, gain) for one column, or None when no split qualifies.

    The returned gain is the gamma-penalized split gain (the quantity the
    trainer maximizes).
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    column = np.asarray(column, dtype=float)
    if not g.size == h.size == column.size:
        raise ValueError("g, h and column must be aligned")
    X = column.reshape(-1, 1)
    found = _best_split_over_columns(X, g, h, np.arange(column.size), [0], hp)
    if found is None:
        return None
    _, threshold, gain = found
    return threshold, gain


def _grow_tree(X, g, h, rows, hp, cols_by_depth) -> Tree:
    builder = _TreeBuilder()

    def grow(row_idx: np.ndarray, depth: int) -> int:
        G = float(g[row_idx].sum())
        H = float(h[row_idx].sum())
        found = None
        if depth < hp.max_depth and row_idx.size >= 2:
            found = _best_split_over_columns(X, g, h, row_idx, cols_by_depth[depth], hp)
        if found is None:
            return builder.add_leaf(hp.learning_rate * leaf_weight(G, H, hp), H)
        col, threshold, gain = found
        node = builder.add_internal(col, threshold, gain, H)
        mask = X[row_idx, col] < threshold
        left = grow(row_idx[mask], depth + 1)
        right = grow(row_idx[~mask], depth + 1)
        builder.attach(node, left, right)
        return node

    grow(rows, 0)
    return builder.build()


@dataclass
class Ensemble:
    """Trained forest: trees[round][class], zero base margin, plus the
    settings and feature names needed at inference."""

    hp: Hyperparameters
    num_features: int
    feature_names: tuple[str, ...]
    trees: list[list[Tree]] = field(default_factory=list)
    training_loss: list[float] = field(default_factory=list)
    best_round: int | None = None

    @property
    def num_rounds_trained(self) -> int:
        return len(self.trees)

    def class_trees(self, class_index: int) -> list[Tree]:
        return [round_trees[class_index] for round_trees in self.trees]

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = self._as_matrix(X)
        out = np.zeros((X.shape[0], self.hp.num_class))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                out[:, k] += tree.predict_margin(X)
        return out

    def _as_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.num_features:
            raise ValueError(
                f"expected {self.num_features} features, got shape {X.shape}"
            )
        return X


def predict_proba(ensemble: Ensemble, X) -> np.ndarray:
    """Per-class probabilities; a single row yields a length-num_class vector."""
    single = np.asarray(X).ndim == 1
    proba = softmax_margins(ensemble.margins(X))
    return proba[0] if single else proba


def predict_class(ensemble: Ensemble, X) -> np.ndarray | int:
    """Most probable class; ties resolve to the lowest index."""
    single = np.asarray(X).ndim == 1
    pred = np.argmax(softmax_margins(ensemble.margins(X)), axis=1)
    return int(pred[0]) if single else pred


def train(
    X: np.ndarray,
    y: np.ndarray,
    hp: Hyperparameters,
    seed: int,
    *,
    feature_names: tuple[str, ...] | None = None,
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
    early_stopping_patience: int | None = None,
) -> Ensemble:
    """Train a softmax-objective boosted ensemble.

    Each round computes class probabilities from the accumulated margins,
    then grows one tree per class on that round's gradients/hessians. Row
    subsampling is per-tree Bernoulli; column subsets are drawn per tree and
    re-drawn per depth. With an eval_set and a patience, training stops once
    validation mlogloss has not improved for `patience` rounds and the
    ensemble is truncated to the best round.

    training_loss holds the training mlogloss before each round plus a
    final entry, so it has num_rounds + 1 values.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training matrix must be two-dimensional and non-empty")
    if y.shape != (X.shape[0],):
        raise TrainingError("labels must align with the training matrix rows")
    if not np.isfinite(X).all():
        raise TrainingError("training matrix contains non-finite values")
    if y.min() < 0 or y.max() >= hp.num_class:
        raise TrainingError(
            f"labels must lie in [0, {hp.num_class}), found [{y.min()}, {y.max()}]"
        )
    if feature_names is not None and len(feature_names) != X.shape[1]:
        raise TrainingError("feature_names must match the matrix width")

    n, d = X.shape
    k_classes = hp.num_class
    names = tuple(feature_names) if feature_names else tuple(f"f{j}" for j in range(d))
    rng = np.random.default_rng(seed)
    onehot = np.zeros((n, k_classes))
    onehot[np.arange(n), y] = 1.0

    ensemble = Ensemble(hp=hp, num_features=d, feature_names=names)
    margins = np.zeros((n, k_classes))
    best_eval = math.inf
    best_round = 0
    rounds_since_best = 0

    for _ in range(hp.num_rounds):
        proba = softmax_margins(margins)
        ensemble.training_loss.append(mlogloss(proba, y))
        round_trees = []
        for k in range(k_classes):
            g = proba[:, k] - onehot[:, k]
            h = proba[:, k] * (1.0 - proba[:, k])
            rows = _subsample_rows(rng, n, hp.subsample)
            cols_by_depth = _sample_columns(rng, d, hp)
            tree = _grow_tree(X, g, h, rows, hp, cols_by_depth)
            margins[:, k] += tree.predict_margin(X)
            round_trees.append(tree)
        ensemble.trees.append(round_trees)

        if eval_set is not None and early_stopping_patience is not None:
            eval_loss = mlogloss(
                softmax_margins(ensemble.margins(eval_set[0])), eval_set[1]
            )
            if eval_loss < best_eval:
                best_eval = eval_loss
                best_round = len(ensemble.trees)
                rounds_since_best = 0
            else:
                rounds_since_best += 1
                if rounds_since_best >= early_stopping_patience:
                    break

    if eval_set is not None and early_stopping_patience is not None and ensemble.trees:
        del ensemble.trees[best_round:]
        del ensemble.training_loss[best_round:]
        ensemble.best_round = best_round
        margins = ensemble.margins(X)

    ensemble.training_loss.append(mlogloss(softmax_margins(margins), y))
    return ensemble


def _subsample_rows(rng, n: int, rate: float) -> np.ndarray:
    if rate >= 1.0:
        return np.arange(n)
    rows = np.flatnonzero(rng.random(n) < rate)
    return rows if rows.size else np.arange(n)


def _sample_columns(rng, d: int, hp: Hyperparameters) -> list[np.ndarray]:
    if hp.colsample_bytree < 1.0:
        m = max(1, math.ceil(hp.colsample_bytree * d))
        tree_cols = np.sort(rng.choice(d, size=m, replace=False))
    else:
        tree_cols = np.arange(d)
    cols_by_depth = []
    for _ in range(hp.max_depth):
        if hp.colsample_bylevel < 1.0:
            m = max(1, math.ceil(hp.colsample_bylevel * tree_cols.size))
            cols_by_depth.append(np.sort(rng.choice(tree_cols, size=m, replace=False)))
        else:
            cols_by_depth.append(tree_cols)
    return cols_by_depth


def audit_ensemble(ensemble: Ensemble) -> None:
    """Walk every tree verifying the structural training constraints.

    Raises TrainingError on a violated depth bound, an under-covered child
    of a realized split, a negative penalized gain, or a leaf value beyond
    the configured clip.
    """
    hp = ensemble.hp
    for round_trees in ensemble.trees:
        for tree in round_trees:
            if tree.max_node_depth() > hp.max_depth:
                raise TrainingError("tree exceeds max_depth")
            for node in range(tree.n_nodes()):
                if tree.is_leaf(node):
                    if hp.max_delta_step > 0:
                        limit = hp.learning_rate * hp.max_delta_step
                        if abs(tree.value[node]) > limit + 1e-12:
                            raise TrainingError("leaf value exceeds max_delta_step clip")
                    continue
                if tree.gain[node] < 0:
                    raise TrainingError("realized split has negative penalized gain")
                for child in (int(tree.left[node]), int(tree.right[node])):
                    if tree.cover[child] < hp.min_child_weight - 1e-12:
                        raise TrainingError("child cover below min_child_weight")


SERIALIZATION_FORMAT = "rfclass.ensemble"
SERIALIZATION_VERSION = 1


def serialize_ensemble(ensemble: Ensemble) -> str:
    """Versioned JSON document; floats round-trip bit-exactly."""
    doc = {
        "format": SERIALIZATION_FORMAT,
        "version": SERIALIZATION_VERSION,
        "base_margin": 0.0,
        "num_features": ensemble.num_features,
        "feature_names": list(ensemble.feature_names),
        "hyperparameters": ensemble.hp.to_dict(),
        "training_loss": ensemble.training_loss,
        "best_round": ensemble.best_round,
        "trees": [[tree.to_dict() for tree in round_trees] for round_trees in ensemble.trees],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def load_ensemble(text: str) -> Ensemble:
    doc = json.loads(text)
    if doc.get("format") != SERIALIZATION_FORMAT:
        raise ValueError("not an rfclass ensemble document")
    if doc.get("version") != SERIALIZATION_VERSION:
        raise ValueError(f"unsupported ensemble version {doc.get('version')}")
    ensemble = Ensemble(
        hp=Hyperparameters.from_dict(doc["hyperparameters"]),
        num_features=int(doc["num_features"]),
        feature_names=tuple(doc["feature_names"]),
        trees=[[Tree.from_dict(node) for node in round_trees] for round_trees in doc["trees"]],
        training_loss=list(doc["training_loss"]),
        best_round=doc.get("best_round"),
    )
    return ensemble
