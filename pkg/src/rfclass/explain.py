"""Shapley attributions for the boosted ensemble.

`tree_shap` runs the polynomial path recursion per tree; the game it plays
is the cover-weighted conditional expectation of the class margin, where a
feature outside the coalition descends both children weighted by their
cover share. `exact_shapley_oracle` evaluates the same game by subset
enumeration, giving an independent check of the recursion. Attributions are
on margins (pre-softmax), so base value plus contributions equals the class
margin exactly.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .booster import Ensemble, Tree
from .dataset import Database


def _child_fractions(tree: Tree, weights: np.ndarray, node: int) -> tuple[float, float]:
    left, right = int(tree.left[node]), int(tree.right[node])
    total = weights[node]
    if total > 0:
        return weights[left] / total, weights[right] / total
    cover_total = tree.cover[node]
    if cover_total > 0:
        return tree.cover[left] / cover_total, tree.cover[right] / cover_total
    return 0.5, 0.5


def _background_weights(tree: Tree, background: np.ndarray) -> np.ndarray:
    """Per-node counts of background rows routed through the tree."""
    counts = np.zeros(tree.n_nodes())

    def push(node: int, rows: np.ndarray) -> None:
        counts[node] = rows.size
        if tree.is_leaf(node):
            return
        mask = background[rows, int(tree.feature[node])] < tree.threshold[node]
        push(int(tree.left[node]), rows[mask])
        push(int(tree.right[node]), rows[~mask])

    push(0, np.arange(background.shape[0]))
    return counts


def _node_weights(tree: Tree, background: np.ndarray | None) -> np.ndarray:
    if background is None:
        return tree.cover
    return _background_weights(tree, background)


def expected_margin(tree: Tree, x: np.ndarray, coalition: frozenset,
                    weights: np.ndarray) -> float:
    """Conditional expectation of the tree output given the coalition's values.

    Splits on coalition features follow x; other splits average both
    children by their weight share.
    """

    def walk(node: int) -> float:
        if tree.is_leaf(node):
            return float(tree.value[node])
        f = int(tree.feature[node])
        if f in coalition:
            child = tree.left[node] if x[f] < tree.threshold[node] else tree.right[node]
            return walk(int(child))
        fl, fr = _child_fractions(tree, weights, node)
        return fl * walk(int(tree.left[node])) + fr * walk(int(tree.right[node]))

    return walk(0)


def _tree_shap_single(tree: Tree, x, weights, phi) -> None:
    """Accumulate one tree's attributions into phi via the path recursion.

    Each path element tracks (feature, zero_fraction, one_fraction,
    permutation weight); extending, unwinding and re-splitting on repeated
    features follows the standard polynomial-time formulation. `x`,
    `weights` and `phi` may be lists; this is the hot path.
    """
    feature, threshold, left, right, value, cover = tree.as_lists()
    if not isinstance(weights, list):
        weights = weights.tolist()

    def extend(path: list[list[float]], pz: float, po: float, pf: int) -> None:
        depth = len(path)
        path.append([pf, pz, po, 1.0 if depth == 0 else 0.0])
        for i in range(depth - 1, -1, -1):
            path[i + 1][3] += po * path[i][3] * (i + 1) / (depth + 1)
            path[i][3] = pz * path[i][3] * (depth - i) / (depth + 1)

    def unwind(path: list[list[float]], index: int) -> None:
        depth = len(path) - 1
        po = path[index][2]
        pz = path[index][1]
        carry = path[depth][3]
        for i in range(depth - 1, -1, -1):
            if po != 0:
                tmp = path[i][3]
                path[i][3] = carry * (depth + 1) / ((i + 1) * po)
                carry = tmp - path[i][3] * pz * (depth - i) / (depth + 1)
            else:
                path[i][3] = path[i][3] * (depth + 1) / (pz * (depth - i))
        for i in range(index, depth):
            path[i][0] = path[i + 1][0]
            path[i][1] = path[i + 1][1]
            path[i][2] = path[i + 1][2]
        path.pop()

    def unwound_sum(path: list[list[float]], index: int) -> float:
        depth = len(path) - 1
        po = path[index][2]
        pz = path[index][1]
        total = 0.0
        if po != 0:
            carry = path[depth][3]
            for i in range(depth - 1, -1, -1):
                tmp = carry * (depth + 1) / ((i + 1) * po)
                total += tmp
                carry = path[i][3] - tmp * pz * (depth - i) / (depth + 1)
        else:
            for i in range(depth - 1, -1, -1):
                total += path[i][3] * (depth + 1) / (pz * (depth - i))
        return total

    def recurse(node: int, parent_path: list[list[float]],
                pz: float, po: float, pf: int) -> None:
        path = [element.copy() for element in parent_path]
        extend(path, pz, po, pf)
        if feature[node] < 0:
            leaf_value = value[node]
            for i in range(1, len(path)):
                w = unwound_sum(path, i)
                phi[path[i][0]] += w * (path[i][2] - path[i][1]) * leaf_value
            return
        f = feature[node]
        l_child, r_child = left[node], right[node]
        total = weights[node]
        if total > 0:
            fl, fr = weights[l_child] / total, weights[r_child] / total
        elif cover[node] > 0:
            fl, fr = cover[l_child] / cover[node], cover[r_child] / cover[node]
        else:
            fl, fr = 0.5, 0.5
        if x[f] < threshold[node]:
            hot, cold = l_child, r_child
            hot_fraction, cold_fraction = fl, fr
        else:
            hot, cold = r_child, l_child
            hot_fraction, cold_fraction = fr, fl
        incoming_zero, incoming_one = 1.0, 1.0
        found = next((i for i, el in enumerate(path) if el[0] == f), None)
        if found is not None:
            incoming_zero, incoming_one = path[found][1], path[found][2]
            unwind(path, found)
        # a subtree whose zero- and one-fractions both vanish contributes
        # nothing to any coalition; descending would divide by zero in unwind
        if incoming_zero * hot_fraction != 0.0 or incoming_one != 0.0:
            recurse(hot, path, incoming_zero * hot_fraction, incoming_one, f)
        if incoming_zero * cold_fraction != 0.0:
            recurse(cold, path, incoming_zero * cold_fraction, 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)


def tree_shap(
    ensemble: Ensemble,
    x: np.ndarray,
    class_index: int,
    background: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Per-feature attributions and base value for one row's class margin.

    Node weights come from the training covers recorded at fit time unless a
    background matrix is supplied, in which case background row counts take
    their place (nodes no background row reaches fall back to covers). An
    untrained ensemble yields all-zero attributions with a zero base value.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != ensemble.num_features:
        raise ValueError(f"expected {ensemble.num_features} features, got {x.size}")
    if not 0 <= class_index < ensemble.hp.num_class:
        raise ValueError(f"class_index out of range: {class_index}")
    phi = [0.0] * ensemble.num_features
    phi0 = 0.0
    x_list = x.tolist()
    for tree in ensemble.class_trees(class_index):
        weights = _node_weights(tree, background)
        _tree_shap_single(tree, x_list, weights, phi)
        phi0 += expected_margin(tree, x, frozenset(), weights)
    return np.array(phi), phi0


MAX_ORACLE_FEATURES = 12


def exact_shapley_oracle(
    ensemble: Ensemble,
    x: np.ndarray,
    background: np.ndarray | None,
    class_index: int,
) -> np.ndarray:
    """Classic Shapley values of the cover-weighted expectation game.

    Enumerates coalitions per tree over the features that tree actually
    uses (unused features are null players). Refuses ensembles wider than
    MAX_ORACLE_FEATURES.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    m = ensemble.num_features
    if m > MAX_ORACLE_FEATURES:
        raise ValueError(
            f"oracle enumeration limited to {MAX_ORACLE_FEATURES} features, got {m}"
        )
    if x.size != m:
        raise ValueError(f"expected {m} features, got {x.size}")
    phi = np.zeros(m)
    for tree in ensemble.class_trees(class_index):
        weights = _node_weights(tree, background)
        used = sorted(tree.used_features())
        if not used:
            continue
        values: dict[frozenset, float] = {}
        for r in range(len(used) + 1):
            for combo in itertools.combinations(used, r):
                coalition = frozenset(combo)
                values[coalition] = expected_margin(tree, x, coalition, weights)
        n_used = len(used)
        for f in used:
            others = [u for u in used if u != f]
            for r in range(len(others) + 1):
                coeff = (
                    math.factorial(r) * math.factorial(n_used - r - 1)
                    / math.factorial(n_used)
                )
                for combo in itertools.combinations(others, r):
                    coalition = frozenset(combo)
                    phi[f] += coeff * (values[coalition | {f}] - values[coalition])
    return phi


@dataclass(frozen=True)
class Attribution:
    """Attributions for a dataset: phi has shape (rows, classes, features)."""

    phi: np.ndarray
    base: np.ndarray  # (classes,)
    feature_names: tuple[str, ...]


def attribute(
    ensemble: Ensemble,
    X: np.ndarray,
    background: np.ndarray | None = None,
) -> Attribution:
    """tree_shap over every row and class of a matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("attribute expects a non-empty 2-D matrix")
    if X.shape[1] != ensemble.num_features:
        raise ValueError(f"expected {ensemble.num_features} features, got {X.shape[1]}")
    n, k, d = X.shape[0], ensemble.hp.num_class, ensemble.num_features
    phi = np.zeros((n, k, d))
    base = np.zeros(k)
    rows = [row.tolist() for row in X]
    for c in range(k):
        trees = ensemble.class_trees(c)
        weighted = [(tree, _node_weights(tree, background).tolist()) for tree in trees]
        # the empty-coalition expectation never consults the row
        base[c] = sum(
            expected_margin(tree, X[0], frozenset(), np.asarray(w))
            for tree, w in weighted
        )
        for i in range(n):
            acc = [0.0] * d
            for tree, w in weighted:
                _tree_shap_single(tree, rows[i], w, acc)
            phi[i, c] = acc
    return Attribution(phi=phi, base=base, feature_names=ensemble.feature_names)


@dataclass(frozen=True)
class ImportanceSummary:
    feature_names: tuple[str, ...]
    per_class: np.ndarray  # (classes, features) mean |phi|
    overall: np.ndarray    # (features,) summed per-class means
    ranking: tuple[str, ...]  # feature names, most important first

    def to_csv(self) -> str:
        """Rows are features (most important first); columns per class plus overall."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        k = self.per_class.shape[0]
        writer.writerow(["feature", *[f"class_{c}" for c in range(k)], "overall"])
        order = np.argsort(-self.overall, kind="stable")
        for j in order:
            writer.writerow([
                self.feature_names[j],
                *[f"{self.per_class[c, j]:.6g}" for c in range(k)],
                f"{self.overall[j]:.6g}",
            ])
        return buf.getvalue()


def aggregate_importance(attribution: Attribution) -> ImportanceSummary:
    """Mean absolute attribution per (class, feature); overall rank by row sum."""
    if attribution.phi.shape[0] == 0:
        raise ValueError("cannot aggregate an empty attribution set")
    per_class = np.abs(attribution.phi).mean(axis=0)
    overall = per_class.sum(axis=0)
    order = np.argsort(-overall, kind="stable")
    ranking = tuple(attribution.feature_names[j] for j in order)
    return ImportanceSummary(
        feature_names=attribution.feature_names,
        per_class=per_class,
        overall=overall,
        ranking=ranking,
    )


def importance_from_database(
    ensemble: Ensemble,
    db: Database,
    sample: int | None = None,
    seed: int = 0,
) -> ImportanceSummary:
    """Importance summary for a (complete) database, optionally subsampled."""
    X = db.feature_matrix()
    if np.isnan(X).any():
        raise ValueError("database must be complete before attribution")
    if sample is not None and sample < X.shape[0]:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(X.shape[0], size=sample, replace=False))]
    return aggregate_importance(attribute(ensemble, X))
