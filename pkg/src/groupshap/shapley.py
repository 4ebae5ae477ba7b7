"""Group Shapley attribution for tree ensembles.

Two routes to the same quantity: an exact coalition enumeration that treats
each feature group as one player, and a fast per-node walk along each
observation's decision path. Both share one value function: path-dependent
cover-weighted marginalization, so the exact oracle and the fast method are
directly comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoalitionBudgetExceeded, GroupingError, ShapeError
from .tree import LEAF, Tree, TreeEnsemble

EXACT_GROUP_LIMIT = 20


@dataclass
class FeatureGrouping:
    """Ordered partition of the feature indices into named groups."""

    groups: list[tuple[str, list[int]]]
    n_features: int

    def __post_init__(self):
        if not self.groups:
            raise GroupingError("need at least one group")
        names = [name for name, _ in self.groups]
        if len(set(names)) != len(names):
            raise GroupingError("group names must be unique")
        seen: set[int] = set()
        for name, idx in self.groups:
            if not idx:
                raise GroupingError(f"group {name!r} is empty")
            for i in idx:
                if not 0 <= i < self.n_features:
                    raise GroupingError(
                        f"group {name!r}: feature index {i} outside [0, {self.n_features})"
                    )
                if i in seen:
                    raise GroupingError(f"feature {i} appears in more than one group")
                seen.add(i)
        if len(seen) != self.n_features:
            missing = sorted(set(range(self.n_features)) - seen)
            raise GroupingError(f"features not covered by any group: {missing}")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.groups]

    def feature_to_group(self) -> np.ndarray:
        """Map feature index -> group index."""
        out = np.empty(self.n_features, dtype=np.int64)
        for j, (_, idx) in enumerate(self.groups):
            out[list(idx)] = j
        return out

    @classmethod
    def singletons(cls, n_features: int, names: list[str] | None = None):
        if names is None:
            names = [f"f{i}" for i in range(n_features)]
        return cls([(names[i], [i]) for i in range(n_features)], n_features)


def read_grouping_file(path, feature_names: list[str]) -> FeatureGrouping:
    """Parse a `group: feat, feat, ...` text file against known feature names.

    Blank lines and `#` comments are ignored. Overlaps and omissions are
    rejected by the FeatureGrouping invariants.
    """
    index = {name: i for i, name in enumerate(feature_names)}
    groups: list[tuple[str, list[int]]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise GroupingError(f"{path}:{lineno}: expected 'name: feat, feat'")
            name, rest = line.split(":", 1)
            name = name.strip()
            feats = [f.strip() for f in rest.split(",") if f.strip()]
            if not feats:
                raise GroupingError(f"{path}:{lineno}: group {name!r} lists no features")
            idx = []
            for f in feats:
                if f not in index:
                    raise GroupingError(
                        f"{path}:{lineno}: unknown feature {f!r} in group {name!r}"
                    )
                idx.append(index[f])
            groups.append((name, idx))
    return FeatureGrouping(groups, n_features=len(feature_names))


def write_grouping_file(grouping: FeatureGrouping, feature_names: list[str], path) -> None:
    with open(path, "w") as fh:
        for name, idx in grouping.groups:
            fh.write(f"{name}: {', '.join(feature_names[i] for i in idx)}\n")


@dataclass
class ShapMatrix:
    """Per-observation, per-group attribution values plus the base value."""

    values: np.ndarray  # S x K
    base_values: np.ndarray  # length S
    group_names: list[str]

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.base_values = np.asarray(self.base_values, dtype=float)
        if self.values.shape[0] != self.base_values.shape[0]:
            raise ShapeError("values and base_values disagree on observation count")
        if self.values.shape[1] != len(self.group_names):
            raise ShapeError("values and group_names disagree on group count")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["obs_id", "base"] + list(self.group_names))
            for s in range(self.n_obs):
                w.writerow(
                    [s, repr(float(self.base_values[s]))]
                    + [repr(float(v)) for v in self.values[s]]
                )


def read_shap_csv(path) -> ShapMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[:2] != ["obs_id", "base"]:
            raise ShapeError(f"{path}: expected header 'obs_id, base, <groups...>'")
        names = header[2:]
        base, rows = [], []
        for row in reader:
            if not row:
                continue
            base.append(float(row[1]))
            rows.append([float(v) for v in row[2:]])
    if not rows:
        raise ShapeError(f"{path}: no data rows")
    return ShapMatrix(np.asarray(rows), np.asarray(base), names)


@dataclass
class GroupWeights:
    """Nonnegative per-feature weights summing to one within each group."""

    weights: np.ndarray  # length n_features
    grouping: FeatureGrouping = field(repr=False)


# --------------------------------------------------------------------------
# value function and exact enumeration


def _marginal_tree_value(t: Tree, x: np.ndarray, active: np.ndarray, i: int) -> float:
    f = t.feature[i]
    if f == LEAF:
        return float(t.value[i])
    if active[f]:
        nxt = t.left[i] if x[f] <= t.threshold[i] else t.right[i]
        return _marginal_tree_value(t, x, active, int(nxt))
    l, r = int(t.left[i]), int(t.right[i])
    vl = _marginal_tree_value(t, x, active, l)
    vr = _marginal_tree_value(t, x, active, r)
    return (t.cover[l] * vl + t.cover[r] * vr) / t.cover[i]


def value_function(model: TreeEnsemble, x, active) -> float:
    """Prediction with only `active` features known.

    Splits on active features follow x; splits on inactive features average
    both branches with cover weights. With all features active this is
    predict(x); with none it is base_score plus the root values.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ShapeError(f"expected {model.n_features} features, got shape {x.shape}")
    mask = np.zeros(model.n_features, dtype=bool)
    active = list(active)
    if active:
        idx = np.asarray(active, dtype=int)
        if idx.min() < 0 or idx.max() >= model.n_features:
            raise ShapeError("active feature index out of range")
        mask[idx] = True
    total = model.base_score
    for t in model.trees:
        total += _marginal_tree_value(t, x, mask, t.root)
    return float(total)


def exact_group_shapley(model: TreeEnsemble, x, grouping: FeatureGrouping) -> np.ndarray:
    """Coalition enumeration of the group-level game: K players, 2^K values."""
    if grouping.n_features != model.n_features:
        raise ShapeError("grouping does not match the model's feature count")
    K = grouping.n_groups
    if K > EXACT_GROUP_LIMIT:
        raise CoalitionBudgetExceeded(
            f"{K} groups exceed the exact enumeration limit of {EXACT_GROUP_LIMIT}; "
            "use tree_group_shap instead"
        )
    x = np.asarray(x, dtype=float)
    group_feats = [idx for _, idx in grouping.groups]

    cache: dict[int, float] = {}

    def v(mask: int) -> float:
        got = cache.get(mask)
        if got is None:
            feats: list[int] = []
            for j in range(K):
                if mask >> j & 1:
                    feats.extend(group_feats[j])
            got = value_function(model, x, feats)
            cache[mask] = got
        return got

    # coalition weight |C|! (K - |C| - 1)! / K!
    fact = [math.factorial(n) for n in range(K + 1)]
    w = [fact[c] * fact[K - c - 1] / fact[K] for c in range(K)]

    phi = np.zeros(K)
    for j in range(K):
        bit = 1 << j
        for mask in range(1 << K):
            if mask & bit:
                continue
            c = bin(mask).count("1")
            phi[j] += w[c] * (v(mask | bit) - v(mask))
    return phi


def exact_individual_shapley(model: TreeEnsemble, x) -> np.ndarray:
    """Exact Shapley per feature: the singleton-grouping special case."""
    names = model.feature_names or [f"f{i}" for i in range(model.n_features)]
    return exact_group_shapley(
        model, x, FeatureGrouping.singletons(model.n_features, list(names))
    )


# --------------------------------------------------------------------------
# fast per-node path attribution


def base_value(model: TreeEnsemble) -> float:
    """Value of the empty coalition: base_score plus each tree's root value."""
    return float(model.base_score + sum(t.value[t.root] for t in model.trees))


def _as_matrix(X, n_features: int) -> np.ndarray:
    if isinstance(X, (list, tuple)):
        for s, row in enumerate(X):
            if len(row) != n_features:
                raise ShapeError(f"row {s}: expected {n_features} features, got {len(row)}")
        X = np.asarray(X, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != n_features:
        raise ShapeError(f"expected {n_features} features, got {X.shape[1]} (row 0)")
    return X


def tree_group_shap(model: TreeEnsemble, X, grouping: FeatureGrouping) -> ShapMatrix:
    """Path attribution: walk each observation's decision path per tree and add
    value(child taken) - value(node) to the group owning the split feature.

    The deltas telescope, so each row satisfies sum(phi) + base = prediction
    exactly. On single-split stumps this coincides with the exact oracle.
    """
    if grouping.n_features != model.n_features:
        raise ShapeError("grouping does not match the model's feature count")
    from .tree import Dataset

    if isinstance(X, Dataset):
        X = X.X
    X = _as_matrix(X, model.n_features)
    S = X.shape[0]
    K = grouping.n_groups
    f2g = grouping.feature_to_group()
    phi = np.zeros((S, K))
    for t in model.trees:
        idx = np.full(S, t.root)
        live = t.feature[idx] != LEAF
        while live.any():
            rows = np.nonzero(live)[0]
            nodes = idx[rows]
            feats = t.feature[nodes]
            go_left = X[rows, feats] <= t.threshold[nodes]
            child = np.where(go_left, t.left[nodes], t.right[nodes])
            np.add.at(phi, (rows, f2g[feats]), t.value[child] - t.value[nodes])
            idx[rows] = child
            live[rows] = t.feature[child] != LEAF
    base = base_value(model)
    return ShapMatrix(phi, np.full(S, base), list(grouping.names))


def shap_weights(individual_shap, grouping: FeatureGrouping) -> GroupWeights:
    """Per-feature weights proportional to mean |SHAP|, normalized per group.

    Groups whose columns are all zero fall back to uniform weights. Used by
    the composite-split surrogate mode only.
    """
    shap = np.atleast_2d(np.asarray(individual_shap, dtype=float))
    if shap.shape[1] != grouping.n_features:
        raise ShapeError("SHAP matrix width does not match grouping")
    mean_abs = np.abs(shap).mean(axis=0)
    w = np.zeros(grouping.n_features)
    for _, idx in grouping.groups:
        idx = list(idx)
        total = mean_abs[idx].sum()
        if total > 0:
            w[idx] = mean_abs[idx] / total
        else:
            w[idx] = 1.0 / len(idx)
    return GroupWeights(weights=w, grouping=grouping)
