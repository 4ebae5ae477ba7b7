"""Regression-tree ensembles: greedy CART boosting, prediction, model files.

Trees are stored as parallel node arrays. Leaves carry ``feature == -1``;
internal nodes split as ``x[feature] <= threshold goes left``. Every node
carries ``cover`` (training rows that reached it) and ``value`` (leaf output
for leaves, cover-weighted mean of the children for internal nodes), which is
what the attribution code walks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GroupShapError,
    ModelInvariantError,
    ModelParseError,
    ShapeError,
    TargetRequired,
)

MODEL_FORMAT_VERSION = 1
LEAF = -1


class DataError(GroupShapError):
    """Dataset ingestion or precondition failure."""


@dataclass
class Tree:
    """One binary regression tree as parallel node arrays."""

    feature: np.ndarray  # int64, LEAF for leaves
    threshold: np.ndarray  # float64, nan for leaves
    left: np.ndarray  # int64, LEAF for leaves
    right: np.ndarray
    value: np.ndarray  # float64
    cover: np.ndarray  # float64
    root: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] == LEAF


@dataclass
class TreeEnsemble:
    """Additive collection of regression trees plus a constant offset."""

    trees: list[Tree]
    n_features: int
    base_score: float
    feature_names: list[str] | None = None

    def predict(self, x) -> float:
        """Prediction for a single feature vector: base_score + leaf sum."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ShapeError(
                f"expected {self.n_features} features, got shape {x.shape}"
            )
        out = self.base_score
        for t in self.trees:
            i = t.root
            while t.feature[i] != LEAF:
                i = t.left[i] if x[t.feature[i]] <= t.threshold[i] else t.right[i]
            out += t.value[i]
        return float(out)

    def predict_many(self, X) -> np.ndarray:
        """Vectorized prediction over the rows of an S x F matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ShapeError(
                f"expected {self.n_features} features, got {X.shape[1]}"
            )
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            idx = np.full(X.shape[0], t.root)
            live = t.feature[idx] != LEAF
            while live.any():
                rows = np.nonzero(live)[0]
                nodes = idx[rows]
                go_left = X[rows, t.feature[nodes]] <= t.threshold[nodes]
                idx[rows] = np.where(go_left, t.left[nodes], t.right[nodes])
                live[rows] = t.feature[idx[rows]] != LEAF
            out += t.value[idx]
        return out


@dataclass
class Dataset:
    """Feature matrix with optional target and column names."""

    X: np.ndarray
    y: np.ndarray | None
    columns: list[str]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def read_csv_dataset(path, target: str | None = None) -> Dataset:
    """Load a comma-delimited CSV with a header row.

    If ``target`` names a column, it becomes ``y`` and is dropped from ``X``.
    Missing or non-numeric cells are rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric or missing value"
                ) from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    if np.isnan(data).any():
        raise DataError(f"{path}: missing values are not supported")
    y = None
    if target is not None:
        if target not in header:
            raise DataError(f"{path}: no column named {target!r}")
        t = header.index(target)
        y = data[:, t]
        data = np.delete(data, t, axis=1)
        header = header[:t] + header[t + 1 :]
    if data.shape[1] == 0:
        raise DataError(f"{path}: no feature columns")
    return Dataset(X=data, y=y, columns=header)


# --------------------------------------------------------------------------
# training


def _best_split(Xsub: np.ndarray, resid: np.ndarray, min_leaf: int):
    """Best variance-reduction split for one node, or None.

    Returns (gain, feature, threshold). Gain is the SSE decrease; candidate
    thresholds are midpoints between consecutive distinct sorted values, so
    the `x <= threshold` convention reproduces the training partition.
    """
    n = len(resid)
    total = resid.sum()
    sse_parent = float(((resid - total / n) ** 2).sum())
    if sse_parent <= 0.0 or n < 2 * min_leaf:
        return None
    best_gain = 0.0
    best = None
    parent_term = total * total / n
    for f in range(Xsub.shape[1]):
        order = np.argsort(Xsub[:, f], kind="stable")
        xs = Xsub[order, f]
        csum = np.cumsum(resid[order])
        n_left = np.arange(1, n)
        valid = (n_left >= min_leaf) & (n - n_left >= min_leaf) & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        sum_left = csum[:-1]
        score = sum_left**2 / n_left + (total - sum_left) ** 2 / (n - n_left)
        score[~valid] = -np.inf
        i = int(np.argmax(score))
        gain = float(score[i]) - parent_term
        if gain > best_gain:
            best_gain = gain
            best = (gain, f, float((xs[i] + xs[i + 1]) / 2.0))
    if best is None or best_gain <= 1e-10 * sse_parent:
        return None
    return best


def _grow_tree(X, resid, max_depth, min_leaf, scale) -> Tree:
    """Greedy depth-limited CART on the residuals, node values scaled by `scale`."""
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(math.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append(scale * float(resid[rows].mean()))
        cover.append(float(len(rows)))
        return len(feature) - 1

    # explicit stack of (node_id, row_indices, depth)
    all_rows = np.arange(X.shape[0])
    stack = [(new_node(all_rows), all_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= max_depth:
            continue
        split = _best_split(X[rows], resid[rows], min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        l_id = new_node(rows[go_left])
        r_id = new_node(rows[~go_left])
        left[node] = l_id
        right[node] = r_id
        stack.append((l_id, rows[go_left], depth + 1))
        stack.append((r_id, rows[~go_left], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        cover=np.asarray(cover, dtype=float),
    )


def train_gbm(
    data: Dataset,
    n_trees: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_samples_leaf: int = 5,
) -> TreeEnsemble:
    """Stagewise squared-error boosting of depth-limited CART trees.

    base_score is mean(y); each stage fits the current residuals and is shrunk
    by the learning rate (leaf and internal node values carry the shrinkage).
    A constant target yields zero-output trees, not an error.
    """
    if data.y is None:
        raise TargetRequired("train_gbm needs a dataset with a target column")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must be in (0, 1]")
    if data.n_rows < 2 * min_samples_leaf:
        raise DataError(
            f"need at least {2 * min_samples_leaf} rows, got {data.n_rows}"
        )
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=float)
    base = float(y.mean())
    resid = y - base
    trees = []
    for _ in range(n_trees):
        t = _grow_tree(X, resid, max_depth, min_samples_leaf, learning_rate)
        trees.append(t)
        resid -= _tree_predict_many(t, X)
    return TreeEnsemble(
        trees=trees,
        n_features=X.shape[1],
        base_score=base,
        feature_names=list(data.columns),
    )


def _tree_predict_many(t: Tree, X: np.ndarray) -> np.ndarray:
    idx = np.full(X.shape[0], t.root)
    live = t.feature[idx] != LEAF
    while live.any():
        rows = np.nonzero(live)[0]
        nodes = idx[rows]
        go_left = X[rows, t.feature[nodes]] <= t.threshold[nodes]
        idx[rows] = np.where(go_left, t.left[nodes], t.right[nodes])
        live[rows] = t.feature[idx[rows]] != LEAF
    return t.value[idx]


# --------------------------------------------------------------------------
# serialization


def _tree_to_nodes(t: Tree) -> list[dict]:
    nodes = []
    for i in range(t.n_nodes):
        leaf = t.feature[i] == LEAF
        nodes.append(
            {
                "id": i,
                "feature": None if leaf else int(t.feature[i]),
                "threshold": None if leaf else float(t.threshold[i]),
                "left": None if leaf else int(t.left[i]),
                "right": None if leaf else int(t.right[i]),
                "value": float(t.value[i]),
                "cover": float(t.cover[i]),
            }
        )
    return nodes


def save_model(model: TreeEnsemble, path) -> None:
    """Write the ensemble as a self-describing JSON document."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "base_score": float(model.base_score),
        "n_features": int(model.n_features),
        "feature_names": model.feature_names,
        "trees": [{"nodes": _tree_to_nodes(t)} for t in model.trees],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _parse_tree(tree_doc, n_features: int, ti: int) -> Tree:
    if not isinstance(tree_doc, dict) or "nodes" not in tree_doc:
        raise ModelParseError("tree entry must be an object with 'nodes'", ti)
    nodes = tree_doc["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise ModelParseError("'nodes' must be a non-empty array", ti)
    n = len(nodes)
    feature = np.full(n, LEAF, dtype=np.int64)
    threshold = np.full(n, math.nan)
    left = np.full(n, LEAF, dtype=np.int64)
    right = np.full(n, LEAF, dtype=np.int64)
    value = np.zeros(n)
    cover = np.zeros(n)
    seen = set()
    for pos, nd in enumerate(nodes):
        if not isinstance(nd, dict):
            raise ModelParseError("node must be an object", ti, pos)
        try:
            i = nd["id"]
            f = nd["feature"]
            thr = nd["threshold"]
            lc = nd["left"]
            rc = nd["right"]
            value_i = float(nd["value"])
            cover_i = float(nd["cover"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelParseError(f"bad node fields: {exc}", ti, pos) from None
        if not isinstance(i, int) or not 0 <= i < n or i in seen:
            raise ModelParseError("node ids must be unique integers 0..n-1", ti, pos)
        seen.add(i)
        internal_fields = [f, thr, lc, rc]
        if any(v is None for v in internal_fields) != all(
            v is None for v in internal_fields
        ):
            raise ModelParseError(
                "feature/threshold/left/right must be all present or all null",
                ti,
                i,
            )
        if f is not None:
            if not isinstance(f, int) or not (
                isinstance(lc, int) and isinstance(rc, int)
            ):
                raise ModelParseError("feature/left/right must be integers", ti, i)
            if not 0 <= lc < n or not 0 <= rc < n or lc == rc:
                raise ModelParseError("child ids out of range", ti, i)
            if not 0 <= f < n_features:
                raise ModelInvariantError(
                    f"split feature {f} outside [0, {n_features})", ti, i
                )
            feature[i] = f
            threshold[i] = float(thr)
            left[i] = lc
            right[i] = rc
        if cover_i < 0:
            raise ModelInvariantError("cover must be nonnegative", ti, i)
        value[i] = value_i
        cover[i] = cover_i
    t = Tree(feature, threshold, left, right, value, cover)
    t.root = _validate_structure(t, ti)
    _validate_covers_and_values(t, ti)
    return t


def _validate_structure(t: Tree, ti: int) -> int:
    """Check the node graph is a single rooted tree; return the root id."""
    n = t.n_nodes
    parents = np.zeros(n, dtype=int)
    for i in range(n):
        if t.feature[i] != LEAF:
            parents[t.left[i]] += 1
            parents[t.right[i]] += 1
    roots = np.nonzero(parents == 0)[0]
    if len(roots) != 1:
        raise ModelInvariantError(f"expected exactly one root, found {len(roots)}", ti)
    if (parents > 1).any():
        bad = int(np.nonzero(parents > 1)[0][0])
        raise ModelInvariantError("node has more than one parent", ti, bad)
    root = int(roots[0])
    # reachability from the root covers all nodes iff there are no cycles
    seen = set()
    stack = [root]
    while stack:
        i = stack.pop()
        if i in seen:
            raise ModelInvariantError("cycle in node graph", ti, i)
        seen.add(i)
        if t.feature[i] != LEAF:
            stack.extend((int(t.left[i]), int(t.right[i])))
    if len(seen) != n:
        raise ModelInvariantError("unreachable nodes in tree", ti)
    return root


def _validate_covers_and_values(t: Tree, ti: int) -> None:
    """Enforce cover additivity, then recompute internal values bottom-up.

    Stored internal values must agree with the cover-weighted descendant mean
    to 1e-9 relative; the recomputed (exact) values replace them.
    """
    order = []
    stack = [t.root]
    while stack:  # preorder; reversed gives children before parents
        i = stack.pop()
        order.append(i)
        if t.feature[i] != LEAF:
            stack.extend((int(t.left[i]), int(t.right[i])))
    for i in reversed(order):
        if t.feature[i] == LEAF:
            continue
        l, r = int(t.left[i]), int(t.right[i])
        if not math.isclose(
            t.cover[i], t.cover[l] + t.cover[r], rel_tol=1e-9, abs_tol=1e-9
        ):
            raise ModelInvariantError(
                f"cover {t.cover[i]} != {t.cover[l]} + {t.cover[r]}", ti, i
            )
        if t.cover[i] <= 0:
            raise ModelInvariantError("internal node with zero cover", ti, i)
        recomputed = (t.cover[l] * t.value[l] + t.cover[r] * t.value[r]) / t.cover[i]
        if not math.isclose(t.value[i], recomputed, rel_tol=1e-9, abs_tol=1e-9):
            raise ModelInvariantError(
                f"value {t.value[i]} != cover-weighted child mean {recomputed}", ti, i
            )
        t.value[i] = recomputed


def load_model(path) -> TreeEnsemble:
    """Read a model file, re-validating every node invariant."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelParseError(f"{path}: top level must be an object")
    try:
        version = doc["version"]
        base_score = float(doc["base_score"])
        n_features = doc["n_features"]
        feature_names = doc.get("feature_names")
        trees_doc = doc["trees"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"{path}: missing or bad field: {exc}") from None
    if version != MODEL_FORMAT_VERSION:
        raise ModelParseError(f"{path}: unsupported version {version!r}")
    if not isinstance(n_features, int) or n_features < 1:
        raise ModelParseError(f"{path}: n_features must be a positive integer")
    if feature_names is not None and len(feature_names) != n_features:
        raise ModelParseError(f"{path}: feature_names length != n_features")
    if not isinstance(trees_doc, list):
        raise ModelParseError(f"{path}: 'trees' must be an array")
    trees = [_parse_tree(td, n_features, ti) for ti, td in enumerate(trees_doc)]
    return TreeEnsemble(
        trees=trees,
        n_features=n_features,
        base_score=base_score,
        feature_names=list(feature_names) if feature_names is not None else None,
    )
