"""Shared tree builders and independent oracles for the test suite."""

import itertools
import math

import numpy as np
import pytest

from groupshap.tree import LEAF, Tree, TreeEnsemble


def leaf_tree(value, cover=10.0) -> Tree:
    return Tree(
        feature=np.array([LEAF]),
        threshold=np.array([math.nan]),
        left=np.array([LEAF]),
        right=np.array([LEAF]),
        value=np.array([float(value)]),
        cover=np.array([float(cover)]),
    )


def stump(feature, threshold, left_value, right_value, left_cover=50.0, right_cover=50.0) -> Tree:
    cover = left_cover + right_cover
    root_value = (left_cover * left_value + right_cover * right_value) / cover
    return Tree(
        feature=np.array([feature, LEAF, LEAF]),
        threshold=np.array([float(threshold), math.nan, math.nan]),
        left=np.array([1, LEAF, LEAF]),
        right=np.array([2, LEAF, LEAF]),
        value=np.array([root_value, float(left_value), float(right_value)]),
        cover=np.array([cover, float(left_cover), float(right_cover)]),
    )


def build_tree(spec) -> Tree:
    """Build a tree from a nested spec.

    A leaf is (value, cover); an internal node is
    (feature, threshold, left_spec, right_spec). Internal values and covers
    are derived bottom-up so the node invariants hold by construction.
    """
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def add(node):
        i = len(feature)
        feature.append(LEAF)
        threshold.append(math.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        cover.append(0.0)
        if len(node) == 2:
            value[i], cover[i] = float(node[0]), float(node[1])
        else:
            f, thr, lspec, rspec = node
            feature[i] = f
            threshold[i] = float(thr)
            l = add(lspec)
            r = add(rspec)
            left[i], right[i] = l, r
            cover[i] = cover[l] + cover[r]
            value[i] = (cover[l] * value[l] + cover[r] * value[r]) / cover[i]
        return i

    add(spec)
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        cover=np.array(cover, dtype=float),
    )


def random_tree(rng, n_features, depth) -> Tree:
    """Random full-ish tree with valid covers and cover-weighted values."""

    def spec(d):
        if d == 0 or rng.random() < 0.2:
            return (float(rng.normal()), float(rng.integers(1, 30)))
        f = int(rng.integers(0, n_features))
        thr = float(rng.uniform(0.2, 0.8))
        return (f, thr, spec(d - 1), spec(d - 1))

    node = spec(depth)
    if len(node) == 2:  # force at least one split
        node = (
            int(rng.integers(0, n_features)),
            float(rng.uniform(0.2, 0.8)),
            (float(rng.normal()), float(rng.integers(1, 30))),
            (float(rng.normal()), float(rng.integers(1, 30))),
        )
    return build_tree(node)


def random_ensemble(rng, n_features, n_trees, depth) -> TreeEnsemble:
    return TreeEnsemble(
        trees=[random_tree(rng, n_features, depth) for _ in range(n_trees)],
        n_features=n_features,
        base_score=float(rng.normal()),
    )


def random_stump_ensemble(rng, n_features, n_trees) -> TreeEnsemble:
    trees = [
        stump(
            int(rng.integers(0, n_features)),
            float(rng.uniform(0.2, 0.8)),
            float(rng.normal()),
            float(rng.normal()),
            float(rng.integers(1, 40)),
            float(rng.integers(1, 40)),
        )
        for _ in range(n_trees)
    ]
    return TreeEnsemble(trees=trees, n_features=n_features, base_score=float(rng.normal()))


def random_partition(rng, n_features, n_groups):
    """Random exhaustive partition with every group nonempty."""
    assert n_groups <= n_features
    perm = list(rng.permutation(n_features))
    cuts = sorted(rng.choice(np.arange(1, n_features), size=n_groups - 1, replace=False)) if n_groups > 1 else []
    bounds = [0, *cuts, n_features]
    return [
        (f"g{j}", [int(i) for i in perm[bounds[j] : bounds[j + 1]]])
        for j in range(n_groups)
    ]


# --------------------------------------------------------------------------
# independent oracle: coalition enumeration coded from scratch


def _oracle_tree_value(tree: Tree, x, active_features, i=None):
    if i is None:
        i = tree.root
    f = tree.feature[i]
    if f == LEAF:
        return tree.value[i]
    if f in active_features:
        child = tree.left[i] if x[f] <= tree.threshold[i] else tree.right[i]
        return _oracle_tree_value(tree, x, active_features, int(child))
    l, r = int(tree.left[i]), int(tree.right[i])
    wl = tree.cover[l] / tree.cover[i]
    wr = tree.cover[r] / tree.cover[i]
    return wl * _oracle_tree_value(tree, x, active_features, l) + wr * _oracle_tree_value(
        tree, x, active_features, r
    )


def brute_force_group_shapley(model: TreeEnsemble, x, groups):
    """Group-player Shapley by direct coalition enumeration.

    Deliberately independent of the library: its own tree marginalization,
    combinations-based subset walk, and factorial weights.
    """
    K = len(groups)

    def v(coalition):
        feats = set()
        for j in coalition:
            feats.update(groups[j][1])
        return model.base_score + sum(
            _oracle_tree_value(t, x, feats) for t in model.trees
        )

    phi = np.zeros(K)
    for j in range(K):
        others = [g for g in range(K) if g != j]
        for size in range(K):
            w = (
                math.factorial(size)
                * math.factorial(K - size - 1)
                / math.factorial(K)
            )
            for combo in itertools.combinations(others, size):
                phi[j] += w * (v(set(combo) | {j}) - v(set(combo)))
    return phi


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
