"""Random hand-built ensembles for explainer tests."""

import numpy as np

from priceshap.gbt import Tree, stack_trees


def random_tree(rng: np.random.Generator, n_features: int, max_depth: int, p_leaf: float = 0.2) -> Tree:
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def node(depth):
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(0.0)
        if depth >= max_depth or (depth > 0 and rng.random() < p_leaf):
            value[i] = float(rng.normal(0, 10))
            cover[i] = float(rng.integers(1, 100))
            return i
        feature[i] = int(rng.integers(n_features))
        threshold[i] = float(rng.random())
        li = node(depth + 1)
        ri = node(depth + 1)
        left[i], right[i] = li, ri
        cover[i] = cover[li] + cover[ri]
        return i

    node(0)
    return Tree.from_arrays(feature, threshold, left, right, value, cover)


def random_ensemble(rng, n_features, n_trees, max_depth, p_leaf=0.2):
    trees = [random_tree(rng, n_features, max_depth, p_leaf) for _ in range(n_trees)]
    return stack_trees(trees, float(rng.normal(30, 5)), float(rng.uniform(0.05, 1.0)), n_features)


def make_frame(X, y, start="2017-01-01T00"):
    """Hourly frame with features x0..x{p-1} and target 'price'."""
    from priceshap.ingest import Column, TimeSeriesFrame

    X = np.atleast_2d(np.asarray(X, dtype=float))
    ts = (np.datetime64(start, "h") + np.arange(len(X))).astype("datetime64[s]")
    cols = tuple(Column(f"x{j}", "", "power-system") for j in range(X.shape[1])) + (Column("price", "", "target"),)
    return TimeSeriesFrame(ts, cols, np.column_stack([X, np.asarray(y, dtype=float)]), "price")
