"""Shapley explanations of a ``GbtModel`` and the quantities derived from them.

Values are in target units. The value function is path dependent: features
outside the coalition are integrated out along the tree using node covers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .gbt import GbtError, GbtModel

BRUTE_FORCE_MAX_FEATURES = 20


@dataclass(frozen=True)
class Explanation:
    base_value: float
    phi: np.ndarray  # rows x features
    feature_names: list[str]
    data: np.ndarray  # the explained rows
    row_ids: np.ndarray

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None


@dataclass(frozen=True)
class InteractionExplanation:
    base_value: float
    Phi: np.ndarray  # rows x features x features, symmetric per row
    feature_names: list[str]
    data: np.ndarray
    row_ids: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.Phi.sum(axis=2)

    def feature_index(self, name: str) -> int:
        return Explanation.feature_index(self, name)

    def main_effects(self) -> np.ndarray:
        return np.einsum("rjj->rj", self.Phi)


def expected_value(model: GbtModel) -> float:
    """v(empty set): base score plus shrunk cover-weighted mean leaf of each tree."""
    total = 0.0
    for tree in model.trees:
        expect = tree.value.astype(float).copy()
        for i in range(tree.n_nodes - 1, -1, -1):
            if tree.feature[i] >= 0:
                l, r = tree.left[i], tree.right[i]
                expect[i] = (tree.cover[l] * expect[l] + tree.cover[r] * expect[r]) / tree.cover[i]
        total += expect[0]
    return model.base_score + model.learning_rate * total


def _prepare(model: GbtModel, rows) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(rows, dtype=float)))
    if X.shape[1] != model.n_features:
        raise GbtError(f"expected {model.n_features} features per row, got {X.shape[1]}")
    return X


def _chunked(fn, X: np.ndarray, threads: int) -> np.ndarray:
    # rows are independent, so chunking never changes any row's result
    if threads <= 1 or len(X) < 2:
        return fn(X)
    chunks = np.array_split(np.arange(len(X)), min(threads, len(X)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: fn(X[idx]), chunks))
    return np.concatenate(parts, axis=0)


def tree_shap(model: GbtModel, rows, threads: int = 1, row_ids=None) -> Explanation:
    X = _prepare(model, rows)
    flat = model.flat
    buf = _kernels.path_buffer_size(flat.max_depth)
    stack = _kernels.stack_size(flat.max_depth)
    if len(model.trees) == 0:
        raw = np.zeros(X.shape)
    else:
        raw = _chunked(
            lambda part: _kernels.shap_rows(part, flat.feature, flat.threshold, flat.left, flat.right,
                                            flat.value, flat.cover, flat.roots, buf, stack),
            X, threads,
        )
    ids = np.arange(len(X)) if row_ids is None else np.asarray(row_ids)
    return Explanation(expected_value(model), model.learning_rate * raw, list(model.feature_names), X, ids)


def shap_interactions(model: GbtModel, rows, threads: int = 1, row_ids=None) -> InteractionExplanation:
    """Pairwise SHAP interaction values; the diagonal holds main effects."""
    X = _prepare(model, rows)
    n, m = X.shape
    flat = model.flat
    ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    base = expected_value(model)
    if len(model.trees) == 0:
        return InteractionExplanation(base, np.zeros((n, m, m)), list(model.feature_names), X, ids)
    buf = _kernels.path_buffer_size(flat.max_depth)
    stack = _kernels.stack_size(flat.max_depth)
    used = np.unique(flat.feature[flat.feature >= 0]).astype(np.int64)
    half = _chunked(
        lambda part: _kernels.interaction_rows(part, used, flat.feature, flat.threshold, flat.left,
                                               flat.right, flat.value, flat.cover, flat.roots, buf, stack),
        X, threads,
    )
    phi = _chunked(
        lambda part: _kernels.shap_rows(part, flat.feature, flat.threshold, flat.left, flat.right,
                                        flat.value, flat.cover, flat.roots, buf, stack),
        X, threads,
    )
    eta = model.learning_rate
    Phi = eta * (half + np.swapaxes(half, 1, 2)) / 2.0
    diag = np.arange(m)
    Phi[:, diag, diag] = 0.0
    Phi[:, diag, diag] = eta * phi - Phi.sum(axis=2)
    return InteractionExplanation(base, Phi, list(model.feature_names), X, ids)


def _shapley_weights(n: int, pairwise: bool = False) -> np.ndarray:
    if pairwise:
        # |S|! (n - |S| - 2)! / (2 (n - 1)!)
        return np.array([math.factorial(s) * math.factorial(n - s - 2) / (2 * math.factorial(n - 1))
                         for s in range(max(n - 1, 1))])
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])


def coalition_values(model: GbtModel, row) -> np.ndarray:
    """v(S) for all 2^n coalitions as bitmasks; shrinkage and base score applied."""
    x = _prepare(model, row)[0]
    n = model.n_features
    if n > BRUTE_FORCE_MAX_FEATURES:
        raise GbtError(f"brute force limited to {BRUTE_FORCE_MAX_FEATURES} features, model has {n}")
    flat = model.flat
    if len(model.trees) == 0:
        return np.full(1 << n, model.base_score)
    raw = _kernels.coalition_values(x, n, flat.feature, flat.threshold, flat.left, flat.right,
                                    flat.value, flat.cover, flat.roots)
    return model.base_score + model.learning_rate * raw


def brute_force_shapley(model: GbtModel, row) -> np.ndarray:
    """Shapley values by enumerating every coalition (cost 2^n)."""
    v = coalition_values(model, row)
    n = model.n_features
    return _kernels.shapley_from_values(v, n, _shapley_weights(n))


def brute_force_interactions(model: GbtModel, row) -> np.ndarray:
    """SHAP interaction matrix by enumeration; diagonal = phi_j minus off-diagonal row."""
    v = coalition_values(model, row)
    n = model.n_features
    if n < 2:
        return brute_force_shapley(model, row).reshape(1, 1)
    Phi = _kernels.interactions_from_values(v, n, _shapley_weights(n, pairwise=True))
    phi = _kernels.shapley_from_values(v, n, _shapley_weights(n))
    Phi[np.diag_indices(n)] = phi - Phi.sum(axis=1)
    return Phi


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: list[str]
    mean_abs: np.ndarray
    scores: np.ndarray
    degenerate: bool

    def ranking(self) -> list[str]:
        order = sorted(range(len(self.feature_names)), key=lambda j: (-self.scores[j], self.feature_names[j]))
        return [self.feature_names[j] for j in order]

    def to_dict(self) -> dict:
        return {
            "degenerate": self.degenerate,
            "ranking": self.ranking(),
            "features": {
                name: {"mean_abs_shap": float(m), "score": float(s)}
                for name, m, s in zip(self.feature_names, self.mean_abs, self.scores)
            },
        }


def feature_importance(expl: Explanation | InteractionExplanation) -> ImportanceReport:
    phi = expl.phi
    if phi.shape[0] < 1:
        raise ValueError("feature_importance needs at least one explained row")
    mean_abs = np.abs(phi).mean(axis=0)
    top = mean_abs.max()
    if top == 0.0:
        return ImportanceReport(list(expl.feature_names), mean_abs, np.zeros_like(mean_abs), True)
    return ImportanceReport(list(expl.feature_names), mean_abs, mean_abs / top, False)


@dataclass(frozen=True)
class DependencyData:
    feature: str
    x: np.ndarray
    phi: np.ndarray
    flip_sign: bool = False
    mode: str = "full"  # full | main | interaction
    interacting: str | None = None
    interacting_x: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)


def dependency(
    expl: Explanation | InteractionExplanation,
    feature: str,
    flip_sign: bool = False,
    interacting: str | None = None,
    main_effect: bool = False,
) -> DependencyData:
    """Scatter data for one feature.

    Full mode pairs x_j with phi_j; ``main_effect`` uses the diagonal Phi_jj;
    ``interacting`` yields (x_j, Phi_jk, x_k). ``flip_sign`` negates x_j only.
    """
    j = expl.feature_index(feature)
    x = expl.data[:, j]
    x = -x if flip_sign else x.copy()
    if interacting is not None or main_effect:
        if not isinstance(expl, InteractionExplanation):
            raise TypeError("main effects and interaction slices need an InteractionExplanation")
    if interacting is not None:
        k = expl.feature_index(interacting)
        return DependencyData(feature, x, expl.Phi[:, j, k].copy(), flip_sign, "interaction",
                              interacting, expl.data[:, k].copy())
    if main_effect:
        return DependencyData(feature, x, expl.Phi[:, j, j].copy(), flip_sign, "main")
    return DependencyData(feature, x, expl.phi[:, j].copy(), flip_sign, "full")


def linear_slope(dep: DependencyData) -> tuple[float, float]:
    """Ordinary least-squares line through the (x, phi) pairs."""
    x = np.asarray(dep.x, dtype=float)
    y = np.asarray(dep.phi, dtype=float)
    if len(x) < 2 or np.all(x == x[0]):
        raise ValueError(f"linear fit for {dep.feature!r} needs at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    gap: float  # mean phi above minus mean phi below
    z_score: float
    significant: bool

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "gap": self.gap, "z_score": self.z_score,
                "significant": self.significant}


def threshold_scan(dep: DependencyData, window: int = 50, z_min: float = 4.0) -> ThresholdResult:
    """Split point on sorted x maximising |mean phi above - mean phi below|.

    Candidates keep at least ``window`` points per side and sit between two
    distinct x values; the returned threshold is the lowest x of the upper side.
    """
    x = np.asarray(dep.x, dtype=float)
    y = np.asarray(dep.phi, dtype=float)
    n = len(x)
    if window < 1 or n < 2 * window:
        raise ValueError(f"threshold scan needs at least {2 * window} points, got {n}")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    c1 = np.concatenate([[0.0], np.cumsum(ys)])
    c2 = np.concatenate([[0.0], np.cumsum(ys * ys)])
    k = np.arange(window, n - window + 1)  # points below the split
    k = k[xs[k - 1] < xs[k]] if len(k) else k
    if len(k) == 0:
        return ThresholdResult(float(xs[n // 2]), 0.0, 0.0, False)
    lo_mean = c1[k] / k
    hi_mean = (c1[n] - c1[k]) / (n - k)
    gap = hi_mean - lo_mean
    best = int(np.argmax(np.abs(gap)))
    kb = k[best]
    g = float(gap[best])
    lo_var = max(c2[kb] / kb - lo_mean[best] ** 2, 0.0)
    hi_var = max((c2[n] - c2[kb]) / (n - kb) - hi_mean[best] ** 2, 0.0)
    se = math.sqrt(lo_var / kb + hi_var / (n - kb))
    # rounding floor: below it a gap is indistinguishable from zero
    tiny = 1e-12 * (float(np.abs(ys).max()) + 1e-300)
    if abs(g) <= tiny:
        z = 0.0
    elif se <= tiny:
        z = math.inf
    else:
        z = abs(g) / se
    return ThresholdResult(float(xs[kb]), g, z, bool(z >= z_min))
