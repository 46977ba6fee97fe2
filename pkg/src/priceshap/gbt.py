"""Histogram gradient-boosted regression trees with L2 loss.

Trees grow leaf-wise (best-first) up to ``num_leaves``. Every node keeps its
training-row cover, which the path-dependent Shapley explainer needs.
Routing rule everywhere: ``x <= threshold`` goes left.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from typing import Sequence

import numpy as np

from .ingest import TimeSeriesFrame
from .split import SplitPlan

logger = logging.getLogger(__name__)

MODEL_FORMAT = "priceshap-gbt/1"


class GbtError(RuntimeError):
    pass


class ZeroVariance(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    num_leaves: int = 31
    min_data_in_leaf: int = 20
    max_bins: int = 255
    learning_rate: float = 0.1
    lambda_l2: float = 0.0
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    max_rounds: int = 1000
    early_stopping_patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be >= 1")
        if not 2 <= self.max_bins <= 65535:
            raise ValueError("max_bins must lie in [2, 65535]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")
        for name in ("feature_fraction", "bagging_fraction"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.max_rounds < 0 or self.early_stopping_patience < 1:
            raise ValueError("max_rounds must be >= 0 and early_stopping_patience >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        casts = {f.name: (int if f.type in ("int", int) else float) for f in fields(cls)}
        return cls(**{k: casts[k](v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BinMap:
    """Per-feature sorted upper bin edges; bin ``b`` holds ``(edge[b-1], edge[b]]``."""

    edges: tuple[np.ndarray, ...]

    def n_bins(self, feature: int) -> int:
        return len(self.edges[feature]) + 1

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            out[:, j] = np.searchsorted(e, X[:, j], side="left")
        return out


def build_bins(X: np.ndarray, max_bins: int = 255) -> BinMap:
    """Quantile bin edges over each training column.

    Columns with at most ``max_bins`` distinct values get one bin per value,
    with edges at midpoints between consecutive distinct values.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("build_bins needs a non-empty 2-D matrix")
    edges = []
    for col in X.T:
        distinct = np.unique(col)
        if len(distinct) <= max_bins:
            e = (distinct[:-1] + distinct[1:]) / 2.0
        else:
            q = np.linspace(0.0, 100.0, max_bins + 1)[1:-1]
            e = np.unique(np.percentile(col, q, method="midpoint"))
            e = e[e < distinct[-1]]
        edges.append(np.ascontiguousarray(e, dtype=float))
    return BinMap(tuple(edges))


@dataclass(frozen=True)
class Tree:
    """Flat node arrays. ``feature == -1`` marks a leaf; children are node ids."""

    feature: np.ndarray
    threshold: np.ndarray
    bin_threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def _route(self, columns: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
        node = np.zeros(columns.shape[0], dtype=np.int64)
        # children always have larger ids than their parent
        for i in range(self.n_nodes):
            f = self.feature[i]
            if f < 0:
                continue
            at = node == i
            if not at.any():
                continue
            go_left = columns[at, f] <= thresholds[i]
            node[at] = np.where(go_left, self.left[i], self.right[i])
        return node

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self._route(X, self.threshold)

    def apply_binned(self, Xb: np.ndarray) -> np.ndarray:
        return self._route(Xb, self.bin_threshold)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"id": i, "leaf": float(self.value[i]), "cover": float(self.cover[i])})
            else:
                nodes.append({
                    "id": i,
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "bin": int(self.bin_threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "cover": float(self.cover[i]),
                })
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        bin_threshold = np.zeros(n, dtype=np.int64)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        cover = np.zeros(n)
        for i, node in enumerate(nodes):
            if node["id"] != i:
                raise GbtError("tree node ids must be 0..n-1")
            cover[i] = node["cover"]
            if "leaf" in node:
                value[i] = node["leaf"]
            else:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                bin_threshold[i] = node.get("bin", -1)
                left[i] = node["left"]
                right[i] = node["right"]
        return cls(feature, threshold, bin_threshold, left, right, value, cover)

    @classmethod
    def from_arrays(cls, feature, threshold, left, right, value, cover) -> Tree:
        feature = np.asarray(feature, dtype=np.int64)
        return cls(
            feature,
            np.asarray(threshold, dtype=float),
            np.full(len(feature), -1, dtype=np.int64),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=float),
            np.asarray(cover, dtype=float),
        )


@dataclass(frozen=True)
class FlatEnsemble:
    """All trees concatenated with global child indices, for the numba kernels."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    roots: np.ndarray
    max_depth: int


@dataclass(eq=False)
class GbtModel:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    feature_names: list[str]
    bins: BinMap | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check_rows(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise GbtError(f"expected {self.n_features} features per row, got {X.shape[1]}")
        bad = np.flatnonzero(~np.isfinite(X).all(axis=1))
        if bad.size:
            raise GbtError(f"non-finite feature value in row(s) {bad[:10].tolist()}")
        return X

    def raw_sum(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X)
        return acc

    def predict(self, X) -> np.ndarray:
        X = self._check_rows(X)
        return self.base_score + self.learning_rate * self.raw_sum(X)

    @cached_property
    def flat(self) -> FlatEnsemble:
        feats, thr, lefts, rights, vals, covers, roots = [], [], [], [], [], [], []
        offset = 0
        max_depth = 0
        for t in self.trees:
            roots.append(offset)
            internal = t.feature >= 0
            feats.append(t.feature)
            thr.append(t.threshold)
            lefts.append(np.where(internal, t.left + offset, -1))
            rights.append(np.where(internal, t.right + offset, -1))
            vals.append(t.value)
            covers.append(t.cover)
            offset += t.n_nodes
            max_depth = max(max_depth, t.depth())

        def cat(parts, dtype):
            return np.ascontiguousarray(np.concatenate(parts) if parts else np.zeros(0), dtype=dtype)

        return FlatEnsemble(
            cat(feats, np.int64), cat(thr, float), cat(lefts, np.int64), cat(rights, np.int64),
            cat(vals, float), cat(covers, float), np.asarray(roots, dtype=np.int64), max_depth,
        )

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "feature_names": list(self.feature_names),
            "bin_edges": [e.tolist() for e in self.bins.edges] if self.bins else None,
            "trees": [t.to_dict() for t in self.trees],
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> GbtModel:
        if d.get("format") != MODEL_FORMAT:
            raise GbtError(f"unsupported model format {d.get('format')!r}")
        bins = BinMap(tuple(np.asarray(e, dtype=float) for e in d["bin_edges"])) if d.get("bin_edges") else None
        return cls(
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            feature_names=list(d["feature_names"]),
            bins=bins,
            metadata=d.get("metadata", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> GbtModel:
        return cls.from_dict(json.loads(text))


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size < 2:
        raise ValueError("r2_score needs two equal-length vectors of length >= 2")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("r2_score undefined: y_true has zero variance")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def safe_r2(y_true, y_pred) -> float | None:
    """R2, or None when the reference has zero variance."""
    try:
        return r2_score(y_true, y_pred)
    except ZeroVariance:
        return None


class _Leaf:
    __slots__ = ("node", "rows", "grad_sum", "count", "split")

    def __init__(self, node, rows, grad_sum, count):
        self.node = node
        self.rows = rows
        self.grad_sum = grad_sum
        self.count = count
        self.split = None  # (gain, feature, bin)


class _Grower:
    def __init__(self, Xb: np.ndarray, bins: BinMap, hp: Hyperparams):
        self.Xb = Xb
        self.hp = hp
        self.n_bins = np.array([bins.n_bins(j) for j in range(Xb.shape[1])], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.n_bins)[:-1]])
        self.total_bins = int(self.n_bins.sum())
        self.flat_codes = Xb + self.offsets[None, :]
        self.edges = bins.edges

    def _best_split(self, leaf: _Leaf, grad: np.ndarray, features: np.ndarray):
        hp = self.hp
        if leaf.count < 2 * hp.min_data_in_leaf:
            return None
        codes = self.flat_codes[leaf.rows].ravel()
        n_feat = self.Xb.shape[1]
        hg = np.bincount(codes, weights=np.repeat(grad[leaf.rows], n_feat), minlength=self.total_bins)
        hc = np.bincount(codes, minlength=self.total_bins).astype(float)
        G, C, lam = leaf.grad_sum, float(leaf.count), hp.lambda_l2
        parent = G * G / (C + lam)
        # split is accepted only above rounding noise of the node's own SSE scale
        tol = 1e-12 * (float(np.sum(grad[leaf.rows] ** 2)) + 1e-300)
        best = None
        for f in features:
            nb = self.n_bins[f]
            if nb < 2:
                continue
            lo = self.offsets[f]
            gl = np.cumsum(hg[lo:lo + nb])[:-1]
            cl = np.cumsum(hc[lo:lo + nb])[:-1]
            gr = G - gl
            cr = C - cl
            ok = (cl >= hp.min_data_in_leaf) & (cr >= hp.min_data_in_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(ok, gl * gl / (cl + lam) + gr * gr / (cr + lam) - parent, -np.inf)
            b = int(np.argmax(gain))
            if gain[b] > tol and (best is None or gain[b] > best[0]):
                best = (float(gain[b]), int(f), b)
        return best

    def grow(self, rows: np.ndarray, grad: np.ndarray, features: np.ndarray) -> Tree:
        hp = self.hp
        lam = hp.lambda_l2
        feature, threshold, bin_thr, left, right, value, cover = [], [], [], [], [], [], []

        def new_node(rows_, g_sum):
            feature.append(-1)
            threshold.append(0.0)
            bin_thr.append(-1)
            left.append(-1)
            right.append(-1)
            value.append(-g_sum / (len(rows_) + lam))
            cover.append(float(len(rows_)))
            return len(feature) - 1

        root_g = float(np.sum(grad[rows]))
        root = _Leaf(new_node(rows, root_g), rows, root_g, len(rows))
        root.split = self._best_split(root, grad, features)
        leaves = [root]
        while len(leaves) < hp.num_leaves:
            cands = [lf for lf in leaves if lf.split is not None]
            if not cands:
                break
            # max gain; ties go to the earliest-created leaf
            target = max(cands, key=lambda lf: (lf.split[0], -lf.node))
            _, f, b = target.split
            go_left = self.Xb[target.rows, f] <= b
            lrows, rrows = target.rows[go_left], target.rows[~go_left]
            lg = float(np.sum(grad[lrows]))
            rg = float(np.sum(grad[rrows]))
            li, ri = new_node(lrows, lg), new_node(rrows, rg)
            i = target.node
            feature[i] = f
            threshold[i] = float(self.edges[f][b])
            bin_thr[i] = b
            left[i], right[i] = li, ri
            value[i] = 0.0
            leaves.remove(target)
            for node_id, r, g in ((li, lrows, lg), (ri, rrows, rg)):
                lf = _Leaf(node_id, r, g, len(r))
                lf.split = self._best_split(lf, grad, features)
                leaves.append(lf)
        return Tree(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=float),
            np.array(bin_thr, dtype=np.int64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=float),
            np.array(cover, dtype=float),
        )


@dataclass
class TrainReport:
    rounds_trained: int
    best_iteration: int
    stopped_reason: str
    fold_r2_history: list[list[float]]
    mean_fold_r2_history: list[float]


def _train_arrays(X, y, train_rows, folds, hp: Hyperparams, feature_names):
    for k, f in enumerate(folds):
        if len(f) == 0:
            raise GbtError(f"validation fold {k + 1} is empty")
    if len(train_rows) == 0:
        raise GbtError("training set is empty")
    Xtr, ytr = X[train_rows], y[train_rows]
    bins = build_bins(Xtr, hp.max_bins)
    Xb_all = bins.transform(X)
    base = float(np.mean(ytr))
    meta = {"seed": hp.seed, "hyperparams": hp.to_dict()}
    if np.all(ytr == ytr[0]):
        base = float(ytr[0])
        model = GbtModel(base, hp.learning_rate, [], list(feature_names), bins, meta)
        model.metadata.update(best_iteration=0, rounds_trained=0, stopped_reason="constant_target")
        return model, TrainReport(0, 0, "constant_target", [], [])

    grower = _Grower(Xb_all[train_rows], bins, hp)
    rng = np.random.default_rng(hp.seed)
    n_train, n_feat = len(train_rows), X.shape[1]
    n_bag = max(1, int(round(hp.bagging_fraction * n_train)))
    n_sub = max(1, int(round(hp.feature_fraction * n_feat)))
    pred = np.full(len(y), base)
    local = np.arange(n_train)

    def fold_scores():
        return [r2_score(y[f], pred[f]) for f in folds]

    scores = fold_scores()
    best_fold = list(scores)
    stale = [0] * len(folds)
    best_mean, best_iter = float(np.mean(scores)), 0
    fold_hist, mean_hist = [scores], [best_mean]
    trees: list[Tree] = []
    reason = "max_rounds"
    for rnd in range(1, hp.max_rounds + 1):
        grad = pred[train_rows] - ytr
        if not np.isfinite(grad).all():
            raise GbtError(f"non-finite gradient in round {rnd}")
        rows = local if n_bag == n_train else np.sort(rng.choice(n_train, n_bag, replace=False))
        feats = np.arange(n_feat) if n_sub == n_feat else np.sort(rng.choice(n_feat, n_sub, replace=False))
        tree = grower.grow(rows, grad, feats)
        if tree.n_nodes == 1:
            reason = "no_split"
            break
        trees.append(tree)
        pred += hp.learning_rate * tree.value[tree.apply_binned(Xb_all)]
        scores = fold_scores()
        fold_hist.append(scores)
        mean = float(np.mean(scores))
        mean_hist.append(mean)
        if mean > best_mean:
            best_mean, best_iter = mean, rnd
        for k, s in enumerate(scores):
            if s > best_fold[k]:
                best_fold[k], stale[k] = s, 0
            else:
                stale[k] += 1
        if max(stale) >= hp.early_stopping_patience:
            reason = "early_stopping"
            break
    rounds = len(trees)
    meta.update(best_iteration=best_iter, rounds_trained=rounds, stopped_reason=reason,
                best_mean_fold_r2=best_mean, best_fold_r2=fold_hist[best_iter])
    model = GbtModel(base, hp.learning_rate, trees[:best_iter], list(feature_names), bins, meta)
    logger.info("trained %d rounds, kept %d trees (%s)", rounds, best_iter, reason)
    return model, TrainReport(rounds, best_iter, reason, fold_hist, mean_hist)


def train(frame: TimeSeriesFrame, plan: SplitPlan, hp: Hyperparams | None = None) -> GbtModel:
    return train_with_report(frame, plan, hp)[0]


def train_with_report(frame: TimeSeriesFrame, plan: SplitPlan, hp: Hyperparams | None = None):
    hp = hp or Hyperparams()
    if len(plan.week_ids) != len(frame):
        raise GbtError("split plan does not match the frame's row count")
    model, report = _train_arrays(frame.X, frame.y, plan.train_rows, plan.val_folds, hp, frame.feature_names)
    model.metadata.update(split_seed=plan.seed, fractions=list(plan.fractions), target=frame.target_name)
    return model, report


def evaluate(model: GbtModel, frame: TimeSeriesFrame, plan: SplitPlan) -> dict:
    """R2 on train, each validation fold and test; zero-variance sets report None."""
    pred = model.predict(frame.X)
    y = frame.y
    return {
        "train_r2": safe_r2(y[plan.train_rows], pred[plan.train_rows]),
        "fold_r2": [safe_r2(y[f], pred[f]) for f in plan.val_folds],
        "test_r2": safe_r2(y[plan.test_rows], pred[plan.test_rows]),
        "n_trees": len(model.trees),
    }


def stack_trees(trees: Sequence[Tree], base_score: float, learning_rate: float, n_features: int, names=None) -> GbtModel:
    """Wrap hand-built trees as a model (no bins); used by tests and oracles."""
    names = list(names) if names is not None else [f"x{j}" for j in range(n_features)]
    return GbtModel(float(base_score), float(learning_rate), list(trees), names, None, {})
