import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priceshap import gbt
from priceshap.gbt import GbtError, GbtModel, Hyperparams, Tree, ZeroVariance, build_bins, r2_score
from priceshap.split import weekly_shuffle_split

from helpers import make_frame, random_ensemble

# 2017-01-01 is a Sunday, so 2000 hours cover 13 ISO weeks and every fold is non-empty
START = "2017-01-01T00"


def fit(X, y, split_seed=0, **hp):
    frame = make_frame(X, y, START)
    plan = weekly_shuffle_split(frame, split_seed)
    model = gbt.train(frame, plan, Hyperparams(**hp))
    return model, frame, plan


def test_bins_are_balanced(rng):
    X = rng.uniform(size=(10000, 1))
    bins = build_bins(X, 10)
    counts = np.bincount(bins.transform(X)[:, 0])
    assert len(counts) == 10
    assert counts.min() >= 990 and counts.max() <= 1010


def test_bins_few_distinct_values():
    X = np.array([[1.0], [2.0], [2.0], [5.0]])
    bins = build_bins(X, 255)
    assert bins.edges[0].tolist() == [1.5, 3.5]
    assert bins.transform(X)[:, 0].tolist() == [0, 1, 1, 2]


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300), st.integers(2, 40))
def test_bins_respect_limit_and_order(vals, max_bins):
    X = np.array(vals)[:, None]
    bins = build_bins(X, max_bins)
    assert bins.n_bins(0) <= max_bins
    order = np.argsort(X[:, 0], kind="stable")
    assert np.all(np.diff(bins.transform(X)[order, 0]) >= 0)


def test_constant_target_gives_no_trees(rng):
    X = rng.uniform(size=(2000, 2))
    model, frame, _ = fit(X, np.full(2000, 42.0))
    assert model.trees == []
    assert np.all(model.predict(X) == 42.0)
    assert model.metadata["stopped_reason"] == "constant_target"


def test_step_function_stump(rng):
    x = rng.uniform(size=2000)
    y = np.where(x > 0.5, 10.0, 0.0)
    model, _, _ = fit(x[:, None], y, num_leaves=2, learning_rate=1.0, min_data_in_leaf=1)
    assert len(model.trees) >= 1
    t = model.trees[0]
    assert t.n_leaves == 2
    lo, hi = np.sort(x[x <= 0.5])[-1], np.sort(x[x > 0.5])[0]
    assert lo <= t.threshold[0] < hi
    pred = model.predict(x[:, None])
    assert np.max(np.abs(pred - y)) < 1e-9


def test_linear_target_fits_well(rng):
    X = rng.uniform(size=(2000, 3))
    y = 3 * X[:, 0] + rng.normal(0, 0.1, 2000)
    model, frame, plan = fit(X, y)
    assert gbt.evaluate(model, frame, plan)["test_r2"] >= 0.95


def test_prediction_decomposition(rng):
    X = rng.uniform(size=(2000, 3))
    y = np.sin(6 * X[:, 0]) + X[:, 1] * X[:, 2]
    model, _, _ = fit(X, y, max_rounds=30)
    manual = model.base_score + model.learning_rate * sum(t.predict(X) for t in model.trees)
    assert np.max(np.abs(manual - model.predict(X))) <= 1e-12


def test_r2_examples():
    assert r2_score([1, 2, 3], [1, 2, 3]) == 1.0
    assert r2_score([1, 2, 3], [2, 2, 2]) == 0.0
    assert r2_score([1, 2, 3], [3, 2, 1]) == pytest.approx(-3.0)
    with pytest.raises(ZeroVariance):
        r2_score([5, 5, 5], [1, 2, 3])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=50))
def test_r2_at_most_one(y):
    y = np.array(y)
    if np.ptp(y) > 1e-6:
        pred = y[::-1].copy()
        assert r2_score(y, pred) <= 1.0 + 1e-12


def test_training_loss_never_increases(rng):
    X = rng.uniform(size=(2000, 2))
    y = X[:, 0] ** 2 + rng.normal(0, 0.05, 2000)
    model, frame, plan = fit(X, y, max_rounds=40, early_stopping_patience=1000)
    tr = plan.train_rows
    pred = np.full(len(tr), model.base_score)
    losses = [np.mean((y[tr] - pred) ** 2)]
    for t in model.trees:
        pred = pred + model.learning_rate * t.predict(X[tr])
        losses.append(np.mean((y[tr] - pred) ** 2))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_cover_consistency_and_leaf_limits(rng):
    X = rng.uniform(size=(2000, 3))
    y = X @ [1.0, -2.0, 0.5] + rng.normal(0, 0.1, 2000)
    model, _, plan = fit(X, y, num_leaves=7, min_data_in_leaf=25, max_rounds=20)
    for t in model.trees:
        internal = t.feature >= 0
        assert np.all(t.cover[internal] == t.cover[t.left[internal]] + t.cover[t.right[internal]])
        assert t.cover[0] == len(plan.train_rows)
        assert t.n_leaves <= 7
        assert t.cover[~internal].min() >= 25


def test_early_stopping_truncates_to_best_round(rng):
    X = rng.uniform(size=(2000, 2))
    y = rng.normal(size=2000)  # pure noise: validation R2 peaks very early
    model, frame, plan = fit(X, y, max_rounds=200, early_stopping_patience=5)
    meta = model.metadata
    assert meta["stopped_reason"] == "early_stopping"
    assert len(model.trees) == meta["best_iteration"] < meta["rounds_trained"]
    folds = [gbt.r2_score(y[f], model.predict(X[f])) for f in plan.val_folds]
    assert np.mean(folds) == pytest.approx(meta["best_mean_fold_r2"], abs=1e-12)


def test_json_round_trip(rng, tmp_path):
    X = rng.uniform(size=(2000, 3))
    y = X[:, 0] + X[:, 1] ** 2
    model, _, _ = fit(X, y, max_rounds=15)
    text = model.to_json()
    back = GbtModel.from_json(text)
    assert np.array_equal(back.predict(X), model.predict(X))
    assert back.to_json() == text
    assert json.loads(text)["format"] == "priceshap-gbt/1"


def test_seed_determinism(rng):
    X = rng.uniform(size=(2000, 4))
    y = X[:, 0] * X[:, 1] + X[:, 2]
    kw = dict(max_rounds=20, bagging_fraction=0.7, feature_fraction=0.5)
    a = fit(X, y, split_seed=3, seed=1, **kw)[0].to_json()
    assert fit(X, y, split_seed=3, seed=1, **kw)[0].to_json() == a
    assert fit(X, y, split_seed=3, seed=9, **kw)[0].to_json() != a


def test_hyperparam_validation():
    with pytest.raises(ValueError):
        Hyperparams(num_leaves=1)
    with pytest.raises(ValueError):
        Hyperparams(learning_rate=0)
    with pytest.raises(ValueError):
        Hyperparams.from_dict({"depth": 3})
    assert Hyperparams.from_dict({"num_leaves": "15"}).num_leaves == 15


def test_empty_fold_is_an_error(rng):
    # six weeks plus a part-week gives 7 weeks: floor rule leaves validation folds empty
    X = rng.uniform(size=(168 * 7, 1))
    frame = make_frame(X, X[:, 0], "2018-01-01T00")
    plan = weekly_shuffle_split(frame, 0)
    if any(len(f) == 0 for f in plan.val_folds):
        with pytest.raises(GbtError, match="empty"):
            gbt.train(frame, plan)


def test_non_finite_rows_rejected(rng):
    X = rng.uniform(size=(2000, 2))
    model, _, _ = fit(X, X[:, 0], max_rounds=3)
    with pytest.raises(GbtError, match="row"):
        model.predict(np.array([[np.nan, 0.0]]))
    with pytest.raises(GbtError):
        model.predict(np.zeros((1, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tree_dict_round_trip(seed):
    model = random_ensemble(np.random.default_rng(seed), 4, 3, 4)
    X = np.random.default_rng(seed + 1).uniform(size=(50, 4))
    for t in model.trees:
        back = Tree.from_dict(t.to_dict())
        assert np.array_equal(back.predict(X), t.predict(X))
