"""End-to-end acceptance checks A1-A8.

Each check records one PASS/FAIL line, printed in the terminal summary.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from priceshap import gbt, testbed
from priceshap.benchmark import fit_benchmark, predict_benchmark, residual_load
from priceshap.cli import main
from priceshap.explain import (
    brute_force_shapley, dependency, feature_importance, shap_interactions, threshold_scan, tree_shap,
)
from priceshap.gbt import Hyperparams, r2_score
from priceshap.search import SearchSpace, consistency_study
from priceshap.split import check_plan, weekly_shuffle_split

from conftest import ACCEPTANCE_LINES, hourly
from helpers import random_ensemble


def record(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def trained_default(default_frame):
    plan = weekly_shuffle_split(default_frame, 0)
    model = gbt.train(default_frame, plan, Hyperparams())
    return default_frame, plan, model


def test_a1_tree_shap_matches_brute_force():
    rng = np.random.default_rng(2024)
    tree_shap(random_ensemble(rng, 3, 2, 3), rng.uniform(size=(2, 3)))  # compile outside the clock
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 13))
        model = random_ensemble(rng, n, int(rng.integers(1, 21)), int(rng.integers(1, 6)))
        X = rng.uniform(size=(50, n))
        phi = tree_shap(model, X).phi
        for r in range(50):
            worst = max(worst, float(np.max(np.abs(phi[r] - brute_force_shapley(model, X[r])))))
    elapsed = time.perf_counter() - t0
    record("A1", worst <= 1e-9 and elapsed <= 120,
           f"max |tree_shap - brute force| = {worst:.2e} (<= 1e-9), {elapsed:.1f}s (<= 120s)")


def test_a2_local_accuracy_and_interaction_rows(trained_default):
    frame, plan, model = trained_default
    rng = np.random.default_rng(7)
    models = [(model, frame.X[plan.test_rows])]
    for _ in range(20):
        n = int(rng.integers(2, 10))
        models.append((random_ensemble(rng, n, int(rng.integers(1, 21)), int(rng.integers(1, 6))),
                       rng.uniform(size=(50, n))))
    acc = rows_err = 0.0
    n_rows = 0
    for m, X in models:
        pred = m.predict(X)
        e = tree_shap(m, X, threads=4)
        ie = shap_interactions(m, X, threads=4)
        acc = max(acc, float(np.max(np.abs(e.base_value + e.phi.sum(axis=1) - pred))))
        acc = max(acc, float(np.max(np.abs(ie.base_value + ie.Phi.sum(axis=(1, 2)) - pred))))
        rows_err = max(rows_err, float(np.max(np.abs(ie.Phi.sum(axis=2) - e.phi))))
        n_rows += len(X)
    record("A2", acc <= 1e-8 and rows_err <= 1e-8,
           f"{n_rows} rows: local accuracy {acc:.2e}, interaction row sums {rows_err:.2e} (both <= 1e-8)")


def test_a3_merit_order_gap():
    t0 = time.perf_counter()
    frame = testbed.generate(testbed.SyntheticSpec())
    plan = weekly_shuffle_split(frame, 0)
    model = gbt.train(frame, plan, Hyperparams())
    test = plan.test_rows
    gbt_r2 = r2_score(frame.y[test], model.predict(frame.X[test]))
    r = residual_load(frame)
    bench = fit_benchmark(r[plan.train_rows], frame.y[plan.train_rows])
    bench_r2 = r2_score(frame.y[test], predict_benchmark(bench, r[test]))
    elapsed = time.perf_counter() - t0
    ok = gbt_r2 - bench_r2 >= 0.05 and abs(bench_r2 - 0.65) <= 0.05 and elapsed <= 300
    record("A3", ok, f"GBT test R2 {gbt_r2:.4f} vs benchmark {bench_r2:.4f}, gap {gbt_r2 - bench_r2:.4f} "
                     f"(>= 0.05), {elapsed:.1f}s (<= 300s)")


def test_a4_importance_and_slope_ordering(default_frame, trained_default):
    t0 = time.perf_counter()
    frame, plan, model = trained_default
    top3 = feature_importance(tree_shap(model, frame.X[plan.test_rows], threads=4)).ranking()[:3]
    space = SearchSpace.from_dict({
        "num_leaves": {"type": "int_log_uniform", "low": 15, "high": 63},
        "learning_rate": {"type": "log_uniform", "low": 0.05, "high": 0.2},
        "min_data_in_leaf": {"type": "int_uniform", "low": 10, "high": 50},
        "max_rounds": 1000,
        "early_stopping_patience": 20,
    })
    study, _ = consistency_study(frame, space, splits=2, top_k=3, trials_per_split=3,
                                 features=["load", "wind", "solar"], threads=4)
    means = {f: float(study.slopes(f).mean()) for f in ("load", "wind", "solar")}
    spec = testbed.SyntheticSpec()
    weights = {"load": spec.load_weight, "wind": spec.wind_weight, "solar": spec.solar_weight}
    want = sorted(weights, key=weights.get, reverse=True)
    got = sorted(means, key=means.get, reverse=True)
    strict = len(set(means.values())) == 3
    elapsed = time.perf_counter() - t0
    ok = set(top3) == {"load", "wind", "solar"} and got == want and strict and elapsed <= 600
    record("A4", ok, f"top-3 {top3}; mean slopes " + ", ".join(f"{f}={means[f]:.3f}" for f in got)
                     + f" vs weight order {want}; {elapsed:.1f}s (<= 600s)")


def test_a5_benchmark_exactness():
    spec = testbed.noiseless(testbed.SyntheticSpec())
    frame = testbed.generate(spec)
    plan = weekly_shuffle_split(frame, 0)
    r = residual_load(frame)
    fit = fit_benchmark(r[plan.train_rows], frame.y[plan.train_rows])
    true = np.array(spec.cubic)
    rel = float(np.max(np.abs(fit.coefficients - true) / np.abs(true)))
    test_r2 = r2_score(frame.y[plan.test_rows], predict_benchmark(fit, r[plan.test_rows]))
    record("A5", rel <= 1e-8 and test_r2 >= 1 - 1e-9,
           f"max relative coefficient error {rel:.2e} (<= 1e-8), test R2 1-{1 - test_r2:.1e} (>= 1-1e-9)")


def test_a6_threshold_detection():
    step = 10.0
    spec = testbed.SyntheticSpec(step=step, noise_sigma=0.1 * step, target_benchmark_r2=None)
    frame = testbed.generate(spec)
    plan = weekly_shuffle_split(frame, 0)
    model = gbt.train(frame, plan, Hyperparams())
    rows = plan.test_rows
    res = threshold_scan(dependency(tree_shap(model, frame.X[rows], threads=4), "oil"))
    oil = frame.column("oil")
    tol = 0.05 * float(oil.max() - oil.min())
    err = abs(res.threshold - spec.oil_threshold)
    record("A6", err <= tol and res.significant,
           f"threshold {res.threshold:.3f} vs {spec.oil_threshold} (|err| {err:.3f} <= {tol:.3f}), z={res.z_score:.1f}")


def _pipeline(root, threads):
    hours = str(24 * 7 * 20)
    root.mkdir(parents=True)
    space = root / "space.json"
    space.write_text(json.dumps({"num_leaves": {"type": "int_uniform", "low": 8, "high": 31},
                                 "bagging_fraction": {"type": "uniform", "low": 0.6, "high": 1.0},
                                 "max_rounds": 200, "early_stopping_patience": 10}))
    t = ["--threads", str(threads)]
    steps = [
        ["generate", "--out", str(root / "raw"), "--hours", hours, "--seed", "11"],
        ["ingest", "--data", str(root / "raw" / "raw.csv"), "--schema", str(root / "raw" / "schema.json"),
         "--out", str(root / "frame")],
        ["train", "--data", str(root / "frame" / "frame.csv"), "--out", str(root / "model"), "--seed", "5",
         "--search", str(space), "--trials", "4"],
        ["explain", "--data", str(root / "frame" / "frame.csv"), "--model", str(root / "model" / "model.json"),
         "--out", str(root / "explain"), "--features", "load,wind,solar", "--flip-sign", "--max-rows", "300",
         "--interaction", "wind:gas", "--main-effects", "--threshold-scan", "oil"],
        ["benchmark", "--data", str(root / "frame" / "frame.csv"), "--model", str(root / "model" / "model.json"),
         "--out", str(root / "bench")],
        ["study", "--data", str(root / "frame" / "frame.csv"), "--out", str(root / "study"), "--search", str(space),
         "--splits", "2", "--top-k", "2", "--trials", "2"],
    ]
    for argv in steps:
        assert main(argv + t) == 0, argv
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "space.json"}


def test_a7_thread_count_determinism(tmp_path):
    one = _pipeline(tmp_path / "t1", 1)
    four = _pipeline(tmp_path / "t4", 4)
    differ = sorted(str(k) for k in one if one[k] != four.get(k))
    ok = set(one) == set(four) and not differ
    record("A7", ok, f"{len(one)} output files byte-identical between --threads 1 and 4"
                     + (f"; differing: {differ}" if differ else ""))


def test_a8_split_contract():
    ts = hourly("2018-01-01T00", 168 * 8)
    failures = 0
    for seed in range(1000):
        try:
            check_plan(weekly_shuffle_split(ts, seed), len(ts))
        except AssertionError:
            failures += 1
    record("A8", failures == 0, f"{1000 - failures}/1000 seeds keep partition, week atomicity and fold balance")
