"""Command-line pipeline: generate, ingest, train, explain, benchmark, study.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Diagnostics go to stderr; data goes to files under ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, ingest, testbed
from .benchmark import ResidualLoadColumns, fit_benchmark, predict_benchmark, residual_load
from .explain import dependency, feature_importance, linear_slope, shap_interactions, threshold_scan, tree_shap
from .gbt import GbtError, GbtModel, Hyperparams, ZeroVariance, evaluate, safe_r2, train_with_report
from .ingest import IngestError, TimeSeriesFrame
from .search import SearchSpace, consistency_study, random_search
from .split import DEFAULT_FRACTIONS, TooFewWeeks, weekly_shuffle_split

logger = logging.getLogger("priceshap")


class UsageError(Exception):
    """Bad flags, missing or malformed config files: exit code 2."""


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


@dataclass
class Provenance:
    config: dict
    data_paths: list
    seed: int | None

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "config_hash": sha256_bytes(dump_json(self.config).encode()),
            "data_hash": file_hash(self.data_paths) if self.data_paths else None,
            "seed": self.seed,
        }

    def csv_header(self, **extra) -> str:
        items = {**self.to_dict(), **extra}
        return "# " + " ".join(f"{k}={v}" for k, v in sorted(items.items())) + "\n"


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_json(path: str, what: str):
    p = _existing(path, what)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {p} is not valid JSON: {exc}") from exc


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc}") from exc
    return p


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"fractions must be three comma-separated numbers, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"fractions must be three comma-separated numbers, got {text!r}")
    return parts


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _read_frame(path: str) -> TimeSeriesFrame:
    _existing(path, "frame file")
    try:
        return ingest.read_frame(path)
    except IngestError as exc:
        raise UsageError(str(exc)) from exc


def _hyperparams(args) -> Hyperparams:
    raw = _load_json(args.hp, "hyperparameter file") if args.hp else {}
    try:
        hp = Hyperparams.from_dict(raw)
        return Hyperparams(**{**hp.to_dict(), "seed": args.seed})
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid hyperparameters: {exc}") from exc


def _space(args) -> SearchSpace:
    if not args.search:
        return SearchSpace.default()
    try:
        return SearchSpace.from_dict(_load_json(args.search, "search space file"))
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"invalid search space: {exc}") from exc


def _check_features(frame: TimeSeriesFrame, names) -> None:
    unknown = [n for n in names if n not in frame.feature_names]
    if unknown:
        raise UsageError(f"unknown feature(s): {', '.join(unknown)}")


RENEWABLES = ("wind", "solar")


def cmd_generate(args) -> int:
    out = _out_dir(args.out)
    spec_dict = _load_json(args.spec, "synthetic spec") if args.spec else {}
    spec_dict["seed"] = args.seed
    if args.hours is not None:
        spec_dict["hours"] = args.hours
    try:
        spec = testbed.SyntheticSpec.from_dict(spec_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from exc
    if args.noiseless:
        spec = testbed.noiseless(spec)
    paths = testbed.write_dataset(spec, out)
    _, sigma = testbed.generate_table(spec)
    prov = Provenance({"command": "generate", "spec": spec.to_dict()}, [], args.seed)
    write(out / "generate_report.json", dump_json({
        "provenance": prov.to_dict(), "spec": spec.to_dict(), "noise_sigma_used": sigma,
        "files": {k: p.name for k, p in paths.items()},
    }))
    return 0


def cmd_ingest(args) -> int:
    out = _out_dir(args.out)
    schema_path = _existing(args.schema, "schema file")
    data_paths = [_existing(p, "data file") for p in args.data]
    try:
        schema = ingest.load_schema(schema_path)
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"invalid schema file {schema_path}: {exc}") from exc
    except IngestError as exc:
        raise UsageError(f"invalid schema file {schema_path}: {exc}") from exc
    frame = ingest.ingest_files(data_paths, schema)
    prov = Provenance({"command": "ingest", "schema": [s.to_dict() for s in schema]},
                      data_paths + [schema_path], None)
    frame = TimeSeriesFrame(frame.timestamps, frame.columns, frame.values, frame.target_name,
                            frame.dropped_rows, {"provenance": prov.to_dict()})
    ingest.write_frame(frame, out / "frame.csv")
    stats = {
        c.name: {
            "unit": c.unit, "role": c.role,
            "min": float(v.min()), "mean": float(v.mean()), "max": float(v.max()), "std": float(v.std()),
        }
        for c, v in zip(frame.columns, frame.values.T)
    }
    write(out / "ingest_report.json", dump_json({
        "provenance": prov.to_dict(), "rows": len(frame), "dropped": frame.dropped_rows,
        "first": ingest.format_timestamp(frame.timestamps[0]), "last": ingest.format_timestamp(frame.timestamps[-1]),
        "columns": stats,
    }))
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    frame = _read_frame(args.data)
    plan = weekly_shuffle_split(frame, args.seed, args.fractions)
    config = {"command": "train", "fractions": list(args.fractions), "select_on": args.select}
    if args.search or args.trials:
        space = _space(args)
        config.update(search=space.to_dict(), trials=args.trials or 50)
        result = random_search(frame, plan, space, args.trials or 50, args.seed, args.select, args.threads)
        models_dir = _out_dir(str(out / "models"))
        for t in result.trials:
            if t.model is not None:
                write(models_dir / f"trial_{t.index:04d}.json", t.model.to_json())
        model = result.best.model
        config["selected_trial"] = result.best.index
    else:
        hp = _hyperparams(args)
        config["hyperparams"] = hp.to_dict()
        model, _ = train_with_report(frame, plan, hp)
        result = None
    metrics = evaluate(model, frame, plan)
    prov = Provenance(config, [args.data], args.seed)
    model.metadata["provenance"] = prov.to_dict()
    write(out / "model.json", model.to_json())
    write(out / "split.json", plan.to_json())
    metrics.update(
        provenance=prov.to_dict(),
        model_hash=sha256_bytes(model.to_json().encode()),
        best_iteration=model.metadata.get("best_iteration"),
        rounds_trained=model.metadata.get("rounds_trained"),
        stopped_reason=model.metadata.get("stopped_reason"),
        rows={"train": len(plan.train_rows), "val": [len(f) for f in plan.val_folds], "test": len(plan.test_rows)},
        zero_variance_flags={k: metrics[k] is None for k in ("train_r2", "test_r2")},
    )
    write(out / "metrics.json", dump_json(metrics))
    if result is not None:
        write(out / "search_result.json", dump_json({"provenance": prov.to_dict(), **result.to_dict()}))
    return 0


def _model_and_plan(args, frame):
    text = _existing(args.model, "model file").read_text(encoding="utf-8")
    try:
        model = GbtModel.from_json(text)
    except (json.JSONDecodeError, KeyError, GbtError) as exc:
        raise UsageError(f"invalid model file {args.model}: {exc}") from exc
    if model.feature_names != frame.feature_names:
        raise UsageError("model features do not match frame features")
    seed = model.metadata.get("split_seed", args.seed)
    fractions = tuple(model.metadata.get("fractions", args.fractions))
    return model, weekly_shuffle_split(frame, seed, fractions), sha256_bytes(text.encode())


def _write_rows_csv(path, header_line, columns, rows):
    lines = [header_line, ",".join(columns)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(v) for v in r))
    write(path, "\n".join(lines) + "\n")


def cmd_explain(args) -> int:
    out = _out_dir(args.out)
    frame = _read_frame(args.data)
    model, plan, model_hash = _model_and_plan(args, frame)
    pairs = []
    for spec in args.interaction:
        if ":" not in spec:
            raise UsageError(f"--interaction expects j:k, got {spec!r}")
        pairs.append(tuple(spec.split(":", 1)))
    wanted = set(args.features) | set(args.flip_sign) | set(args.threshold_scan) | {n for p in pairs for n in p}
    _check_features(frame, wanted)

    rows = plan.subset_rows(args.rows)
    if args.max_rows is not None:
        rows = rows[: args.max_rows]
    config = {"command": "explain", "rows": args.rows, "max_rows": args.max_rows, "features": args.features,
              "flip_sign": args.flip_sign, "interaction": args.interaction, "main_effects": args.main_effects,
              "threshold_scan": args.threshold_scan, "window": args.window}
    prov = Provenance(config, [args.data, args.model], plan.seed)
    header = prov.csv_header(model_hash=model_hash, split_seed=plan.seed)
    X = frame.X[rows]
    need_inter = bool(pairs) or args.main_effects
    if need_inter:
        inter = shap_interactions(model, X, threads=args.threads, row_ids=rows)
        expl = inter
    else:
        inter = None
        expl = tree_shap(model, X, threads=args.threads, row_ids=rows)
    names = expl.feature_names
    phi = expl.phi

    report = feature_importance(expl)
    write(out / "importance.json", dump_json({
        "provenance": prov.to_dict(), "model_hash": model_hash, "split_seed": plan.seed,
        "rows": args.rows, "n_rows": len(rows), "base_value": expl.base_value, **report.to_dict(),
    }))
    _write_rows_csv(out / "shap_values.csv", header.rstrip("\n"), ["row_id", "feature", "value", "phi"],
                    ((int(r), names[j], float(X[i, j]), float(phi[i, j]))
                     for i, r in enumerate(rows) for j in range(len(names))))

    slopes = {}
    for f in args.features:
        dep = dependency(expl, f, flip_sign=f in args.flip_sign)
        _write_rows_csv(out / f"dependency_{f}.csv", header.rstrip("\n"), ["row_id", "x", "phi"],
                        ((int(r), float(x), float(p)) for r, x, p in zip(rows, dep.x, dep.phi)))
        slope, intercept = linear_slope(dep)
        slopes[f] = {"slope": slope, "intercept": intercept, "sign_flipped": dep.flip_sign}
        if args.main_effects:
            main = dependency(inter, f, flip_sign=f in args.flip_sign, main_effect=True)
            _write_rows_csv(out / f"main_effect_{f}.csv", header.rstrip("\n"), ["row_id", "x", "phi_main"],
                            ((int(r), float(x), float(p)) for r, x, p in zip(rows, main.x, main.phi)))
            ms, mi = linear_slope(main)
            slopes[f].update(main_effect_slope=ms, main_effect_intercept=mi)
    if slopes:
        write(out / "slopes.json", dump_json({"provenance": prov.to_dict(), "model_hash": model_hash,
                                              "split_seed": plan.seed, "slopes": slopes}))
    for j, k in pairs:
        dep = dependency(inter, j, flip_sign=j in args.flip_sign, interacting=k)
        _write_rows_csv(out / f"interaction_{j}__{k}.csv", header.rstrip("\n"),
                        ["row_id", "x", "Phi", "x_interacting"],
                        ((int(r), float(x), float(p), float(xk))
                         for r, x, p, xk in zip(rows, dep.x, dep.phi, dep.interacting_x)))
    if inter is not None:
        m = len(names)
        _write_rows_csv(out / "interactions.csv", header.rstrip("\n"), ["row_id", "feature_j", "feature_k", "Phi"],
                        ((int(r), names[a], names[b], float(inter.Phi[i, a, b]))
                         for i, r in enumerate(rows) for a in range(m) for b in range(m)))
    if args.threshold_scan:
        results = {}
        for f in args.threshold_scan:
            res = threshold_scan(dependency(expl, f), window=args.window)
            results[f] = res.to_dict()
        write(out / "thresholds.json", dump_json({"provenance": prov.to_dict(), "model_hash": model_hash,
                                                  "split_seed": plan.seed, "window": args.window,
                                                  "thresholds": results}))
    return 0


def cmd_benchmark(args) -> int:
    out = _out_dir(args.out)
    frame = _read_frame(args.data)
    cols = ResidualLoadColumns(args.load, args.wind, args.solar)
    for c in (cols.load, cols.wind, cols.solar):
        if c not in frame.names:
            raise UsageError(f"residual-load column {c!r} not in frame")
    data_paths = [args.data]
    if args.model:
        model, plan, model_hash = _model_and_plan(args, frame)
        data_paths.append(args.model)
    else:
        model, model_hash = None, None
        plan = weekly_shuffle_split(frame, args.seed, args.fractions)
    r = residual_load(frame, cols)
    y = frame.y
    fit_rows = plan.train_rows if args.fit_on == "train" else np.arange(len(frame))
    bench = fit_benchmark(r[fit_rows], y[fit_rows], cols)
    test = plan.test_rows
    bench_r2 = safe_r2(y[test], predict_benchmark(bench, r[test]))
    gbt_r2 = safe_r2(y[test], model.predict(frame.X[test])) if model is not None else None
    config = {"command": "benchmark", "fit_on": args.fit_on, "columns": vars(cols)}
    prov = Provenance(config, data_paths, plan.seed)
    write(out / "benchmark.json", dump_json({"provenance": prov.to_dict(), "split_seed": plan.seed,
                                             "fit_on": args.fit_on, **bench.to_dict()}))
    write(out / "comparison.json", dump_json({
        "provenance": prov.to_dict(), "split_seed": plan.seed, "model_hash": model_hash,
        "benchmark_test_r2": bench_r2, "gbt_test_r2": gbt_r2,
        "difference": (gbt_r2 - bench_r2) if gbt_r2 is not None and bench_r2 is not None else None,
        "n_test_rows": int(len(test)),
    }))
    return 0


def cmd_study(args) -> int:
    out = _out_dir(args.out)
    frame = _read_frame(args.data)
    space = _space(args)
    _check_features(frame, args.features)
    study, searches = consistency_study(
        frame, space, splits=args.splits, top_k=args.top_k, trials_per_split=args.trials,
        features=args.features, flip_sign=args.flip_sign, base_seed=args.seed, fractions=args.fractions,
        rows=args.rows, select_on=args.select, threads=args.threads,
    )
    config = {"command": "study", "search": space.to_dict(), "splits": args.splits, "top_k": args.top_k,
              "trials": args.trials, "features": args.features, "flip_sign": args.flip_sign,
              "fractions": list(args.fractions), "rows": args.rows, "select_on": args.select}
    prov = Provenance(config, [args.data], args.seed)
    write(out / "slopes.csv", prov.csv_header() + study.to_csv())
    write(out / "slope_summary.json", dump_json({"provenance": prov.to_dict(), "summary": study.summary()}))
    write(out / "search_results.json", dump_json({"provenance": prov.to_dict(),
                                                  "searches": [s.to_dict() for s in searches]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="priceshap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, help="frame CSV (with .meta.json sidecar)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)

    g = sub.add_parser("generate", help="write a synthetic raw CSV and schema")
    common(g, data=False)
    g.add_argument("--hours", type=int)
    g.add_argument("--spec", help="JSON overrides for the synthetic spec")
    g.add_argument("--noiseless", action="store_true", help="price exactly cubic in residual load")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="raw CSV(s) + schema -> clean frame")
    i.add_argument("--data", required=True, nargs="+", help="one or more raw CSV segments")
    i.add_argument("--schema", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--seed", type=int, default=None)
    i.add_argument("--threads", type=int, default=1)
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("train", help="train a GBT (fixed hyperparameters or random search)")
    common(t)
    t.add_argument("--fractions", type=_fractions, default=DEFAULT_FRACTIONS)
    t.add_argument("--hp", help="JSON hyperparameters")
    t.add_argument("--search", help="JSON search space; enables random search")
    t.add_argument("--trials", type=int)
    t.add_argument("--select", choices=("test", "validation"), default="test")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="SHAP values, importances, dependencies, interactions")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--fractions", type=_fractions, default=DEFAULT_FRACTIONS)
    e.add_argument("--rows", choices=("test", "train", "val", "all"), default="test")
    e.add_argument("--max-rows", type=int)
    e.add_argument("--importance", action="store_true", help="importance.json (always written)")
    e.add_argument("--features", type=_names, default=[], help="comma list for dependency exports")
    e.add_argument("--dependency", dest="features_extra", action="append", default=[])
    e.add_argument("--flip-sign", type=_names, nargs="?", const=list(RENEWABLES), default=[],
                   help="comma list of features whose x is negated; bare flag means wind,solar")
    e.add_argument("--interaction", action="append", default=[], help="j:k, repeatable")
    e.add_argument("--main-effects", action="store_true")
    e.add_argument("--threshold-scan", action="append", default=[])
    e.add_argument("--window", type=int, default=50)
    e.set_defaults(func=cmd_explain)

    b = sub.add_parser("benchmark", help="cubic merit-order benchmark and comparison")
    common(b)
    b.add_argument("--model", help="GBT model.json to compare against (also fixes the split)")
    b.add_argument("--fractions", type=_fractions, default=DEFAULT_FRACTIONS)
    b.add_argument("--fit-on", choices=("train", "all"), default="train")
    b.add_argument("--load", default="load")
    b.add_argument("--wind", default="wind")
    b.add_argument("--solar", default="solar")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("study", help="slope consistency over splits x top-k models")
    common(s)
    s.add_argument("--search", help="JSON search space (default space otherwise)")
    s.add_argument("--trials", type=int, default=50, help="trials per split")
    s.add_argument("--splits", type=int, default=10)
    s.add_argument("--top-k", type=int, default=10)
    s.add_argument("--features", type=_names, default=["load", "wind", "solar"])
    s.add_argument("--flip-sign", type=_names, nargs="?", const=list(RENEWABLES), default=list(RENEWABLES))
    s.add_argument("--fractions", type=_fractions, default=DEFAULT_FRACTIONS)
    s.add_argument("--rows", choices=("test", "train", "val", "all"), default="test")
    s.add_argument("--select", choices=("test", "validation"), default="test")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "explain" and args.features_extra:
        args.features = list(dict.fromkeys(args.features + args.features_extra))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"priceshap: error: {exc}", file=sys.stderr)
        return 2
    except (GbtError, IngestError, TooFewWeeks, ZeroVariance, ValueError, OSError) as exc:
        print(f"priceshap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
