"""Random hyperparameter search and the multi-split slope consistency study."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .explain import dependency, linear_slope, tree_shap
from .gbt import GbtError, GbtModel, Hyperparams, ZeroVariance, evaluate, train_with_report
from .ingest import TimeSeriesFrame
from .split import DEFAULT_FRACTIONS, SplitPlan, weekly_shuffle_split

logger = logging.getLogger(__name__)

KINDS = ("uniform", "log_uniform", "int_uniform", "int_log_uniform", "categorical")
HP_FIELDS = [f.name for f in fields(Hyperparams) if f.name != "seed"]
INT_FIELDS = {"num_leaves", "min_data_in_leaf", "max_bins", "max_rounds", "early_stopping_patience"}


@dataclass(frozen=True)
class Dist:
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError("categorical distribution needs choices")
            object.__setattr__(self, "choices", tuple(self.choices))
        else:
            if self.low is None or self.high is None or self.low > self.high:
                raise ValueError(f"{self.kind} needs low <= high")
            if self.kind.startswith("log") or self.kind == "int_log_uniform":
                if self.low <= 0:
                    raise ValueError("log-scale bounds must be positive")

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == "uniform":
            return float(rng.uniform(self.low, self.high))
        if self.kind == "log_uniform":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        if self.kind == "int_uniform":
            return int(rng.integers(int(self.low), int(self.high) + 1))
        v = math.exp(rng.uniform(math.log(self.low), math.log(self.high + 1)))
        return int(min(max(math.floor(v), self.low), self.high))

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"type": self.kind, "choices": list(self.choices)}
        return {"type": self.kind, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class SearchSpace:
    dists: dict[str, Dist]

    def __post_init__(self):
        unknown = set(self.dists) - set(HP_FIELDS)
        if unknown:
            raise ValueError(f"search space names unknown hyperparameter(s): {', '.join(sorted(unknown))}")

    @classmethod
    def default(cls) -> SearchSpace:
        return cls({
            "num_leaves": Dist("int_log_uniform", 8, 256),
            "learning_rate": Dist("log_uniform", 0.01, 0.3),
            "min_data_in_leaf": Dist("int_uniform", 5, 100),
            "max_bins": Dist("categorical", choices=(63, 127, 255)),
            "lambda_l2": Dist("uniform", 0.0, 10.0),
            "feature_fraction": Dist("uniform", 0.6, 1.0),
            "bagging_fraction": Dist("uniform", 0.6, 1.0),
            "early_stopping_patience": Dist("int_uniform", 10, 50),
            "max_rounds": Dist("categorical", choices=(2000,)),
        })

    @classmethod
    def from_dict(cls, d: dict) -> SearchSpace:
        dists = {}
        for name, spec in d.items():
            if not isinstance(spec, dict):
                dists[name] = Dist("categorical", choices=(spec,))
                continue
            spec = dict(spec)
            kind = spec.pop("type")
            dists[name] = Dist(kind, spec.get("low"), spec.get("high"), spec.get("choices"))
        return cls(dists)

    def to_dict(self) -> dict:
        return {k: self.dists[k].to_dict() for k in HP_FIELDS if k in self.dists}

    def sample(self, seed: int) -> Hyperparams:
        # fixed field order keeps draws reproducible from the trial seed alone
        rng = np.random.default_rng(seed)
        values = {}
        for name in HP_FIELDS:
            if name in self.dists:
                v = self.dists[name].sample(rng)
                values[name] = int(v) if name in INT_FIELDS else float(v)
        return Hyperparams(**values, seed=int(seed))


@dataclass
class Trial:
    index: int
    seed: int
    hyperparams: Hyperparams
    fold_r2: list[float | None] = field(default_factory=list)
    test_r2: float | None = None
    train_r2: float | None = None
    n_trees: int = 0
    error: str | None = None
    model: GbtModel | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.test_r2 is not None

    @property
    def mean_fold_r2(self) -> float | None:
        vals = [v for v in self.fold_r2 if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "hyperparams": self.hyperparams.to_dict(),
            "fold_r2": self.fold_r2,
            "mean_fold_r2": self.mean_fold_r2,
            "train_r2": self.train_r2,
            "test_r2": self.test_r2,
            "n_trees": self.n_trees,
            "error": self.error,
        }


@dataclass
class SearchResult:
    trials: list[Trial]
    ranking: list[int]  # trial indices, best first
    select_on: str
    split_seed: int

    @property
    def best(self) -> Trial:
        return self.trials[self.ranking[0]]

    def top(self, k: int) -> list[Trial]:
        return [self.trials[i] for i in self.ranking[:k]]

    def to_dict(self) -> dict:
        return {
            "select_on": self.select_on,
            # selecting on test R2 reuses the test set for model choice
            "selection_uses_test_set": self.select_on == "test",
            "split_seed": self.split_seed,
            "ranking": self.ranking,
            "trials": [t.to_dict() for t in self.trials],
        }


def trial_seeds(seed: int, trials: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**63 - 1, size=trials)]


def _run_trial(frame: TimeSeriesFrame, plan: SplitPlan, index: int, seed: int, hp: Hyperparams) -> Trial:
    trial = Trial(index, seed, hp)
    try:
        model, _ = train_with_report(frame, plan, hp)
        metrics = evaluate(model, frame, plan)
    except (GbtError, ZeroVariance, ValueError) as exc:
        trial.error = f"{type(exc).__name__}: {exc}"
        logger.warning("trial %d failed: %s", index, trial.error)
        return trial
    trial.model = model
    trial.fold_r2 = metrics["fold_r2"]
    trial.test_r2 = metrics["test_r2"]
    trial.train_r2 = metrics["train_r2"]
    trial.n_trees = metrics["n_trees"]
    return trial


def random_search(
    frame: TimeSeriesFrame,
    plan: SplitPlan,
    space: SearchSpace,
    trials: int,
    seed: int,
    select_on: str = "test",
    threads: int = 1,
) -> SearchResult:
    """Train ``trials`` sampled configurations; rank by test R2 (or mean fold R2)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if select_on not in ("test", "validation"):
        raise ValueError("select_on must be 'test' or 'validation'")
    seeds = trial_seeds(seed, trials)
    hps = [space.sample(s) for s in seeds]
    jobs = list(enumerate(zip(seeds, hps)))
    run = lambda job: _run_trial(frame, plan, job[0], job[1][0], job[1][1])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    ok = [t for t in results if t.ok and (select_on == "test" or t.mean_fold_r2 is not None)]
    if not ok:
        raise GbtError(f"all {trials} search trials failed")
    key = (lambda t: t.test_r2) if select_on == "test" else (lambda t: t.mean_fold_r2)
    ranking = [t.index for t in sorted(ok, key=lambda t: (-key(t), t.index))]
    return SearchResult(results, ranking, select_on, plan.seed)


@dataclass
class SlopeStudy:
    records: list[tuple[str, int, int, float]]  # feature, split seed, trial index, slope
    features: list[str]
    flip_sign: list[str]

    def slopes(self, feature: str) -> np.ndarray:
        return np.array([r[3] for r in self.records if r[0] == feature])

    def summary(self) -> dict:
        out = {}
        for f in self.features:
            s = self.slopes(f)
            out[f] = {
                "count": int(len(s)),
                "mean": float(s.mean()),
                "q05": float(np.quantile(s, 0.05)),
                "q25": float(np.quantile(s, 0.25)),
                "median": float(np.median(s)),
                "q75": float(np.quantile(s, 0.75)),
                "q95": float(np.quantile(s, 0.95)),
                "sign_flipped": f in self.flip_sign,
            }
        return out

    def to_csv(self) -> str:
        lines = ["feature,split_seed,trial_id,slope"]
        lines += [f"{f},{s},{t},{slope!r}" for f, s, t, slope in self.records]
        return "\n".join(lines) + "\n"


def consistency_study(
    frame: TimeSeriesFrame,
    space: SearchSpace,
    splits: int,
    top_k: int,
    trials_per_split: int,
    features: list[str],
    flip_sign: list[str] | tuple[str, ...] = ("wind", "solar"),
    base_seed: int = 0,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    rows: str = "test",
    select_on: str = "test",
    threads: int = 1,
) -> tuple[SlopeStudy, list[SearchResult]]:
    """Dependency slopes of the ``top_k`` models of a search on each of ``splits`` splits."""
    if top_k > trials_per_split:
        raise ValueError("top_k must not exceed trials_per_split")
    unknown = [f for f in features if f not in frame.feature_names]
    if unknown:
        raise ValueError(f"unknown feature(s): {', '.join(unknown)}")
    flips = [f for f in flip_sign if f in features]
    records = []
    searches = []
    for i in range(splits):
        split_seed = base_seed + i
        plan = weekly_shuffle_split(frame, split_seed, fractions)
        result = random_search(frame, plan, space, trials_per_split, split_seed, select_on, threads)
        searches.append(result)
        idx = plan.subset_rows(rows)
        for trial in result.top(top_k):
            expl = tree_shap(trial.model, frame.X[idx], threads=threads, row_ids=idx)
            for f in features:
                slope, _ = linear_slope(dependency(expl, f, flip_sign=f in flips))
                records.append((f, split_seed, trial.index, slope))
    return SlopeStudy(records, list(features), flips), searches
