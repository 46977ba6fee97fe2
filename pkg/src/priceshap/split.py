"""Weekly-shuffled train / validation / test partitions.

Rows are grouped by ISO-8601 week, the week order is permuted with
``rng.shuffled`` and consecutive blocks of weeks become train, validation
and test. Validation weeks are dealt round-robin into four folds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .ingest import TimeSeriesFrame
from .rng import shuffled

N_FOLDS = 4
DEFAULT_FRACTIONS = (0.48, 0.32, 0.20)
MIN_WEEKS = 7


class TooFewWeeks(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    fractions: tuple[float, float, float]
    week_ids: np.ndarray  # per row, index into week_labels
    week_labels: tuple[str, ...]  # "YYYY-Www", sorted
    week_subset: tuple[str, ...]  # per week: "train", "val1".."val4", "test"
    train_rows: np.ndarray
    val_folds: tuple[np.ndarray, ...]
    test_rows: np.ndarray

    @property
    def val_rows(self) -> np.ndarray:
        return np.sort(np.concatenate(self.val_folds))

    def subset_rows(self, name: str) -> np.ndarray:
        if name == "train":
            return self.train_rows
        if name == "test":
            return self.test_rows
        if name == "val":
            return self.val_rows
        if name == "all":
            return np.arange(len(self.week_ids))
        raise ValueError(f"unknown row subset {name!r}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "weeks": {label: sub for label, sub in zip(self.week_labels, self.week_subset)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def iso_week_labels(timestamps: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Per-row week index and the sorted distinct ISO week labels."""
    days = timestamps.astype("datetime64[D]")
    uniq_days, day_inv = np.unique(days, return_inverse=True)
    day_labels = []
    for d in uniq_days.astype(object):
        year, week, _ = d.isocalendar()
        day_labels.append(f"{year:04d}-W{week:02d}")
    labels = sorted(set(day_labels))
    lookup = {lab: i for i, lab in enumerate(labels)}
    day_week = np.array([lookup[lab] for lab in day_labels], dtype=np.int64)
    return day_week[day_inv], labels


def _week_counts(n_weeks: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    # floor for train and validation, remainder to test; the epsilon absorbs
    # products such as 0.48 * 25 landing a hair below an integer
    n_train = math.floor(fractions[0] * n_weeks + 1e-9)
    n_val = math.floor(fractions[1] * n_weeks + 1e-9)
    return n_train, n_val, n_weeks - n_train - n_val


def weekly_shuffle_split(
    frame: TimeSeriesFrame | np.ndarray,
    seed: int,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> SplitPlan:
    """Partition rows of ``frame`` (or a raw timestamp array) by shuffled weeks."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    timestamps = frame.timestamps if isinstance(frame, TimeSeriesFrame) else np.asarray(frame)
    if len(timestamps) == 0:
        raise ValueError("cannot split an empty frame")
    week_ids, labels = iso_week_labels(timestamps)
    n_weeks = len(labels)
    if n_weeks < MIN_WEEKS:
        raise TooFewWeeks(f"frame spans {n_weeks} ISO weeks, need at least {MIN_WEEKS}")
    n_train, n_val, _ = _week_counts(n_weeks, fractions)
    order = shuffled(list(range(n_weeks)), seed)
    subset = [""] * n_weeks
    for pos, w in enumerate(order):
        if pos < n_train:
            subset[w] = "train"
        elif pos < n_train + n_val:
            subset[w] = f"val{(pos - n_train) % N_FOLDS + 1}"
        else:
            subset[w] = "test"
    row_subset = np.array(subset, dtype=object)[week_ids]

    def rows(name):
        return np.flatnonzero(row_subset == name)

    return SplitPlan(
        seed=int(seed),
        fractions=fractions,
        week_ids=week_ids,
        week_labels=tuple(labels),
        week_subset=tuple(subset),
        train_rows=rows("train"),
        val_folds=tuple(rows(f"val{k + 1}") for k in range(N_FOLDS)),
        test_rows=rows("test"),
    )


def repeated_splits(
    frame: TimeSeriesFrame | np.ndarray,
    base_seed: int,
    count: int,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> list[SplitPlan]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [weekly_shuffle_split(frame, base_seed + i, fractions) for i in range(count)]


def check_plan(plan: SplitPlan, n_rows: int) -> None:
    """Assert partition, week atomicity and fold balance; raises AssertionError."""
    sets = [plan.train_rows, *plan.val_folds, plan.test_rows]
    allrows = np.concatenate(sets)
    assert len(allrows) == n_rows, "rows missing or duplicated"
    assert np.array_equal(np.sort(allrows), np.arange(n_rows)), "not a partition"
    for rows in sets:
        weeks = np.unique(plan.week_ids[rows])
        for other in sets:
            if other is rows:
                continue
            assert not np.intersect1d(weeks, plan.week_ids[other]).size, "week split across subsets"
    fold_weeks = [len(np.unique(plan.week_ids[f])) for f in plan.val_folds]
    assert max(fold_weeks) - min(fold_weeks) <= 1, f"unbalanced folds {fold_weeks}"
