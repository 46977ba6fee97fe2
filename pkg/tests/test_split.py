import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priceshap.split import TooFewWeeks, check_plan, iso_week_labels, repeated_splits, weekly_shuffle_split

from conftest import hourly

MONDAY = "2018-01-01T00"  # ISO week 2018-W01 starts here


def weeks(n, start=MONDAY):
    return hourly(start, 168 * n)


def week_count(plan, rows):
    return len(np.unique(plan.week_ids[rows]))


def test_hundred_weeks():
    plan = weekly_shuffle_split(weeks(100), seed=1)
    assert week_count(plan, plan.train_rows) == 48
    assert [week_count(plan, f) for f in plan.val_folds] == [8, 8, 8, 8]
    assert week_count(plan, plan.test_rows) == 20
    check_plan(plan, 168 * 100)


def test_twenty_five_weeks_floor_rule():
    plan = weekly_shuffle_split(weeks(25), seed=7)
    assert week_count(plan, plan.train_rows) == 12
    assert sum(week_count(plan, f) for f in plan.val_folds) == 8
    assert [week_count(plan, f) for f in plan.val_folds] == [2, 2, 2, 2]
    assert week_count(plan, plan.test_rows) == 5


def test_determinism_and_seed_sensitivity():
    ts = weeks(30)
    a, b = weekly_shuffle_split(ts, 5), weekly_shuffle_split(ts, 5)
    assert a.to_json() == b.to_json()
    assert weekly_shuffle_split(ts, 6).to_json() != a.to_json()


def test_iso_weeks_across_year_end():
    ids, labels = iso_week_labels(hourly("2016-12-31T00", 48 + 24 * 7))
    # Saturday and Sunday 2016-12-31/2017-01-01 belong to 2016-W52
    assert labels[0] == "2016-W52" and labels[1] == "2017-W01"
    assert ids[47] == 0 and ids[48] == 1


def test_too_few_weeks():
    with pytest.raises(TooFewWeeks):
        weekly_shuffle_split(weeks(6), 0)


def test_bad_fractions():
    with pytest.raises(ValueError):
        weekly_shuffle_split(weeks(10), 0, (0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        weekly_shuffle_split(weeks(10), 0, (0.8, 0.2, 0.0))


def test_repeated_splits():
    ts = weeks(40)
    plans = repeated_splits(ts, 100, 10)
    assert [p.seed for p in plans] == list(range(100, 110))
    assert len({p.to_json() for p in plans}) == 10
    assert repeated_splits(ts, 3, 1)[0].to_json() == weekly_shuffle_split(ts, 3).to_json()


def test_repeated_splits_tiny_frame():
    ts = weeks(8)
    for plan in repeated_splits(ts, 0, 2):
        check_plan(plan, len(ts))


def test_json_schema():
    d = json.loads(weekly_shuffle_split(weeks(10), 2).to_json())
    assert set(d) == {"seed", "fractions", "weeks"}
    assert set(d["weeks"].values()) <= {"train", "val1", "val2", "val3", "val4", "test"}


@settings(max_examples=60, deadline=None)
@given(st.integers(7, 80), st.integers(0, 2**63), st.integers(0, 167))
def test_plan_invariants(n_weeks, seed, offset):
    ts = hourly("2018-01-01T00", 168 * n_weeks)[offset:]
    plan = weekly_shuffle_split(ts, seed)
    check_plan(plan, len(ts))
