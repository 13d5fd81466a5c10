from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdtnet.indicators import raw_schema
from cdtnet.market_data import PlantedPattern, SyntheticSpec, generate_synthetic
from cdtnet.model import LeakageError, ModelConfig
from cdtnet.samples import make_samples
from cdtnet.walkforward import (
    WindowPlan,
    aggregate_wfs,
    check_window_hygiene,
    make_windows,
    parse_records_csv,
    predict_windows,
    records_csv,
    run_walkforward,
    train_windows,
    window_seed,
)

CFG = ModelConfig(conv=((4, 8), (3, 16), (2, 32)), fc=(64, 32), max_epochs=20, patience=5)
PLAN = WindowPlan(train_size=400, val_size=80, test_size=40, step=40, train_unit="samples")


@pytest.fixture(scope="module")
def dataset():
    s = generate_synthetic(SyntheticSpec(24 * 720, seed=13, planted_pattern=PlantedPattern()))
    return make_samples(s, raw_schema()).labeled()


@pytest.fixture(scope="module")
def result(dataset):
    return run_walkforward(dataset, PLAN, CFG, master_seed=3)


# --- window arithmetic -------------------------------------------------------

def test_plan_units():
    assert WindowPlan().in_samples() == (5934, 192, 96, 96)
    assert WindowPlan().minimal == 5934 + 192 + 96
    with pytest.raises(ValueError):
        WindowPlan(step=97)
    with pytest.raises(ValueError):
        WindowPlan(val_unit="days")
    with pytest.raises(ValueError):
        WindowPlan(train_size=10)  # under one sample in records


def test_minimal_gives_one_window():
    ws = make_windows(PLAN.minimal, PLAN)
    assert len(ws) == 1
    assert ws[0].train == (0, 400) and ws[0].val == (400, 480) and ws[0].test == (480, 520)
    with pytest.raises(ValueError):
        make_windows(PLAN.minimal - 1, PLAN)


def test_minimal_plus_step_gives_two_windows():
    ws = make_windows(PLAN.minimal + PLAN.step, PLAN)
    assert len(ws) == 2
    assert ws[1].test[0] == ws[0].test[1]
    assert ws[1].train[0] == PLAN.step


def test_default_plan_window_count():
    plan = WindowPlan()
    # 7.8 years of 2-hour samples on a 24/5 calendar
    n = int(7.8 * 52 * 5 * 12)
    ws = make_windows(n, plan)
    assert len(ws) == (n - plan.minimal) // 96 + 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 10), st.integers(1, 12), st.integers(1, 12), st.integers(0, 200))
def test_windows_cover_tests_once_and_stay_ordered(tr, va, te, step, extra):
    step = min(step, te)
    plan = WindowPlan(tr, va, te, step, train_unit="samples")
    n = plan.minimal + extra
    ws = make_windows(n, plan)
    assert len(ws) == extra // step + 1
    covered = np.concatenate([np.arange(*w.test) for w in ws])
    assert np.array_equal(covered, np.arange(ws[0].test[0], ws[-1].test[1]))
    assert ws[-1].test[1] <= n
    for w in ws:
        assert w.train[1] == w.val[0] and w.val[1] == w.test[0]
        assert w.train[1] - w.train[0] == tr and w.val[1] - w.val[0] == va


def test_window_seeds_are_distinct_and_stable():
    seeds = [window_seed(7, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [window_seed(7, i) for i in range(50)]
    assert window_seed(8, 0) != seeds[0]


# --- running -----------------------------------------------------------------

def test_predictions_cover_each_test_timestamp_once(dataset, result):
    ws = make_windows(len(dataset), PLAN)
    expect = np.concatenate([dataset.timestamps[slice(*w.test)] for w in ws])
    got = np.array([np.datetime64(r.timestamp, "m") for r in result.records])
    np.testing.assert_array_equal(got, expect)
    assert len(set(got.tolist())) == got.size


def test_window_hygiene_holds(dataset, result):
    for s in result.summaries:
        assert s.train_end < s.val_start <= s.val_end < s.test_start
        assert s.stats_fit_end < s.val_start


def test_planted_aggregate_wfs(result):
    assert len(result.summaries) == 5
    assert aggregate_wfs(result.records) >= 0.85


def test_same_seed_is_bit_exact_and_order_free(dataset, result):
    again = run_walkforward(dataset, PLAN, CFG, master_seed=3, order=[4, 2, 0, 3, 1])
    assert again.records == result.records
    assert [s.to_dict() for s in again.summaries] == [s.to_dict() for s in result.summaries]


def test_parallel_matches_serial(dataset):
    ws = make_windows(len(dataset), PLAN)[:2]
    cfg = ModelConfig(**{**CFG.to_dict(), "max_epochs": 2})
    m1, s1 = train_windows(dataset, ws, cfg, 5, workers=1)
    m2, s2 = train_windows(dataset, ws, cfg, 5, workers=2)
    assert [s.to_dict() for s in s1] == [s.to_dict() for s in s2]
    assert predict_windows(dataset, ws, m1) == predict_windows(dataset, ws, m2)


def test_one_window_output_length(dataset):
    plan = WindowPlan(200, 50, 30, 30, train_unit="samples")
    small = dataset.subset(slice(0, plan.minimal))
    res = run_walkforward(small, plan, ModelConfig(**{**CFG.to_dict(), "max_epochs": 1}))
    assert len(res.records) == 30


def test_hygiene_check_catches_overlap(dataset, result):
    tr, va, te = dataset.subset(slice(0, 50)), dataset.subset(slice(49, 80)), dataset.subset(slice(80, 90))
    with pytest.raises(LeakageError):
        check_window_hygiene(tr, va, te, result.models[0])
    # stats fitted after the validation start
    tr, va = dataset.subset(slice(0, 50)), dataset.subset(slice(50, 80))
    with pytest.raises(LeakageError):
        check_window_hygiene(tr, va, te, result.models[-1])


def test_overlapping_predictions_rejected(dataset, result):
    ws = make_windows(len(dataset), PLAN)
    with pytest.raises(LeakageError):
        predict_windows(dataset, [ws[0], ws[0]], result.models[:2])


def test_records_csv_roundtrip(result):
    text = records_csv(result.records)
    assert text.splitlines()[0] == "timestamp,p_up,p_down,p_flat,pred,true,window"
    assert parse_records_csv(text) == result.records
