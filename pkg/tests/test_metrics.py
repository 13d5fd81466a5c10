from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdtnet.labeling import Label
from cdtnet.metrics import (
    ConfusionMatrix3,
    WfsParams,
    accuracy,
    confusion,
    correlation_csv,
    metric_correlation_report,
    metrics_dict,
    metrics_json,
    pearson,
    weighted_f_score,
)

from oracles import wfs_direct

U, D, F = int(Label.UP), int(Label.DOWN), int(Label.FLAT)


def _m(rows):
    return ConfusionMatrix3(np.array(rows))


# --- confusion ---------------------------------------------------------------

def test_confusion_examples():
    labels = [U, D, F, F, U]
    np.testing.assert_array_equal(confusion(labels, labels).counts, np.diag([2, 1, 2]))
    m = confusion([U] * 7, [D] * 7)
    assert m.cell(Label.DOWN, Label.UP) == 7 and m.total == 7
    rng = np.random.default_rng(0)
    p, t = rng.integers(0, 3, 1000), rng.integers(0, 3, 1000)
    m = confusion(p, t)
    assert m.total == 1000
    for i in range(3):
        for j in range(3):
            assert m.counts[i, j] == np.sum((t == i) & (p == j))


def test_confusion_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion([U, D], [U])
    with pytest.raises(ValueError):
        confusion([], [])
    with pytest.raises(ValueError):
        confusion([3], [0])
    with pytest.raises(ValueError):
        ConfusionMatrix3(np.array([[1, -1, 0], [0, 0, 0], [0, 0, 0]]))


def test_confusion_accepts_labels():
    m = confusion([Label.UP, Label.FLAT], [Label.UP, Label.DOWN])
    assert m.cell(Label.DOWN, Label.FLAT) == 1


# --- weighted F score --------------------------------------------------------

def test_wfs_worked_example():
    # 4 true Up, 4 true Down, 2 opposite calls, 4 flat truths called a direction, 8 missed moves
    m = _m([[4, 1, 4], [1, 4, 4], [2, 2, 0]])
    assert weighted_f_score(m) == pytest.approx(10.125 / 13.25, abs=1e-15)
    assert weighted_f_score(m) == pytest.approx(0.764151, abs=1e-6)


def test_wfs_extremes():
    assert weighted_f_score(_m([[5, 0, 0], [0, 3, 0], [0, 0, 0]])) == 1.0
    assert weighted_f_score(_m([[0, 5, 0], [2, 0, 0], [0, 0, 0]])) == 0.0
    with pytest.raises(ValueError):
        weighted_f_score(_m(np.zeros((3, 3), int)))


def test_wfs_error_orientation():
    # a flat truth called Up is charged beta1**2, a missed Up only beta2**2
    moved = weighted_f_score(_m([[10, 0, 0], [0, 0, 0], [1, 0, 0]]))
    missed = weighted_f_score(_m([[10, 0, 1], [0, 0, 0], [0, 0, 0]]))
    w = 1 + 0.25 + 0.015625
    assert moved == pytest.approx(10 * w / (10 * w + 0.25), rel=1e-15)
    assert missed == pytest.approx(10 * w / (10 * w + 0.015625), rel=1e-15)


_counts = st.lists(st.integers(0, 50), min_size=9, max_size=9).filter(lambda c: sum(c) > 0)
_beta = st.floats(0, 2, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(_counts, _beta, _beta, _beta)
def test_wfs_matches_direct_evaluation(c, b1, b2, b3):
    m = _m(np.reshape(c, (3, 3)))
    got = weighted_f_score(m, WfsParams(b1, b2, b3))
    assert got == pytest.approx(wfs_direct(m.counts, b1, b2, b3), rel=1e-12, abs=1e-300)
    assert 0.0 <= got <= 1.0


@settings(max_examples=100, deadline=None)
@given(_counts, st.integers(1, 1000))
def test_wfs_scale_invariant(c, k):
    m = np.reshape(c, (3, 3))
    assert weighted_f_score(_m(m * k)) == pytest.approx(weighted_f_score(_m(m)), rel=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=9, max_size=9).filter(lambda c: c[0] + c[4] > 0))
def test_wfs_marginal_decrease_order(c):
    base = np.reshape(c, (3, 3))

    def bump(i, j):
        m = base.copy()
        m[i, j] += 1
        return weighted_f_score(_m(m))

    f0 = weighted_f_score(_m(base))
    first = f0 - bump(U, D)
    second = f0 - bump(F, U)
    third = f0 - bump(U, F)
    assert first > second > third > 0


@settings(max_examples=100, deadline=None)
@given(_counts)
def test_unit_betas_give_symmetric_ratio(c):
    m = np.reshape(c, (3, 3))
    tp = int(np.trace(m))
    errors = int(m.sum()) - tp
    expect = 0.0 if tp == 0 else float(Fraction(3 * tp, 3 * tp + errors))
    assert weighted_f_score(_m(m), WfsParams(1, 1, 1)) == pytest.approx(expect, rel=1e-14)


def test_params_validation():
    with pytest.raises(ValueError):
        WfsParams(beta1=-0.1)
    with pytest.raises(ValueError):
        WfsParams(beta3=math.inf)


# --- accuracy ----------------------------------------------------------------

def test_accuracy_examples():
    assert accuracy(_m(np.diag([3, 4, 5]))) == 1.0
    assert accuracy(_m(np.full((3, 3), 7))) == pytest.approx(1 / 3)
    assert accuracy(_m([[20, 5, 5], [5, 20, 5], [10, 10, 20]])) == 0.6
    with pytest.raises(ValueError):
        accuracy(_m(np.zeros((3, 3), int)))


def test_accuracy_and_wfs_agree_at_extremes():
    perfect = _m([[4, 0, 0], [0, 6, 0], [0, 0, 0]])
    assert accuracy(perfect) == weighted_f_score(perfect) == 1.0
    wrong = _m([[0, 4, 3], [5, 0, 2], [1, 1, 0]])
    assert accuracy(wrong) == weighted_f_score(wrong) == 0.0


# --- correlation -------------------------------------------------------------

def test_pearson_examples():
    assert pearson([1, 2, 3], [1, 2, 3]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(ValueError):
        pearson([1], [2])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


def _spreadsheet_pearson(xs, ys):
    # CORREL via the raw-sums formula in exact arithmetic, rooted once at the end
    n = len(xs)
    x = [Fraction(v) for v in xs]
    y = [Fraction(v) for v in ys]
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    num = n * sxy - sx * sy
    den2 = (n * sxx - sx * sx) * (n * syy - sy * sy)
    return float(num) / math.sqrt(float(den2))


def test_correlation_report_against_recomputation():
    variants = [
        {"wfs": 0.41, "accuracy": 0.52, "aar": 0.12, "sharpe": 0.8},
        {"wfs": 0.47, "accuracy": 0.50, "aar": 0.19, "sharpe": 1.1},
        {"wfs": 0.55, "accuracy": 0.58, "aar": 0.31, "sharpe": 1.9},
        {"wfs": 0.52, "accuracy": 0.61, "aar": 0.22, "sharpe": 1.4},
        {"wfs": 0.60, "accuracy": 0.55, "aar": 0.40, "sharpe": 2.3},
    ]
    rows = metric_correlation_report(variants)
    assert [(r["x"], r["y"]) for r in rows] == [("wfs", "aar"), ("wfs", "sharpe"), ("accuracy", "aar"), ("accuracy", "sharpe")]
    for r in rows:
        xs = [v[r["x"]] for v in variants]
        ys = [v[r["y"]] for v in variants]
        assert r["n"] == 5 and r["instrument"] == "all"
        assert r["correlation"] == pytest.approx(_spreadsheet_pearson(xs, ys), rel=1e-12)


def test_correlation_report_affine_and_constant():
    variants = [{"wfs": w, "accuracy": 0.5, "aar": 3 * w - 1, "sharpe": None if i == 0 else w, "instrument": "CL"}
                for i, w in enumerate([0.2, 0.4, 0.7, 0.9])]
    rows = {(r["x"], r["y"]): r["correlation"] for r in metric_correlation_report(variants)}
    assert rows[("wfs", "aar")] == pytest.approx(1.0, abs=1e-15)
    assert rows[("accuracy", "aar")] is None
    assert rows[("wfs", "sharpe")] is None
    text = correlation_csv(metric_correlation_report(variants))
    assert text.splitlines()[0] == "instrument,x,y,n,correlation"
    assert "CL,accuracy,aar,4,undefined" in text


def test_correlation_report_needs_three_variants():
    with pytest.raises(ValueError):
        metric_correlation_report([{"wfs": 1, "accuracy": 1, "aar": 1, "sharpe": 1}] * 2)


def test_metrics_json_shape():
    m = _m([[4, 1, 4], [1, 4, 4], [2, 2, 0]])
    d = metrics_dict(m)
    assert set(d) == {"wfs", "accuracy", "confusion", "per_class_counts"}
    assert d["confusion"]["true_flat"]["pred_up"] == 2
    assert d["per_class_counts"]["Up"] == {"true": 9, "predicted": 7}
    back = json.loads(metrics_json(m, extra_field=1))
    assert back["extra_field"] == 1 and back["wfs"] == d["wfs"]
