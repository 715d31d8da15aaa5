import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adnn import metrics
from adnn.histio import Label
from adnn.metrics import Confusion


def test_hand_counted_case():
    pred = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 0]])
    gt = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 0]])
    c = metrics.confusion(pred, gt)
    assert c == Confusion(tp=2, fp=1, fn=1, tn=5)
    re, pr, fm = metrics.re_pr_fm(c)
    assert (re, pr) == (2 / 3, 2 / 3)
    assert fm == pytest.approx(2 / 3)


def test_ignore_pixels_are_skipped():
    pred = np.array([1, 1, 0, 0])
    gt = np.array([Label.IGNORE, 1, Label.IGNORE, 0])
    assert metrics.confusion(pred, gt) == Confusion(tp=1, fp=0, fn=0, tn=1)


def test_fm_identity():
    assert metrics.re_pr_fm((0.9603, 0.8697))[2] == pytest.approx(0.9127, abs=1e-4)


def test_zero_division_is_zero():
    assert metrics.re_pr_fm(Confusion(tn=10)) == (0.0, 0.0, 0.0)
    assert metrics.re_pr_fm(Confusion(fp=3)) == (0.0, 0.0, 0.0)


def test_errors():
    with pytest.raises(ValueError, match="dimension mismatch"):
        metrics.confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="Ignore"):
        metrics.confusion(np.full((2, 2), Label.IGNORE), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="empty"):
        metrics.aggregate([])
    with pytest.raises(ValueError):
        Confusion(tp=-1)


def test_overall_is_mean_not_pooled():
    big = Confusion(tp=90, fp=10, fn=10, tn=0)
    small = Confusion(tp=1, fp=9, fn=9, tn=0)
    report = metrics.aggregate({"a": big, "b": small})
    assert report.overall[2] == pytest.approx((0.9 + 0.1) / 2)
    pooled = metrics.re_pr_fm(big + small)[2]
    assert report.overall[2] != pytest.approx(pooled)


def test_csv_layout():
    report = metrics.aggregate([Confusion(tp=2, fp=1, fn=1, tn=5)], names=["pedestrians"])
    lines = report.to_csv().splitlines()
    assert lines == ["video,Re,Pr,Fm", "pedestrians,0.666667,0.666667,0.666667",
                     "Overall,0.666667,0.666667,0.666667"]


counts = st.integers(0, 10_000)


@given(counts, counts, counts, counts)
def test_metric_bounds_and_harmonic_mean(tp, fp, fn, tn):
    re, pr, fm = metrics.re_pr_fm(Confusion(tp, fp, fn, tn))
    assert 0 <= re <= 1 and 0 <= pr <= 1 and 0 <= fm <= 1
    assert min(re, pr) - 1e-12 <= fm <= max(re, pr) + 1e-12


@given(counts, counts, counts, counts)
def test_swapping_pred_and_gt_swaps_re_and_pr(tp, fp, fn, tn):
    re, pr, fm = metrics.re_pr_fm(Confusion(tp, fp, fn, tn))
    re2, pr2, fm2 = metrics.re_pr_fm(Confusion(tp, fn, fp, tn))
    assert (re, pr) == (pr2, re2)
    assert fm == pytest.approx(fm2)


def test_perfect_prediction():
    gt = np.random.default_rng(0).integers(0, 2, (20, 20))
    gt[0, 0] = 1
    assert metrics.re_pr_fm(metrics.confusion(gt, gt)) == (1.0, 1.0, 1.0)
