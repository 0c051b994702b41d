from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from saen_bgs.metrics import METRIC_NAMES, Confusion, accumulate, f_measure, metrics

F = Fraction


def test_two_by_two_tally():
    conf = accumulate([[1, 0], [1, 0]], [[1, 1], [0, 0]])
    assert conf == Confusion(TP=1, FP=1, FN=1, TN=1)
    m = metrics(conf, exact=True)
    assert m["Pre"] == m["Rec"] == m["Fm"] == 50


def test_hundred_pixel_extremes():
    ones, zeros = np.ones((10, 10)), np.zeros((10, 10))
    assert accumulate(ones, ones) == Confusion(TP=100)
    assert accumulate(zeros, ones) == Confusion(FN=100)
    m = metrics(accumulate(ones, ones))
    assert m["FNR"] == m["PWC"] == 0 and m["Rec"] == m["Pre"] == m["Fm"] == 100


def test_two_by_two_two_thirds():
    conf = Confusion(TP=2, FP=1, FN=1, TN=0)
    m = metrics(conf, exact=True)
    assert m["Pre"] == m["Rec"] == m["Fm"] == F(200, 3)
    assert m["PWC"] == F(50)
    assert m["Spe"] == 0 and m["FPR"] == 100
    assert m["FNR"] == F(100, 3)


def test_hand_confusion_all_seven():
    conf = Confusion(TP=30, FP=10, FN=20, TN=940)
    m = metrics(conf, exact=True)
    assert m == {
        "Rec": F(30, 50) * 100,
        "Spe": F(940, 950) * 100,
        "FPR": F(10, 950) * 100,
        "FNR": F(20, 50) * 100,
        "PWC": F(30, 1000) * 100,
        "Fm": 2 * F(3, 4) * F(3, 5) / (F(3, 4) + F(3, 5)) * 100,
        "Pre": F(30, 40) * 100,
    }
    assert list(m) == list(METRIC_NAMES)


def test_no_predicted_foreground():
    m = metrics(Confusion(TP=0, FP=0, FN=5, TN=5))
    assert m["Pre"] is None and m["Fm"] is None
    assert m["Rec"] == 0.0


def test_no_foreground_anywhere():
    m = metrics(Confusion(TP=0, FP=0, FN=0, TN=9))
    assert m["Rec"] is None and m["FNR"] is None and m["Fm"] is None
    assert m["Spe"] == 100.0 and m["PWC"] == 0.0


def test_all_foreground():
    m = metrics(Confusion(TP=4, FP=0, FN=0, TN=0))
    assert m["Spe"] is None and m["FPR"] is None
    assert m["Fm"] == 100.0


def test_pre_rec_both_zero():
    m = metrics(Confusion(TP=0, FP=3, FN=3, TN=0))
    assert m["Pre"] == 0 and m["Rec"] == 0 and m["Fm"] is None


def test_empty_confusion():
    assert all(v is None for v in metrics(Confusion()).values())


def test_gt_against_itself():
    gt = np.array([[0, 1, 1], [0, 0, 1]])
    assert metrics(accumulate(gt, gt))["Fm"] == 100.0


def test_inverted_mask_zero_recall():
    gt = np.array([[0, 1], [1, 0]])
    assert metrics(accumulate(1 - gt, gt))["Rec"] == 0.0


def test_ignore_region():
    pred = np.array([[1, 1], [0, 0]])
    gt = np.array([[1, 0], [0, 1]])
    ign = np.array([[0, 1], [0, 1]])
    assert accumulate(pred, gt, ign) == Confusion(TP=1, FP=0, FN=0, TN=1)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        accumulate(np.zeros((2, 2)), np.zeros((2, 3)))


def test_non_binary_rejected():
    with pytest.raises(ValueError):
        accumulate(np.array([0, 2]), np.array([0, 1]))


def test_f_measure_fraction():
    assert f_measure([1, 1, 0], [1, 0, 0]) == pytest.approx(2 / 3)
    assert f_measure([0, 0], [0, 0]) == 0.0


masks = st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200)


@given(masks)
def test_tally_partitions_pixels(pairs):
    pred = np.array([p for p, _ in pairs])
    gt = np.array([g for _, g in pairs])
    conf = accumulate(pred, gt)
    assert conf.total == len(pairs)


@given(masks)
def test_complements_and_ranges(pairs):
    pred = np.array([p for p, _ in pairs])
    gt = np.array([g for _, g in pairs])
    m = metrics(accumulate(pred, gt), exact=True)
    if m["Rec"] is not None:
        assert m["Rec"] + m["FNR"] == 100
    if m["Spe"] is not None:
        assert m["Spe"] + m["FPR"] == 100
    for v in m.values():
        if v is not None:
            assert 0 <= v <= 100
    if m["Fm"] is not None:
        assert min(m["Pre"], m["Rec"]) <= m["Fm"] <= max(m["Pre"], m["Rec"])


@given(masks, masks)
def test_confusion_additive(a, b):
    def conf(pairs):
        return accumulate(np.array([p for p, _ in pairs]), np.array([g for _, g in pairs]))
    assert conf(a) + conf(b) == conf(a + b)
