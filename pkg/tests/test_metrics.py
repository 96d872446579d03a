import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onetracker.metrics import (MetricAccumulator, boundary_f, box_iou, format_keyvalue, mask_iou, parse_keyvalue,
                                success_auc)


def _boxes(n, rng):
    xy = rng.uniform(0, 100, (n, 2))
    return np.concatenate([xy, rng.uniform(5, 30, (n, 2))], axis=1)


def test_iou_cases():
    assert box_iou([0, 0, 10, 10], [0, 0, 10, 10]) == 1.0
    assert box_iou([0, 0, 10, 10], [20, 20, 5, 5]) == 0.0
    assert box_iou([0, 0, 10, 10], [5, 0, 10, 10]) == pytest.approx(50 / 150)
    assert box_iou([0, 0, 0, 0], [0, 0, 0, 0]) == 0.0


def test_perfect_prediction(rng):
    gt = _boxes(20, rng)
    acc = MetricAccumulator()
    acc.add_boxes(gt.copy(), gt)
    r = acc.report()
    assert r["AUC"] == 1.0 and r["P"] == 1.0 and r["P_Norm"] == 1.0 and r["frames"] == 19


def test_golden_half_half_auc():
    # IoU 1 on half the frames and 0 on the rest: only threshold 0 counts the zeros
    assert success_auc(np.array([1.0, 1.0, 0.0, 0.0])) == pytest.approx(26 / 51, abs=1e-12)


def test_constant_far_prediction(rng):
    gt = _boxes(50, rng)
    pred = np.tile([500.0, 500.0, 10.0, 10.0], (50, 1))
    acc = MetricAccumulator()
    acc.add_boxes(pred, gt)
    r = acc.report()
    assert r["P"] < 0.1 and r["AUC"] == pytest.approx(1 / 51)


def test_first_frame_excluded():
    gt = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], float)
    pred = np.array([[50, 50, 10, 10], [0, 0, 10, 10]], float)
    acc = MetricAccumulator()
    acc.add_boxes(pred, gt)
    assert acc.report()["AUC"] == 1.0


def test_frame_count_mismatch():
    with pytest.raises(ValueError, match="frames"):
        MetricAccumulator().add_boxes(np.zeros((3, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError, match="frames"):
        MetricAccumulator().add_masks(np.zeros((3, 4, 4)), np.ones((4, 4, 4)))


def test_masks_ground_truth_is_perfect():
    gt = np.zeros((3, 20, 20), np.uint8)
    gt[:, 2:8, 3:9] = 1
    gt[:, 12:18, 10:16] = 2
    acc = MetricAccumulator()
    acc.add_masks(gt.copy(), gt)
    r = acc.report()
    assert r["J"] == r["F"] == r["J&F"] == 1.0 and "AUC" not in r


def test_boundary_tolerance():
    a = np.zeros((20, 20), bool)
    a[5:15, 5:15] = True
    b = np.roll(a, 1, axis=1)
    assert boundary_f(a, b) == 1.0
    assert boundary_f(a, np.roll(a, 3, axis=1)) < 1.0
    assert boundary_f(a, np.zeros_like(a)) == 0.0
    assert mask_iou(np.zeros_like(a), np.zeros_like(a)) == 1.0


def test_merge_order_independent(rng):
    parts = []
    for _ in range(3):
        acc = MetricAccumulator()
        gt = _boxes(10, rng)
        acc.add_boxes(gt + rng.normal(0, 3, gt.shape), gt)
        parts.append(acc)
    r1 = parts[0].merge(parts[1]).merge(parts[2]).report()
    r2 = parts[2].merge(parts[0]).merge(parts[1]).report()
    assert r1 == pytest.approx(r2, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_bounded(seed):
    rng = np.random.default_rng(seed)
    gt = _boxes(15, rng)
    acc = MetricAccumulator()
    acc.add_boxes(_boxes(15, rng), gt)
    for k, v in acc.report().items():
        if k != "frames":
            assert 0.0 <= v <= 1.0


def test_keyvalue_roundtrip():
    r = {"AUC": 0.1 + 0.2, "P": 1.0, "J&F": 1 / 3}
    assert parse_keyvalue(format_keyvalue(r)) == r
