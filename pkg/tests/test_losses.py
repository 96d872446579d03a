import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onetracker.autograd import Tensor, finite_diff_check
from onetracker.config import TrackerConfig
from onetracker.losses import (LossWeights, boxinst_loss_for_boxes, boxinst_projection_loss, center_cell,
                               combine, gaussian_heatmap, giou, giou_loss, l1_box_loss, mask_bce_dice,
                               stage_loss, weighted_focal)
from onetracker.model import FoundationTracker
from onetracker.peft import PromptTracker


def corners_to_c(x0, y0, x1, y1):
    return [(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0]


# -- focal ----------------------------------------------------------------------

def test_heatmap_properties():
    box = [0.45, 0.55, 0.2, 0.3]
    h = gaussian_heatmap(box, 16)
    assert h.max() == 1.0 and (h == 1.0).sum() == 1
    r, c = center_cell(box, 16)
    assert h[r, c] == 1.0
    sigma = max(1.0, 0.5 * np.sqrt(0.2 * 0.3) * 16)
    rr, cc = np.mgrid[0:16, 0:16]
    far = (rr - r) ** 2 + (cc - c) ** 2 > (3 * sigma) ** 2
    assert (h[far] < 0.01).all()


def test_focal_single_positive_half():
    assert float(weighted_focal(np.array([[0.5]]), np.array([[1.0]])).data) == pytest.approx(0.25 * np.log(2), abs=1e-15)


def test_focal_negative_contribution():
    # one positive at p=1-eps (≈ 0 loss) and one negative y=0 at p=0.5 -> (1-0)^4 0.25 ln 2
    score = np.array([[1 - 1e-6, 0.5]])
    target = np.array([[1.0, 0.0]])
    assert float(weighted_focal(score, target).data) == pytest.approx(0.25 * np.log(2), rel=1e-5)


def test_focal_perfect_limit():
    t = gaussian_heatmap([0.5, 0.5, 0.2, 0.2], 8)
    p = np.where(t == 1.0, 1 - 1e-9, 1e-9)
    assert float(weighted_focal(p, t).data) < 1e-5


def test_focal_no_positive():
    with pytest.raises(ValueError, match="positive"):
        weighted_focal(np.full((2, 2), 0.5), np.zeros((2, 2)))


def test_focal_monotone_at_positive():
    t = gaussian_heatmap([0.5, 0.5, 0.2, 0.2], 8)
    vals = []
    for p in np.linspace(0.05, 0.95, 10):
        s = np.full((8, 8), 0.1)
        s[t == 1.0] = p
        vals.append(float(weighted_focal(s, t).data))
    assert all(a > b for a, b in zip(vals, vals[1:]))


# -- box regression -------------------------------------------------------------

def test_giou_hand_case():
    a = corners_to_c(0, 0, 2, 2)
    b = corners_to_c(1, 1, 3, 3)
    assert float(giou(Tensor(a), b).data) == pytest.approx(-5 / 63, abs=1e-15)
    assert float(giou_loss(Tensor(a), b).data) == pytest.approx(1 + 5 / 63, abs=1e-15)


def test_giou_identity_and_far_limit():
    b = [0.4, 0.4, 0.2, 0.3]
    assert float(giou_loss(Tensor(b), b).data) == 0.0
    far = float(giou_loss(Tensor([1e6, 1e6, 1.0, 1.0]), [0.0, 0.0, 1.0, 1.0]).data)
    assert 1.999 < far <= 2.0


def test_giou_degenerate_gt():
    with pytest.raises(ValueError, match="zero area"):
        giou(Tensor([0.5, 0.5, 0.1, 0.1]), [0.5, 0.5, 0.0, 0.1])


box_st = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1), st.floats(0.05, 1))


@settings(max_examples=60, deadline=None)
@given(box_st, box_st, st.floats(-3, 3), st.floats(-3, 3))
def test_giou_symmetry_translation_range(a, b, dx, dy):
    ab = float(giou_loss(Tensor(list(a)), list(b)).data)
    ba = float(giou_loss(Tensor(list(b)), list(a)).data)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert -1e-12 <= ab <= 2.0 + 1e-12
    sa = [a[0] + dx, a[1] + dy, a[2], a[3]]
    sb = [b[0] + dx, b[1] + dy, b[2], b[3]]
    assert float(giou_loss(Tensor(sa), sb).data) == pytest.approx(ab, abs=1e-9)


def test_l1_cases(rng):
    b = np.array([0.5, 0.5, 0.2, 0.2])
    assert float(l1_box_loss(Tensor(b), b).data) == 0.0
    assert float(l1_box_loss(Tensor(b + [0.2, 0, 0, 0]), b).data) == pytest.approx(0.05)
    p, g = rng.random((3, 4)), rng.random((3, 4))
    dense = sum(abs(p[i, j] - g[i, j]) for i in range(3) for j in range(4)) / 12
    assert float(l1_box_loss(Tensor(p), g).data) == pytest.approx(dense, abs=1e-15)


# -- masks ----------------------------------------------------------------------

BIG = 1e3


def test_boxinst_perfect_and_empty():
    box = [0.5, 0.5, 0.5, 0.5]  # pixels 1..2 of a 4x4 crop
    logits = np.full((1, 4, 4), -BIG)
    logits[0, 1:3, 1:3] = BIG
    assert float(boxinst_loss_for_boxes(Tensor(logits), np.array([box])).data) == pytest.approx(0.0, abs=1e-12)
    empty = Tensor(np.full((1, 4, 4), -BIG))
    assert float(boxinst_loss_for_boxes(empty, np.array([box])).data) == pytest.approx(2.0, abs=1e-12)


def test_boxinst_hand_case():
    logits = np.full((4, 4), -BIG)
    logits[1, 1] = BIG
    ind = np.array([0, 1, 1, 0], dtype=float)
    val = float(boxinst_projection_loss(Tensor(logits), ind, ind).data)
    # each axis: 1 - 2*1/(1+2) = 1/3; the module averages nothing here, so total = 2/3
    assert val == pytest.approx(2 / 3, abs=1e-12)


def test_boxinst_empty_box():
    with pytest.raises(ValueError, match="empty|covers no pixel"):
        boxinst_projection_loss(Tensor(np.zeros((4, 4))), np.zeros(4), np.ones(4))


def test_mask_bce_dice_perfect_is_small():
    gt = np.zeros((1, 8, 8))
    gt[0, 2:5, 3:6] = 1
    logits = np.where(gt > 0, 40.0, -40.0)
    assert float(mask_bce_dice(Tensor(logits), gt).data) < 1e-12


# -- combined -------------------------------------------------------------------

def test_combine_default_weights():
    one = Tensor(1.0)
    assert float(combine({"cls": one, "iou": one, "l1": one, "mask": one}, LossWeights()).data) == 9.0
    zero = Tensor(0.0)
    assert float(combine({k: zero for k in ("cls", "iou", "l1", "mask")}, LossWeights()).data) == 0.0
    with pytest.raises(KeyError):
        combine({"cls": one}, LossWeights())
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0, 1.0)


def _outputs(rng, b=2, g=8, s=64):
    return {"score": Tensor(rng.uniform(0.05, 0.95, (b, g, g)), requires_grad=True),
            "offset": Tensor(rng.uniform(0.1, 0.9, (b, 2, g, g)), requires_grad=True),
            "size": Tensor(rng.uniform(0.1, 0.5, (b, 2, g, g)), requires_grad=True),
            "mask_logits": Tensor(rng.standard_normal((b, s, s)), requires_grad=True)}


BOXES = np.array([[0.47, 0.52, 0.23, 0.31], [0.36, 0.61, 0.18, 0.27]])


def test_stage2_m_perfect_mask_drops_to_box_terms(rng):
    out = _outputs(rng)
    gt = np.zeros((2, 64, 64))
    gt[:, 20:40, 25:35] = 1.0
    out["mask_logits"] = Tensor(np.where(gt > 0, 40.0, -40.0))
    total, comps = stage_loss(out, {"box": BOXES, "mask": gt}, LossWeights(), 2, "rgb_m")
    assert comps["mask"] < 1e-12
    assert float(total.data) == pytest.approx(comps["cls"] + 2 * comps["iou"] + 5 * comps["l1"], abs=1e-10)
    with pytest.raises(KeyError):
        stage_loss(out, {"box": BOXES}, LossWeights(), 2, "rgb_m")


@pytest.mark.parametrize("stage,task", [(1, "rgb"), (2, "rgb_t"), (2, "rgb_m")])
def test_stage_loss_gradient_wrt_outputs(stage, task, rng):
    out = _outputs(rng)
    targets = {"box": BOXES}
    if task == "rgb_m":
        targets["mask"] = (rng.random((2, 64, 64)) > 0.5).astype(float)
    keys = list(out)
    rep = finite_diff_check(lambda ts: stage_loss(dict(zip(keys, ts)), targets, LossWeights(), stage, task)[0],
                            [out[k] for k in keys], max_coords=600)
    assert rep.passed, rep


def test_stage1_loss_gradient_full_model(off_kinks):
    cfg = TrackerConfig.toy()
    rng = np.random.default_rng(3)
    model = FoundationTracker(cfg, rng=np.random.default_rng(0))
    off_kinks(model, rng)
    z, x = rng.random((1, 3, 32, 32)), rng.random((1, 3, 64, 64))
    targets = {"box": BOXES[:1]}
    rep = finite_diff_check(lambda _: stage_loss(model(z, x), targets, LossWeights(), 1)[0],
                            model.parameters(), step=1e-6, max_coords=300)
    assert rep.passed, rep


def test_stage2_loss_gradient_prompt_tracker(off_kinks):
    cfg = TrackerConfig.toy()
    rng = np.random.default_rng(4)
    pt = PromptTracker(FoundationTracker(cfg, rng=np.random.default_rng(0)), "T")
    off_kinks(pt, rng)  # also moves zero-init up-maps so every path carries gradient
    z, x = rng.random((1, 3, 32, 32)), rng.random((1, 3, 64, 64))
    payload = {"template_map": rng.random((1, 1, 32, 32)), "search_map": rng.random((1, 1, 64, 64))}
    rep = finite_diff_check(lambda _: stage_loss(pt(z, x, payload), {"box": BOXES[:1]}, LossWeights(), 2, "rgb_t")[0],
                            pt.trainable_parameters(), step=1e-6, max_coords=300)
    assert rep.passed, rep
