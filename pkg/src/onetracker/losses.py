"""Training objectives: focal classification, GIoU/L1 box regression, box-supervised mask loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, ops
from .autograd.tensor import as_tensor

SCORE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    lambda_mask: float = 1.0

    def __post_init__(self):
        if min(self.lambda_iou, self.lambda_l1, self.lambda_mask) < 0:
            raise ValueError("loss weights must be non-negative")


# -- targets -----------------------------------------------------------------

def center_cell(box, grid: int) -> tuple[int, int]:
    """(row, col) of the cell containing the box center."""
    cx, cy = float(box[0]), float(box[1])
    col = min(max(int(np.floor(cx * grid)), 0), grid - 1)
    row = min(max(int(np.floor(cy * grid)), 0), grid - 1)
    return row, col


def gaussian_heatmap(box, grid: int) -> np.ndarray:
    """Gaussian splat around the center cell, sigma tied to box size, cut at 3 sigma."""
    row, col = center_cell(box, grid)
    w, h = float(box[2]), float(box[3])
    sigma = max(1.0, 0.5 * np.sqrt(w * h) * grid)
    rr, cc = np.mgrid[0:grid, 0:grid]
    d2 = (rr - row) ** 2 + (cc - col) ** 2
    heat = np.exp(-d2 / (2.0 * sigma * sigma))
    heat[d2 > (3.0 * sigma) ** 2] = 0.0
    heat[row, col] = 1.0
    return heat


# -- classification ----------------------------------------------------------

def weighted_focal(score, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss over (..., G, G); per-image normalisation then batch mean."""
    score = as_tensor(score)
    target = np.asarray(target, dtype=np.float64)
    if score.shape != target.shape:
        raise ValueError(f"weighted_focal: score {score.shape} vs target {target.shape}")
    pos = (target == 1.0).astype(np.float64)
    n_pos = pos.sum(axis=(-2, -1))
    if np.any(n_pos == 0):
        raise ValueError("weighted_focal: target has no positive cell")
    p = ops.clip(score, SCORE_EPS, 1.0 - SCORE_EPS)
    pos_term = ops.power(1.0 - p, alpha) * ops.log(p) * pos
    neg_w = (1.0 - target) ** beta * (1.0 - pos)
    neg_term = ops.power(p, alpha) * ops.log(1.0 - p) * neg_w
    per_image = ops.sum(pos_term + neg_term, axis=(-2, -1)) / (-n_pos)
    return ops.mean(per_image)


# -- box regression ----------------------------------------------------------

def _cols(box):
    box = as_tensor(box)
    return box[..., 0], box[..., 1], box[..., 2], box[..., 3]


def giou(pred, gt) -> Tensor:
    """Generalized IoU of (..., 4) center/size boxes."""
    gt_arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if np.any(gt_arr[..., 2] * gt_arr[..., 3] <= 0):
        raise ValueError("giou: ground-truth box has zero area")
    pcx, pcy, pw, ph = _cols(pred)
    gcx, gcy, gw, gh = _cols(gt)
    px0, py0, px1, py1 = pcx - pw * 0.5, pcy - ph * 0.5, pcx + pw * 0.5, pcy + ph * 0.5
    gx0, gy0, gx1, gy1 = gcx - gw * 0.5, gcy - gh * 0.5, gcx + gw * 0.5, gcy + gh * 0.5
    iw = ops.relu(ops.minimum(px1, gx1) - ops.maximum(px0, gx0))
    ih = ops.relu(ops.minimum(py1, gy1) - ops.maximum(py0, gy0))
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    ew = ops.maximum(px1, gx1) - ops.minimum(px0, gx0)
    eh = ops.maximum(py1, gy1) - ops.minimum(py0, gy0)
    enclose = ew * eh
    return inter / union - (enclose - union) / enclose


def giou_loss(pred, gt) -> Tensor:
    """Mean of 1 - GIoU."""
    return ops.mean(1.0 - giou(pred, gt))


def l1_box_loss(pred, gt) -> Tensor:
    """Mean absolute difference over (cx, cy, w, h) and the batch."""
    return ops.mean(ops.abs(as_tensor(pred) - as_tensor(gt)))


def box_at_cells(offset: Tensor, size: Tensor, cells: np.ndarray) -> Tensor:
    """Read (cx, cy, w, h) at the given (row, col) cells of batched (B, 2, G, G) maps."""
    b, _, g, _ = offset.shape
    onehot = np.zeros((b, 1, g, g))
    onehot[np.arange(b), 0, cells[:, 0], cells[:, 1]] = 1.0
    off = ops.sum(offset * onehot, axis=(2, 3))
    wh = ops.sum(size * onehot, axis=(2, 3))
    base = np.stack([cells[:, 1], cells[:, 0]], axis=1).astype(np.float64)
    center = (off + base) * (1.0 / g)
    return ops.concat([center, wh], axis=1)


# -- masks -------------------------------------------------------------------

def dice_loss(a: Tensor, b) -> Tensor:
    """1 - 2 sum(ab) / (sum(a^2) + sum(b^2)) over the last axis."""
    a = as_tensor(a)
    b = as_tensor(b)
    inter = ops.sum(a * b, axis=-1)
    denom = ops.sum(a * a, axis=-1) + ops.sum(b * b, axis=-1)
    return 1.0 - 2.0 * inter / denom


def box_indicators(box, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Column and row indicators of pixels whose centers fall inside a normalized box."""
    x0, y0, x1, y1 = (float(box[0]) - float(box[2]) / 2, float(box[1]) - float(box[3]) / 2,
                      float(box[0]) + float(box[2]) / 2, float(box[1]) + float(box[3]) / 2)
    centers = (np.arange(size) + 0.5) / size
    xs = ((centers >= x0) & (centers <= x1)).astype(np.float64)
    ys = ((centers >= y0) & (centers <= y1)).astype(np.float64)
    if xs.sum() == 0 or ys.sum() == 0:
        raise ValueError("boxinst: box covers no pixel")
    return xs, ys


def boxinst_projection_loss(mask_logits, x_indicator: np.ndarray, y_indicator: np.ndarray) -> Tensor:
    """Dice between axis max-projections of sigmoid(mask) and the box's column/row indicators.

    ``mask_logits`` is (..., S, S); indicators are (..., S). Averaged over leading axes.
    """
    prob = ops.sigmoid(mask_logits)
    proj_x = ops.max(prob, axis=-2)  # max over rows -> one value per column
    proj_y = ops.max(prob, axis=-1)
    x_ind = np.asarray(x_indicator, dtype=np.float64)
    y_ind = np.asarray(y_indicator, dtype=np.float64)
    if np.any(x_ind.sum(-1) == 0) or np.any(y_ind.sum(-1) == 0):
        raise ValueError("boxinst: empty box")
    return ops.mean(dice_loss(proj_x, x_ind) + dice_loss(proj_y, y_ind))


def boxinst_loss_for_boxes(mask_logits, boxes: np.ndarray) -> Tensor:
    """Projection loss for batched (B, S, S) logits and (B, 4) normalized boxes."""
    s = mask_logits.shape[-1]
    inds = [box_indicators(b, s) for b in np.asarray(boxes)]
    return boxinst_projection_loss(mask_logits, np.stack([i[0] for i in inds]), np.stack([i[1] for i in inds]))


def bce_with_logits(logits, target) -> Tensor:
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.float64)
    val = ops.relu(logits) - logits * t + ops.log(1.0 + ops.exp(-ops.abs(logits)))
    return ops.mean(val)


def mask_bce_dice(mask_logits, gt_mask: np.ndarray) -> Tensor:
    """Supervised mask loss: BCE plus Dice, equal weights."""
    mask_logits = as_tensor(mask_logits)
    gt = np.asarray(gt_mask, dtype=np.float64)
    lead = mask_logits.shape[:-2]
    n = mask_logits.shape[-1] * mask_logits.shape[-2]
    prob = ops.sigmoid(mask_logits).reshape(*lead, n)
    return bce_with_logits(mask_logits, gt) + ops.mean(dice_loss(prob, gt.reshape(*lead, n)))


# -- combined ----------------------------------------------------------------

def combine(components: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """L_cls + l_iou L_iou + l_1 L_1 + l_mask L_mask over whichever mask term is present."""
    for key in ("cls", "iou", "l1", "mask"):
        if key not in components:
            raise KeyError(f"loss component {key!r} missing")
    return (components["cls"] + weights.lambda_iou * components["iou"]
            + weights.lambda_l1 * components["l1"] + weights.lambda_mask * components["mask"])


def stage_loss(outputs: dict[str, Tensor], targets: dict[str, np.ndarray], weights: LossWeights,
               stage: int, task: str = "rgb") -> tuple[Tensor, dict[str, float]]:
    """Stage-1 / stage-2 objective.

    ``outputs`` holds ``score``, ``offset``, ``size`` and ``mask_logits``;
    ``targets`` holds ``box`` (B, 4) normalized, and for stage-2 ``rgb_m`` also
    ``mask`` (B, S, S). Stage 2 on ``rgb_m`` replaces the projection term by
    BCE + Dice against the annotated mask.
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    boxes = np.asarray(targets["box"], dtype=np.float64)
    score = outputs["score"]
    g = score.shape[-1]
    heat = np.stack([gaussian_heatmap(b, g) for b in boxes])
    cells = np.array([center_cell(b, g) for b in boxes])
    pred = box_at_cells(outputs["offset"], outputs["size"], cells)
    comps = {
        "cls": weighted_focal(score, heat),
        "iou": giou_loss(pred, boxes),
        "l1": l1_box_loss(pred, boxes),
    }
    if stage == 2 and task == "rgb_m":
        if "mask" not in targets:
            raise KeyError("stage-2 rgb_m loss needs ground-truth masks")
        comps["mask"] = mask_bce_dice(outputs["mask_logits"], targets["mask"])
    else:
        comps["mask"] = boxinst_loss_for_boxes(outputs["mask_logits"], boxes)
    total = combine(comps, weights)
    return total, {k: float(v.data) for k, v in comps.items()}
