"""Box-tracking (AUC, P, P_Norm) and mask (J, F, J&F) metrics.

Frame 0 carries the given initialisation and is excluded. Frames from all
clips are pooled through order-independent sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

AUC_THRESHOLDS = np.linspace(0.0, 1.0, 51)
PRECISION_PX = 20.0
NORM_PRECISION = 0.2
_IOU_EPS = 1e-9  # so a pixel-exact box clears the threshold 1.0 despite rounding


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of (..., 4) x, y, w, h boxes."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    x0 = np.maximum(a[..., 0], b[..., 0])
    y0 = np.maximum(a[..., 1], b[..., 1])
    x1 = np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2])
    y1 = np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def success_curve(ious: np.ndarray) -> np.ndarray:
    ious = np.asarray(ious, dtype=np.float64)
    return np.array([(ious >= t - _IOU_EPS).mean() for t in AUC_THRESHOLDS])


def success_auc(ious: np.ndarray) -> float:
    """Mean over 51 thresholds 0, 0.02, ..., 1 of the fraction of frames with IoU >= threshold."""
    return float(success_curve(ious).mean())


def center_errors(pred: np.ndarray, gt: np.ndarray, normalize: bool = False) -> np.ndarray:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    d = (pred[..., :2] + pred[..., 2:] / 2) - (gt[..., :2] + gt[..., 2:] / 2)
    if normalize:
        d = d / gt[..., 2:]
    return np.sqrt((d * d).sum(-1))


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    union = (pred | gt).sum()
    return 1.0 if union == 0 else float((pred & gt).sum() / union)


def _boundary(mask: np.ndarray) -> np.ndarray:
    return mask & ~binary_erosion(mask, structure=np.ones((3, 3)), border_value=0)


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance: int = 1) -> float:
    """Contour F-measure; boundary pixels match within a ``tolerance``-pixel dilation."""
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    pb, gb = _boundary(pred), _boundary(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    st = np.ones((2 * tolerance + 1, 2 * tolerance + 1), dtype=bool)
    precision = (pb & binary_dilation(gb, structure=st)).sum() / pb.sum()
    recall = (gb & binary_dilation(pb, structure=st)).sum() / gb.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass
class MetricAccumulator:
    """Per-frame sums; merging two accumulators is order-independent."""

    ious: list = field(default_factory=list)
    center: list = field(default_factory=list)
    norm_center: list = field(default_factory=list)
    j: list = field(default_factory=list)
    f: list = field(default_factory=list)

    def add_boxes(self, pred: np.ndarray, gt: np.ndarray, skip_first: bool = True) -> None:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if len(pred) != len(gt):
            raise ValueError(f"prediction has {len(pred)} frames, annotation has {len(gt)}")
        sl = slice(1, None) if skip_first else slice(None)
        self.ious.extend(box_iou(pred[sl], gt[sl]).tolist())
        self.center.extend(center_errors(pred[sl], gt[sl]).tolist())
        self.norm_center.extend(center_errors(pred[sl], gt[sl], normalize=True).tolist())

    def add_masks(self, pred: np.ndarray, gt: np.ndarray, object_ids=None, skip_first: bool = True) -> None:
        """Label maps (T, H, W); J/F averaged over objects per frame."""
        pred, gt = np.asarray(pred), np.asarray(gt)
        if len(pred) != len(gt):
            raise ValueError(f"prediction has {len(pred)} mask frames, annotation has {len(gt)}")
        ids = object_ids if object_ids is not None else [int(i) for i in np.unique(gt[0]) if i != 0]
        for t in range(1 if skip_first else 0, len(gt)):
            for i in ids:
                self.j.append(mask_iou(pred[t] == i, gt[t] == i))
                self.f.append(boundary_f(pred[t] == i, gt[t] == i))

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        return MetricAccumulator(self.ious + other.ious, self.center + other.center,
                                 self.norm_center + other.norm_center, self.j + other.j, self.f + other.f)

    def report(self) -> dict[str, float]:
        out: dict[str, float] = {}
        if self.ious:
            ious = np.array(self.ious)
            out["AUC"] = success_auc(ious)
            out["P"] = float((np.array(self.center) <= PRECISION_PX).mean())
            out["P_Norm"] = float((np.array(self.norm_center) <= NORM_PRECISION).mean())
            out["mIoU"] = float(ious.mean())
            out["frames"] = float(len(ious))
        if self.j:
            out["J"] = float(np.mean(self.j))
            out["F"] = float(np.mean(self.f))
            out["J&F"] = (out["J"] + out["F"]) / 2.0
        return out


def format_table(report: dict[str, float]) -> str:
    width = max(len(k) for k in report) if report else 4
    lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
    lines += [f"{k:<{width}}  {v:.4f}" for k, v in report.items()]
    return "\n".join(lines)


def format_keyvalue(report: dict[str, float]) -> str:
    return "".join(f"{k}={v!r}\n" for k, v in report.items())


def parse_keyvalue(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = float(v)
    return out
