"""Frame-by-frame tracking loops.

Crop-based tasks (RGB, RGB+N/D/T/E) cache the frame-0 template crop and
search a window around the previous box with a Hanning prior. RGB+M runs
uncropped on full frames with the first and previous frames as templates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .autograd import no_grad
from .config import TrackerConfig
from .data import Clip
from .heads import decode_box, maps_from_outputs
from .peft import PromptTracker


# -- geometry -----------------------------------------------------------------

def hanning_window(n: int) -> np.ndarray:
    """w[i] = 0.5 (1 - cos(2 pi i / (n - 1)))."""
    if n < 2:
        raise ValueError(f"hanning_window needs n >= 2, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def hanning_penalty(n: int) -> np.ndarray:
    w = hanning_window(n)
    return np.outer(w, w)


@dataclass(frozen=True)
class Affine:
    """Crop pixel u maps to frame pixel ``offset + u * scale`` on each axis."""

    x0: float
    y0: float
    scale: float

    def to_frame(self, u: float, v: float) -> tuple[float, float]:
        return self.x0 + u * self.scale, self.y0 + v * self.scale

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.x0) / self.scale, (y - self.y0) / self.scale

    def box_to_frame(self, box_px: np.ndarray) -> np.ndarray:
        """(cx, cy, w, h) in crop pixels -> frame pixels."""
        cx, cy = self.to_frame(box_px[0], box_px[1])
        return np.array([cx, cy, box_px[2] * self.scale, box_px[3] * self.scale])

    def box_to_crop(self, box_px: np.ndarray) -> np.ndarray:
        cx, cy = self.to_crop(box_px[0], box_px[1])
        return np.array([cx, cy, box_px[2] / self.scale, box_px[3] / self.scale])


def crop_region(frame: np.ndarray, center_box, factor: float, out_size: int) -> tuple[np.ndarray, Affine]:
    """Square window of side ``factor * sqrt(w h)`` around a (cx, cy, w, h) pixel box.

    Outside the frame is zero; the window is bilinearly resampled to ``out_size``.
    """
    if factor <= 0:
        raise ValueError("crop factor must be positive")
    cx, cy, w, h = (float(v) for v in center_box)
    if not (w > 0 and h > 0):
        raise ValueError(f"crop_region: degenerate box w={w}, h={h}")
    side = factor * np.sqrt(w * h)
    aff = Affine(cx - side / 2.0, cy - side / 2.0, side / out_size)
    centers = np.arange(out_size) + 0.5
    ys = aff.y0 + centers * aff.scale - 0.5
    xs = aff.x0 + centers * aff.scale - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 2:
        out = map_coordinates(img, grid, order=1, mode="grid-constant", cval=0.0)
    else:
        out = np.stack([map_coordinates(c, grid, order=1, mode="grid-constant", cval=0.0) for c in img])
    return out, aff


def resize_full(frame: np.ndarray, out_size: int) -> tuple[np.ndarray, Affine]:
    """Resample a whole square frame to ``out_size``."""
    s = frame.shape[-1]
    return crop_region(frame, (s / 2, s / 2, s, s), 1.0, out_size)


def xywh_to_cxcywh(b) -> np.ndarray:
    x, y, w, h = (float(v) for v in b)
    return np.array([x + w / 2, y + h / 2, w, h])


def cxcywh_to_xywh(b) -> np.ndarray:
    cx, cy, w, h = (float(v) for v in b)
    return np.array([cx - w / 2, cy - h / 2, w, h])


def clamp_box(box_c: np.ndarray, width: int, height: int) -> np.ndarray:
    cx = float(np.clip(box_c[0], 0.0, width))
    cy = float(np.clip(box_c[1], 0.0, height))
    w = float(np.clip(box_c[2], 1.0, width))
    h = float(np.clip(box_c[3], 1.0, height))
    if not np.isfinite([cx, cy, w, h]).all():
        raise ValueError("tracking produced a non-finite box")
    return np.array([cx, cy, w, h])


# -- results ------------------------------------------------------------------

@dataclass
class TrackResult:
    boxes: np.ndarray                   # (T, 4) x, y, w, h pixels
    scores: np.ndarray                  # (T,)
    masks: np.ndarray | None = None     # (T, S, S) label map for RGB+M
    flags: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.boxes)


def _forward(model, templates, search, payload, with_mask: bool, full_frame: bool = False):
    if isinstance(model, PromptTracker):
        return model(templates, search, payload, with_mask=with_mask, full_frame=full_frame)
    return model(templates, search, with_mask=with_mask, full_frame=full_frame)


def _modality(task: str) -> str | None:
    return {"rgb": None, "rgb_n": "N", "rgb_d": "D", "rgb_t": "T", "rgb_e": "E", "rgb_m": "M"}[task]


# -- crop-based tracking ------------------------------------------------------

def track_clip(model, clip: Clip, task: str, cfg: TrackerConfig, init_box=None) -> TrackResult:
    """Track object 1 through ``clip`` starting from its frame-0 box."""
    mod = _modality(task)
    if mod == "M":
        raise ValueError("use track_clip_mask for rgb_m")
    t0 = time.perf_counter()
    size = clip.size
    bb = cfg.backbone
    penalty = hanning_penalty(bb.grid)
    box0 = np.asarray(init_box if init_box is not None else clip.boxes[0], dtype=np.float64)
    prev = xywh_to_cxcywh(box0)
    template, aff_z = crop_region(clip.frames[0], prev, cfg.template_factor, bb.template_size)
    payload: dict = {}
    if mod == "N":
        payload["text"] = clip.tokens[None]
    elif mod in ("D", "T", "E"):
        maps = clip.modality(mod)
        if len(maps) != len(clip):
            raise ValueError(f"missing modality frames for RGB+{mod}")
        payload["template_map"] = crop_region(maps[0], prev, cfg.template_factor, bb.template_size)[0][None]

    boxes = [box0]
    scores = [1.0]
    with no_grad():
        for t in range(1, len(clip)):
            search, aff = crop_region(clip.frames[t], prev, cfg.search_factor, bb.search_size)
            if mod in ("D", "T", "E"):
                payload["search_map"] = crop_region(clip.modality(mod)[t], prev, cfg.search_factor,
                                                    bb.search_size)[0][None]
            out = _forward(model, template[None], search[None], payload, with_mask=False)
            box, score = decode_box(maps_from_outputs(out, 0), penalty)
            crop_box = box.as_array() * bb.search_size
            prev = clamp_box(aff.box_to_frame(crop_box), size, size)
            boxes.append(cxcywh_to_xywh(prev))
            scores.append(score)
    return TrackResult(np.array(boxes), np.array(scores), seconds=time.perf_counter() - t0)


# -- mask tracking ------------------------------------------------------------

def mask_bbox(mask: np.ndarray) -> np.ndarray | None:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return np.array([xs.min(), ys.min(), xs.max() - xs.min() + 1, ys.max() - ys.min() + 1], dtype=np.float64)


def _predict_object_prob(model, clip: Clip, t: int, first_mask: np.ndarray, prev_mask: np.ndarray,
                         cfg: TrackerConfig) -> np.ndarray:
    ss = cfg.backbone.search_size
    z0 = resize_full(clip.frames[0], ss)[0]
    zp = resize_full(clip.frames[t - 1], ss)[0]
    x = resize_full(clip.frames[t], ss)[0]
    m0 = resize_full(first_mask, ss)[0]
    mp = resize_full(prev_mask, ss)[0]
    payload = {"masks": [m0[None, None], mp[None, None]]}
    out = _forward(model, [z0[None], zp[None]], x[None], payload, with_mask=True, full_frame=True)
    prob = 1.0 / (1.0 + np.exp(-out["mask_logits"].data[0]))
    return resize_full(prob, clip.size)[0]


def track_clip_mask(model, clip: Clip, cfg: TrackerConfig, first_labels: np.ndarray | None = None) -> TrackResult:
    """Uncropped first+previous-frame mask propagation; objects tracked independently, merged by argmax."""
    t0 = time.perf_counter()
    labels0 = np.asarray(first_labels if first_labels is not None else clip.masks[0])
    ids = [int(i) for i in np.unique(labels0) if i != 0]
    if not ids:
        raise ValueError("track_clip_mask: first-frame mask is empty")
    size = clip.size
    T = len(clip)
    label_maps = np.zeros((T, size, size), dtype=np.uint8)
    label_maps[0] = labels0
    first = {i: (labels0 == i).astype(np.float64) for i in ids}
    prev = dict(first)
    boxes = [mask_bbox(labels0 == ids[0])]
    scores = [1.0]
    flags: list[str] = []
    with no_grad():
        for t in range(1, T):
            probs = np.zeros((len(ids) + 1, size, size))
            probs[0] = 0.5  # background wins unless some object is above threshold
            for k, i in enumerate(ids):
                if prev[i].sum() == 0:
                    flags.append(f"frame {t}: object {i} previous mask empty")
                probs[k + 1] = _predict_object_prob(model, clip, t, first[i], prev[i], cfg)
            winner = probs.argmax(axis=0)
            lab = np.zeros((size, size), dtype=np.uint8)
            for k, i in enumerate(ids):
                lab[winner == k + 1] = i
            label_maps[t] = lab
            for i in ids:
                prev[i] = (lab == i).astype(np.float64)
            b = mask_bbox(lab == ids[0])
            if b is None:
                flags.append(f"frame {t}: object {ids[0]} lost")
                b = boxes[-1]
            boxes.append(b)
            scores.append(float(probs[1].max()))
    return TrackResult(np.array(boxes), np.array(scores), masks=label_maps, flags=flags,
                       seconds=time.perf_counter() - t0)
