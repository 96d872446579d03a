"""Two-stage training, checkpoint binding and evaluation drivers.

Stage 1 trains every Foundation Tracker parameter on RGB clips. Stage 2
freezes it, adds adapters/prompters for one modality and trains only those
(plus the segmentation head for RGB+M when configured).
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autograd import AdamW, no_grad
from .checkpoint import (META_PREFIX, CheckpointError, bytes_entry, entry_bytes, file_sha256,
                         load_checkpoint, save_checkpoint)
from .config import TASK_MODALITY, ConfigError, TrackerConfig, parse_config_text
from .data import Clip, MAX_TEXT_LEN
from .inference import (crop_region, resize_full, track_clip, track_clip_mask, xywh_to_cxcywh)
from .losses import LossWeights, stage_loss
from .metrics import MetricAccumulator
from .model import FoundationTracker
from .peft import PromptTracker, trainable_param_count

CENTER_JITTER = 0.6
SCALE_JITTER = 0.2


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    components: list[dict[str, float]] = field(default_factory=list)
    seconds: float = 0.0

    def record(self, total: float, comps: dict[str, float]) -> None:
        self.losses.append(total)
        self.components.append(comps)


def weights_of(cfg: TrackerConfig) -> LossWeights:
    return LossWeights(cfg.lambda_iou, cfg.lambda_l1, cfg.lambda_mask)


# -- training samples ---------------------------------------------------------

def crop_sample(clip: Clip, t: int, cfg: TrackerConfig, rng: np.random.Generator | None,
                modality: str | None = None) -> dict:
    """Template crop from frame 0 and a (jittered) search crop of frame ``t``.

    The returned box is (cx, cy, w, h) normalized to the search crop.
    """
    bb = cfg.backbone
    z_box = xywh_to_cxcywh(clip.boxes[0])
    gt = xywh_to_cxcywh(clip.boxes[t])
    center = gt.copy()
    if rng is not None:
        side = np.sqrt(gt[2] * gt[3])
        center[:2] += rng.uniform(-CENTER_JITTER, CENTER_JITTER, size=2) * side
        center[2:] *= np.exp(rng.uniform(-SCALE_JITTER, SCALE_JITTER))
    template, _ = crop_region(clip.frames[0], z_box, cfg.template_factor, bb.template_size)
    search, aff = crop_region(clip.frames[t], center, cfg.search_factor, bb.search_size)
    box = np.clip(aff.box_to_crop(gt) / bb.search_size, 1e-4, 1.0)
    out = {"template": template, "search": search, "box": box}
    if modality in ("D", "T", "E"):
        maps = clip.modality(modality)
        out["template_map"] = crop_region(maps[0], z_box, cfg.template_factor, bb.template_size)[0]
        out["search_map"] = crop_region(maps[t], center, cfg.search_factor, bb.search_size)[0]
    elif modality == "N":
        out["text"] = clip.tokens
    return out


def full_frame_sample(clip: Clip, t: int, cfg: TrackerConfig) -> dict:
    """Uncropped RGB+M sample: first and previous frames with their masks as prompts."""
    if t < 1:
        raise ValueError("full-frame samples need t >= 1")
    ss = cfg.backbone.search_size
    size = clip.size
    box = xywh_to_cxcywh(clip.boxes[t]) / size
    return {
        "templates": [resize_full(clip.frames[0], ss)[0], resize_full(clip.frames[t - 1], ss)[0]],
        "search": resize_full(clip.frames[t], ss)[0],
        "masks": [resize_full(clip.target_mask(0), ss)[0][None], resize_full(clip.target_mask(t - 1), ss)[0][None]],
        "mask": (resize_full(clip.target_mask(t), ss)[0] >= 0.5).astype(np.float64),
        "box": box,
    }


def _pad_text(seqs: list[np.ndarray]) -> np.ndarray:
    n = min(max(len(s) for s in seqs), MAX_TEXT_LEN)
    out = np.zeros((len(seqs), n), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s[:n]
    return out


def sample_batch(clips: list[Clip], cfg: TrackerConfig, rng: np.random.Generator, task: str,
                 jitter: bool = True) -> dict:
    """Random (clip, frame) pairs stacked into model inputs, payload and targets."""
    mod = TASK_MODALITY[task]
    picks = []
    for _ in range(cfg.batch_size):
        c = int(rng.integers(len(clips)))
        lo = 1 if mod == "M" else 0
        picks.append((c, int(rng.integers(lo, len(clips[c])))))
    if mod == "M":
        samples = [full_frame_sample(clips[c], t, cfg) for c, t in picks]
        return {
            "templates": [np.stack([s["templates"][k] for s in samples]) for k in range(2)],
            "search": np.stack([s["search"] for s in samples]),
            "payload": {"masks": [np.stack([s["masks"][k] for s in samples]) for k in range(2)]},
            "targets": {"box": np.stack([s["box"] for s in samples]),
                        "mask": np.stack([s["mask"] for s in samples])},
            "full_frame": True,
        }
    samples = [crop_sample(clips[c], t, cfg, rng if jitter else None, mod) for c, t in picks]
    payload: dict = {}
    if mod in ("D", "T", "E"):
        payload["template_map"] = np.stack([s["template_map"] for s in samples])
        payload["search_map"] = np.stack([s["search_map"] for s in samples])
    elif mod == "N":
        payload["text"] = _pad_text([s["text"] for s in samples])
    return {
        "templates": np.stack([s["template"] for s in samples]),
        "search": np.stack([s["search"] for s in samples]),
        "payload": payload,
        "targets": {"box": np.stack([s["box"] for s in samples])},
        "full_frame": False,
    }


def check_task_data(clips: list[Clip], task: str) -> None:
    """Reject datasets that cannot feed ``task``."""
    if task not in TASK_MODALITY:
        raise ConfigError(f"task={task!r} is unknown")
    if not clips:
        raise ValueError("dataset is empty")
    mod = TASK_MODALITY[task]
    for clip in clips:
        if mod in ("D", "T", "E") and len(clip.modality(mod)) != len(clip):
            raise ValueError(f"{clip.clip_id}: missing {mod} maps for task {task}")
        if mod == "N" and not clip.text.strip():
            raise ValueError(f"{clip.clip_id}: empty language description for task {task}")
        if mod == "M" and not (clip.masks[0] == 1).any():
            raise ValueError(f"{clip.clip_id}: first-frame mask empty for task {task}")


# -- optimisation loop ----------------------------------------------------------

def _run(model_fn: Callable[[dict], dict], optim: AdamW, cfg: TrackerConfig, clips: list[Clip],
         task: str, stage: int, steps: int, log: TrainLog, logger: Callable[[str], None] | None) -> None:
    rng = np.random.default_rng(cfg.seed)
    weights = weights_of(cfg)
    t0 = time.perf_counter()
    for step in range(steps):
        if cfg.lr_decay_step > 0:
            optim.lr_scale = 0.1 ** (step // cfg.lr_decay_step)
        batch = sample_batch(clips, cfg, rng, task)
        out = model_fn(batch)
        loss, comps = stage_loss(out, batch["targets"], weights, stage, task)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        optim.zero_grad()
        loss.backward()
        optim.step()
        log.record(value, comps)
        if logger is not None:
            parts = " ".join(f"{k}={v:.4f}" for k, v in comps.items())
            logger(f"step {step} loss={value:.6f} {parts}")
    log.seconds += time.perf_counter() - t0


def pretrain_foundation(cfg: TrackerConfig, clips: list[Clip], steps: int | None = None,
                        model: FoundationTracker | None = None,
                        logger: Callable[[str], None] | None = None) -> tuple[FoundationTracker, TrainLog]:
    """Stage 1: all parameters, backbone and head learning rates, stage-1 loss."""
    check_task_data(clips, "rgb")
    model = model or FoundationTracker(cfg)
    groups = model.parameter_groups()
    optim = AdamW([(groups["backbone"], cfg.lr_backbone), (groups["heads"], cfg.lr_heads)],
                  weight_decay=cfg.weight_decay)
    log = TrainLog()

    def fwd(batch):
        return model(batch["templates"], batch["search"], with_mask=True)

    _run(fwd, optim, cfg, clips, "rgb", 1, cfg.steps if steps is None else steps, log, logger)
    return model, log


def snapshot(params) -> dict[int, bytes]:
    return {id(p): p.data.tobytes() for p in params}


def freeze_audit(foundation: FoundationTracker, before: dict[int, bytes]) -> int:
    """Raise unless every frozen foundation parameter kept its exact bytes; returns how many were checked."""
    changed = [name for name, p in foundation.named_parameters()
               if p.frozen and id(p) in before and p.data.tobytes() != before[id(p)]]
    if changed:
        raise TrainingError(f"frozen foundation parameters changed: {', '.join(changed[:5])}")
    return sum(1 for _, p in foundation.named_parameters() if p.frozen)


def build_prompt_tracker(foundation: FoundationTracker, cfg: TrackerConfig, task: str) -> PromptTracker:
    mod = TASK_MODALITY[task]
    if mod is None:
        raise ConfigError("task=rgb has no prompt modality; finetuning needs rgb_n/m/d/t/e")
    return PromptTracker(foundation, mod, cfg=cfg, rng=np.random.default_rng(cfg.seed + 1))


def finetune_prompt(cfg: TrackerConfig, foundation: FoundationTracker, clips: list[Clip], task: str | None = None,
                    steps: int | None = None,
                    logger: Callable[[str], None] | None = None) -> tuple[PromptTracker, TrainLog]:
    """Stage 2 with a post-hoc audit that the frozen foundation is untouched."""
    task = task or cfg.task
    check_task_data(clips, task)
    tracker = build_prompt_tracker(foundation, cfg, task)
    frozen_before = snapshot(p for p in foundation.parameters() if p.frozen)
    seg = {id(p) for p in foundation.seg_head.parameters()}
    train = tracker.trainable_parameters()
    optim = AdamW([([p for p in train if id(p) not in seg], cfg.lr_prompt),
                   ([p for p in train if id(p) in seg], cfg.lr_heads)], weight_decay=cfg.weight_decay)
    log = TrainLog()

    def fwd(batch):
        return tracker(batch["templates"], batch["search"], batch["payload"], with_mask=True,
                       full_frame=batch["full_frame"])

    _run(fwd, optim, cfg, clips, task, 2, cfg.steps if steps is None else steps, log, logger)
    freeze_audit(foundation, frozen_before)
    return tracker, log


# -- checkpoints ---------------------------------------------------------------

def _meta(entries: dict, key: str, text: str) -> None:
    entries[META_PREFIX + key] = bytes_entry(text.encode("utf-8"))


def _meta_text(entries: dict, key: str, path) -> str:
    name = META_PREFIX + key
    if name not in entries:
        raise CheckpointError(f"{path}: missing {name}")
    return entry_bytes(entries[name]).decode("utf-8")


def _stored_config(cfg: TrackerConfig) -> str:
    """Config text without run paths, so checkpoint bytes depend only on content."""
    return cfg.replace(data="", checkpoint="", out="").to_text()


def foundation_entries(model: FoundationTracker, cfg: TrackerConfig) -> dict[str, np.ndarray]:
    entries = dict(model.state_dict())
    _meta(entries, "kind", "foundation")
    _meta(entries, "config", _stored_config(cfg))
    return entries


def save_foundation(path, model: FoundationTracker, cfg: TrackerConfig, dtype=None) -> Path:
    return save_checkpoint(path, foundation_entries(model, cfg), dtype=dtype)


def _params(entries: dict) -> dict[str, np.ndarray]:
    return {k: v for k, v in entries.items() if not k.startswith(META_PREFIX)}


def load_foundation(path, cfg: TrackerConfig | None = None) -> tuple[FoundationTracker, TrackerConfig]:
    """Rebuild a Foundation Tracker from its checkpoint; ``cfg`` overrides the stored config."""
    entries = load_checkpoint(path)
    kind = _meta_text(entries, "kind", path)
    if kind != "foundation":
        raise CheckpointError(f"{path}: expected a foundation checkpoint, found {kind!r}")
    stored = parse_config_text(_meta_text(entries, "config", path), source=str(path))
    if cfg is not None:
        for key in ("dim", "depth", "heads", "patch_size", "template_size", "search_size",
                    "mlp_ratio", "head_channels"):
            if getattr(cfg, key) != getattr(stored, key):
                raise ConfigError(f"{key}={getattr(cfg, key)} does not match checkpoint value {getattr(stored, key)}")
    use = cfg or stored
    model = FoundationTracker(use)
    model.load_state_dict(_params(entries))
    return model, use


def delta_entries(tracker: PromptTracker, cfg: TrackerConfig, foundation_sha: str, task: str) -> dict[str, np.ndarray]:
    """Trainable parameters only, bound to the foundation file by its SHA-256."""
    entries = {name: p.data for name, p in tracker.named_parameters() if not p.frozen}
    _meta(entries, "kind", "delta")
    _meta(entries, "task", task)
    _meta(entries, "config", _stored_config(cfg))
    _meta(entries, "foundation_sha256", foundation_sha)
    return entries


def save_delta(path, tracker: PromptTracker, cfg: TrackerConfig, foundation_path, task: str | None = None,
               dtype=None) -> Path:
    return save_checkpoint(path, delta_entries(tracker, cfg, file_sha256(foundation_path), task or cfg.task),
                           dtype=dtype)


def load_prompt_tracker(delta_path, foundation_path) -> tuple[PromptTracker, TrackerConfig, str]:
    entries = load_checkpoint(delta_path)
    kind = _meta_text(entries, "kind", delta_path)
    if kind != "delta":
        raise CheckpointError(f"{delta_path}: expected a delta checkpoint, found {kind!r}")
    want = _meta_text(entries, "foundation_sha256", delta_path)
    have = file_sha256(foundation_path)
    if want != have:
        raise CheckpointError(f"{delta_path}: foundation hash mismatch (expected {want[:12]}..., "
                              f"{foundation_path} is {have[:12]}...)")
    cfg = parse_config_text(_meta_text(entries, "config", delta_path), source=str(delta_path))
    task = _meta_text(entries, "task", delta_path)
    foundation, _ = load_foundation(foundation_path, cfg)
    tracker = build_prompt_tracker(foundation, cfg, task)
    params = _params(entries)
    named = dict(tracker.named_parameters())
    expected = {n for n, p in named.items() if not p.frozen}
    if set(params) != expected:
        missing = sorted(expected - set(params))
        extra = sorted(set(params) - expected)
        raise CheckpointError(f"{delta_path}: parameter set mismatch (missing {missing[:3]}, extra {extra[:3]})")
    for name, arr in params.items():
        p = named[name]
        if p.shape != arr.shape:
            raise CheckpointError(f"{delta_path}: {name} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(p.data.dtype)
    return tracker, cfg, task


def config_hash(cfg: TrackerConfig) -> str:
    return hashlib.sha256(cfg.to_text().encode("utf-8")).hexdigest()


# -- evaluation ----------------------------------------------------------------

def evaluate_clips(model, clips: list[Clip], task: str, cfg: TrackerConfig):
    """Track every clip and pool metrics; returns (report, per-clip results)."""
    check_task_data(clips, task)
    acc = MetricAccumulator()
    results = []
    with no_grad():
        for clip in clips:
            if task == "rgb_m":
                res = track_clip_mask(model, clip, cfg)
                acc.add_masks(res.masks, clip.masks)
            else:
                res = track_clip(model, clip, task, cfg)
            acc.add_boxes(res.boxes, clip.boxes)
            results.append(res)
    return acc.report(), results


def mean_tracking_iou(model, clips: list[Clip], task: str, cfg: TrackerConfig) -> float:
    report, _ = evaluate_clips(model, clips, task, cfg)
    return report["mIoU"]


def census_report(tracker: PromptTracker) -> dict[str, int]:
    return trainable_param_count(tracker)
