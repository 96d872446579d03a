import numpy as np
import pytest

from onetracker import inference
from onetracker.data import GenConfig, generate_clip
from onetracker.inference import (Affine, crop_region, cxcywh_to_xywh, hanning_window, resize_full, track_clip,
                                  track_clip_mask, xywh_to_cxcywh)
from onetracker.model import FoundationTracker
from onetracker.training import build_prompt_tracker


def test_hanning_values():
    assert np.allclose(hanning_window(3), [0, 1, 0])
    assert np.allclose(hanning_window(5), [0, 0.5, 1, 0.5, 0])
    with pytest.raises(ValueError):
        hanning_window(1)


def test_crop_geometry():
    frame = np.zeros((100, 100))
    _, aff = crop_region(frame, (50, 50, 20, 20), 4.0, 40)
    assert aff == Affine(10.0, 10.0, 2.0)
    assert aff.to_frame(0, 0) == (10.0, 10.0)
    assert aff.to_frame(40, 40) == (90.0, 90.0)


def test_crop_samples_pixel_centres():
    frame = np.arange(100.0).reshape(10, 10)
    crop, aff = crop_region(frame, (5, 5, 10, 10), 1.0, 10)
    assert aff.scale == 1.0 and np.allclose(crop, frame)


def test_full_frame_is_pure_scale():
    _, aff = resize_full(np.zeros((3, 128, 128)), 64)
    assert (aff.x0, aff.y0, aff.scale) == (0.0, 0.0, 2.0)


def test_outside_frame_is_zero():
    crop, _ = crop_region(np.ones((20, 20)), (0, 0, 10, 10), 4.0, 8)
    assert crop[0, 0] == 0 and crop[-1, -1] == 1


def test_box_roundtrip(rng):
    for _ in range(50):
        aff = Affine(*rng.uniform(-50, 50, 2), rng.uniform(0.2, 5))
        b = rng.uniform(1, 100, 4)
        assert np.abs(aff.box_to_frame(aff.box_to_crop(b)) - b).max() <= 1e-9
        assert np.allclose(cxcywh_to_xywh(xywh_to_cxcywh(b)), b)


def test_crop_errors():
    with pytest.raises(ValueError):
        crop_region(np.zeros((8, 8)), (4, 4, 0, 2), 2.0, 4)
    with pytest.raises(ValueError):
        crop_region(np.zeros((8, 8)), (4, 4, 2, 2), 0.0, 4)


@pytest.fixture(scope="module")
def clip():
    return generate_clip(4, GenConfig(frame_size=96, length=5))


def test_tracking_deterministic(toy, clip):
    model = FoundationTracker(toy, np.random.default_rng(0))
    a = track_clip(model, clip, "rgb", toy)
    b = track_clip(model, clip, "rgb", toy)
    assert a.boxes.tobytes() == b.boxes.tobytes()
    assert a.boxes.shape == (5, 4) and np.array_equal(a.boxes[0], clip.boxes[0])
    assert (a.boxes[:, 2:] >= 1).all()


def test_zero_init_prompt_tracker_follows_foundation(toy, clip):
    model = FoundationTracker(toy, np.random.default_rng(0))
    rgb = track_clip(model, clip, "rgb", toy)
    for task in ("rgb_t", "rgb_d", "rgb_e", "rgb_n"):
        tracker = build_prompt_tracker(FoundationTracker(toy, np.random.default_rng(0)), toy, task)
        other = track_clip(tracker, clip, task, toy)
        assert np.abs(other.boxes - rgb.boxes).max() < 1e-8, task


def test_track_clip_rejects_mask_task(toy, clip):
    with pytest.raises(ValueError, match="track_clip_mask"):
        track_clip(FoundationTracker(toy, np.random.default_rng(0)), clip, "rgb_m", toy)


def test_mask_tracking_labels(toy):
    c = generate_clip(8, GenConfig(frame_size=64, length=3, num_objects=2))
    model = build_prompt_tracker(FoundationTracker(toy, np.random.default_rng(0)), toy, "rgb_m")
    res = track_clip_mask(model, c, toy)
    assert res.masks.shape == (3, 64, 64)
    assert np.array_equal(res.masks[0], c.masks[0])
    assert set(np.unique(res.masks)) <= {0, 1, 2}


def test_mask_tracking_flags_empty_previous(toy, monkeypatch):
    c = generate_clip(8, GenConfig(frame_size=64, length=3))
    monkeypatch.setattr(inference, "_predict_object_prob", lambda *a: np.zeros((64, 64)))
    res = track_clip_mask(None, c, toy)
    assert "frame 1: object 1 lost" in res.flags
    assert "frame 2: object 1 previous mask empty" in res.flags
    assert np.array_equal(res.boxes[2], res.boxes[0])


def test_mask_tracking_empty_first_mask(toy):
    c = generate_clip(8, GenConfig(frame_size=64, length=2))
    with pytest.raises(ValueError, match="empty"):
        track_clip_mask(None, c, toy, first_labels=np.zeros((64, 64), np.uint8))
