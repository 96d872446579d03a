"""Deterministic synthetic multimodal clips and the on-disk clip format.

A clip directory holds::

    frames/NNNN.ppm                 binary P6, 8-bit RGB
    depth|thermal|event/NNNN.pgm    binary P5, 8-bit
    masks/NNNN.pgm                  label map (0 background, 1 target, 2.. extra objects)
    boxes.txt                       "frame_index x y w h" (pixels, top-left corner)
    lang.txt                        one UTF-8 sentence
    meta.txt                        key=value (size, length, seed, ...)
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import zoom

PAD, UNK = 0, 1
MAX_TEXT_LEN = 16

COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.9, 0.9),
    "magenta": (0.9, 0.1, 0.85),
    "white": (0.97, 0.97, 0.97),
    "orange": (1.0, 0.55, 0.05),
}
SHAPES = ("square", "rectangle", "circle", "ellipse")
DIRECTIONS = ("left", "right", "up", "down", "still")

_WORDS = (
    ["<pad>", "<unk>", "track", "the", "moving", "a", "an", "object", "target", "follow", "find",
     "is", "small", "large", "and", "to", "of", "in", "on", "with", "near", "slowly", "quickly",
     "box", "shape", "colored", "this", "that", "which", "it", "towards", "away"]
    + list(COLORS) + list(SHAPES) + list(DIRECTIONS)
)


class DatasetError(ValueError):
    """Malformed clip directory; the message names the file and line."""


class Vocabulary:
    """Fixed word <-> id mapping; id 0 is padding, id 1 unknown."""

    def __init__(self, words=None, size: int = 64):
        words = list(words or _WORDS)
        while len(words) < size:
            words.append(f"<extra{len(words)}>")
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        self.words = words[:size] if len(words) > size else words
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def id(self, word: str) -> int:
        return self.index.get(word, UNK)

    def word(self, idx: int) -> str:
        return self.words[idx]


DEFAULT_VOCAB = Vocabulary()


def tokenize(sentence: str, vocab: Vocabulary = DEFAULT_VOCAB, max_len: int = MAX_TEXT_LEN) -> np.ndarray:
    """Lowercase, drop punctuation, map words to ids, truncate; empty input becomes ``[UNK]``."""
    cleaned = sentence.lower().translate(str.maketrans("", "", string.punctuation))
    ids = [vocab.id(w) for w in cleaned.split()][:max_len]
    return np.array(ids or [UNK], dtype=np.int64)


# -- generation ---------------------------------------------------------------

@dataclass
class GenConfig:
    frame_size: int = 128
    length: int = 12
    num_objects: int = 1
    num_distractors: int = 0
    max_speed: float = 3.0
    jitter: float = 0.5
    min_size: float = 0.12
    max_size: float = 0.2
    rgb_corruption: float = 0.0
    static: bool = False


@dataclass
class Clip:
    frames: np.ndarray          # (T, 3, S, S) in [0, 1]
    boxes: np.ndarray           # (T, 4) x, y, w, h pixels of object 1
    masks: np.ndarray           # (T, S, S) uint8 label map
    depth: np.ndarray           # (T, 1, S, S)
    thermal: np.ndarray
    event: np.ndarray
    text: str
    clip_id: str = "clip"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> int:
        return self.frames.shape[-1]

    @property
    def tokens(self) -> np.ndarray:
        return tokenize(self.text)

    def modality(self, key: str) -> np.ndarray:
        return {"D": self.depth, "T": self.thermal, "E": self.event}[key]

    def target_mask(self, t: int) -> np.ndarray:
        return (self.masks[t] == 1).astype(np.float64)


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def _smooth_noise(rng: np.random.Generator, size: int, cells: int, channels: int) -> np.ndarray:
    coarse = rng.random((channels, cells, cells))
    return zoom(coarse, (1, size / cells, size / cells), order=1, mode="nearest")[:, :size, :size]


def _shape_mask(shape: str, cx: float, cy: float, w: float, h: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    px, py = xx + 0.5, yy + 0.5
    if shape in ("square", "rectangle"):
        return (np.abs(px - cx) <= w / 2) & (np.abs(py - cy) <= h / 2)
    return ((px - cx) / (w / 2)) ** 2 + ((py - cy) / (h / 2)) ** 2 <= 1.0


def _bbox(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    return np.array([x0, y0, x1 - x0 + 1, y1 - y0 + 1], dtype=np.float64)


def _direction(vx: float, vy: float, static: bool) -> str:
    if static or (abs(vx) < 1e-9 and abs(vy) < 1e-9):
        return "still"
    if abs(vx) >= abs(vy):
        return "right" if vx > 0 else "left"
    return "down" if vy > 0 else "up"


class _Object:
    def __init__(self, rng, cfg: GenConfig, color: str, shape: str, near=None):
        s = cfg.frame_size
        side = rng.uniform(cfg.min_size, cfg.max_size) * s
        if shape == "square" or shape == "circle":
            self.w = self.h = side
        else:
            aspect = rng.uniform(1.4, 1.8)
            self.w, self.h = (side * aspect, side / aspect) if rng.random() < 0.5 else (side / aspect, side * aspect)
        self.color, self.shape = color, shape
        margin_x, margin_y = self.w / 2 + 2, self.h / 2 + 2
        if near is None:
            self.cx = rng.uniform(s * 0.3, s * 0.7)
            self.cy = rng.uniform(s * 0.3, s * 0.7)
        else:
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(1.3, 1.9) * np.sqrt(near.w * near.h)
            self.cx, self.cy = near.cx + dist * np.cos(ang), near.cy + dist * np.sin(ang)
        self.cx = float(np.clip(self.cx, margin_x, s - margin_x))
        self.cy = float(np.clip(self.cy, margin_y, s - margin_y))
        if cfg.static:
            self.vx = self.vy = 0.0
        else:
            speed = rng.uniform(0.4, 1.0) * cfg.max_speed
            ang = rng.uniform(0, 2 * np.pi)
            self.vx, self.vy = speed * np.cos(ang), speed * np.sin(ang)

    def step(self, rng, cfg: GenConfig):
        if cfg.static:
            return
        s = cfg.frame_size
        self.cx += self.vx + rng.normal(0, cfg.jitter)
        self.cy += self.vy + rng.normal(0, cfg.jitter)
        mx, my = self.w / 2 + 1, self.h / 2 + 1
        # clamp at the border and bounce so the object never leaves the frame
        if not (mx <= self.cx <= s - mx):
            self.vx = -self.vx
        if not (my <= self.cy <= s - my):
            self.vy = -self.vy
        self.cx = float(np.clip(self.cx, mx, s - mx))
        self.cy = float(np.clip(self.cy, my, s - my))

    def mask(self, size: int) -> np.ndarray:
        return _shape_mask(self.shape, self.cx, self.cy, self.w, self.h, size)


def generate_clip(seed: int, cfg: GenConfig | None = None, clip_id: str | None = None) -> Clip:
    """Render one clip; identical ``seed`` and ``cfg`` give a bit-identical clip."""
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng([seed, 1])  # corruption stream; leaves the scene unchanged
    s, T = cfg.frame_size, cfg.length
    palette = list(COLORS)

    background = 0.25 + 0.5 * (0.7 * _smooth_noise(rng, s, 6, 3) + 0.3 * rng.random((3, s, s)))
    depth_bg = 0.1 + 0.15 * np.linspace(0, 1, s)[:, None] * np.ones((1, s))
    thermal_bg = 0.2 * _smooth_noise(rng, s, 4, 1)[0]

    color = palette[rng.integers(len(palette))]
    shape = SHAPES[rng.integers(len(SHAPES))]
    target = _Object(rng, cfg, color, shape)
    others = [_Object(rng, cfg, palette[rng.integers(len(palette))], SHAPES[rng.integers(len(SHAPES))])
              for _ in range(cfg.num_objects - 1)]
    distractors = []
    for _ in range(cfg.num_distractors):
        if rng.random() < 0.5:  # same colour, different shape
            d_color, d_shape = color, rng.choice([x for x in SHAPES if x != shape])
        else:                   # same shape, different colour
            d_color, d_shape = rng.choice([c for c in palette if c != color]), shape
        distractors.append(_Object(rng, cfg, str(d_color), str(d_shape), near=target))

    direction = _direction(target.vx, target.vy, cfg.static)
    text = f"track the {color} {shape} moving {direction}"

    frames = np.zeros((T, 3, s, s))
    masks = np.zeros((T, s, s), dtype=np.uint8)
    depth = np.zeros((T, 1, s, s))
    thermal = np.zeros((T, 1, s, s))
    event = np.zeros((T, 1, s, s))
    boxes = np.zeros((T, 4))
    prev_gray = None
    for t in range(T):
        if t > 0:
            for obj in [target, *others, *distractors]:
                obj.step(rng, cfg)
        img = background.copy()
        dmap = depth_bg.copy()
        for obj in distractors:
            m = obj.mask(s)
            img[:, m] = np.array(COLORS[obj.color])[:, None]
        label = np.zeros((s, s), dtype=np.uint8)
        for k, obj in enumerate([*others[::-1], target]):
            m = obj.mask(s)
            img[:, m] = np.array(COLORS[obj.color])[:, None]
            dmap[m] = min(1.0, 8.0 / np.sqrt(obj.w * obj.h))
            label[m] = len(others) + 1 - k
        tmask = label == 1
        clean = _quantize(img)
        gray = clean.mean(axis=0)
        event[t, 0] = 0.0 if prev_gray is None else _quantize(np.abs(gray - prev_gray))
        prev_gray = gray
        thermal[t, 0] = _quantize(np.where(tmask, 1.0, thermal_bg))
        depth[t, 0] = _quantize(dmap)
        if cfg.rgb_corruption > 0:
            img = _corrupt(noise_rng, img, target, cfg.rgb_corruption)
        frames[t] = _quantize(img)
        masks[t] = label
        boxes[t] = _bbox(tmask)

    return Clip(frames=frames, boxes=boxes, masks=masks, depth=depth, thermal=thermal, event=event,
                text=text, clip_id=clip_id or f"clip_{seed}", seed=seed,
                meta={"color": color, "shape": shape, "direction": direction})


def _corrupt(rng, img: np.ndarray, target: _Object, level: float) -> np.ndarray:
    """Occluder blobs around the target plus pixel noise and contrast loss on the target."""
    s = img.shape[-1]
    out = img.copy()
    tm = target.mask(s)
    bg_mean = img[:, ~tm].mean(axis=1)
    out[:, tm] = (1 - 0.6 * level) * out[:, tm] + 0.6 * level * bg_mean[:, None]
    palette = list(COLORS.values())
    n_blobs = int(round(3 * level)) + 1
    for _ in range(n_blobs):
        side = rng.uniform(0.6, 1.2) * np.sqrt(target.w * target.h)
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.0, 1.8) * np.sqrt(target.w * target.h)
        cx, cy = target.cx + dist * np.cos(ang), target.cy + dist * np.sin(ang)
        m = _shape_mask("square" if rng.random() < 0.5 else "circle", cx, cy, side, side, s)
        col = np.array(palette[rng.integers(len(palette))])
        out[:, m] = col[:, None]
    out += rng.normal(0.0, 0.25 * level, size=out.shape)
    return out


# -- file I/O -----------------------------------------------------------------

def _write_pnm(path: Path, img: np.ndarray) -> None:
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if data.ndim == 3:  # (3, H, W)
        h, w = data.shape[1:]
        header, payload = f"P6\n{w} {h}\n255\n", data.transpose(1, 2, 0).tobytes()
    else:
        h, w = data.shape
        header, payload = f"P5\n{w} {h}\n255\n", data.tobytes()
    path.write_bytes(header.encode("ascii") + payload)


def _write_pgm_raw(path: Path, data: np.ndarray) -> None:
    h, w = data.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.astype(np.uint8).tobytes())


def _read_pnm(path: Path) -> np.ndarray:
    """Return uint8 array: (H, W) for P5, (3, H, W) for P6."""
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DatasetError(f"{path}: unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DatasetError(f"{path}: malformed header {tokens!r}") from None
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    ch = 3 if magic == b"P6" else 1
    body = raw[pos:pos + w * h * ch]
    if len(body) != w * h * ch:
        raise DatasetError(f"{path}: expected {w * h * ch} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, ch)
    return arr.transpose(2, 0, 1) if ch == 3 else arr[:, :, 0]


def _fmt(v: float) -> str:
    return repr(float(v))


def save_clip(clip: Clip, path: str | Path) -> Path:
    root = Path(path)
    for sub in ("frames", "depth", "thermal", "event", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t in range(len(clip)):
        name = f"{t:04d}"
        _write_pnm(root / "frames" / f"{name}.ppm", clip.frames[t])
        _write_pnm(root / "depth" / f"{name}.pgm", clip.depth[t, 0])
        _write_pnm(root / "thermal" / f"{name}.pgm", clip.thermal[t, 0])
        _write_pnm(root / "event" / f"{name}.pgm", clip.event[t, 0])
        _write_pgm_raw(root / "masks" / f"{name}.pgm", clip.masks[t])
    lines = [f"{t} {' '.join(_fmt(v) for v in clip.boxes[t])}\n" for t in range(len(clip))]
    (root / "boxes.txt").write_text("".join(lines))
    (root / "lang.txt").write_text(clip.text + "\n", encoding="utf-8")
    meta = {"size": clip.size, "length": len(clip), "seed": clip.seed, "clip_id": clip.clip_id, **clip.meta}
    (root / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return root


def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DatasetError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    for key in ("size", "length", "seed"):
        if key not in meta:
            raise DatasetError(f"{path}: missing key {key!r}")
    return meta


def _read_boxes(path: Path, length: int) -> np.ndarray:
    boxes = np.zeros((length, 4))
    seen = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DatasetError(f"{path}:{lineno}: expected 'frame_index x y w h'")
        try:
            idx = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric field") from None
        if idx != len(seen):
            raise DatasetError(f"{path}:{lineno}: missing frame index {len(seen)} (found {idx})")
        if idx >= length:
            raise DatasetError(f"{path}:{lineno}: frame index {idx} beyond clip length {length}")
        boxes[idx] = vals
        seen.append(idx)
    if len(seen) != length:
        raise DatasetError(f"{path}: {len(seen)} box lines for a clip of length {length}")
    return boxes


def load_clip(path: str | Path, task: str | None = None) -> Clip:
    """Read a clip directory; ``task='rgb_n'`` additionally requires a non-empty sentence."""
    root = Path(path)
    meta = _read_meta(root / "meta.txt")
    length, size = int(meta["length"]), int(meta["size"])

    def stack(sub: str, ext: str) -> np.ndarray:
        out = []
        for t in range(length):
            f = root / sub / f"{t:04d}.{ext}"
            if not f.exists():
                raise DatasetError(f"{f}: missing frame index {t}")
            arr = _read_pnm(f)
            if arr.shape[-1] != size or arr.shape[-2] != size:
                raise DatasetError(f"{f}: size {arr.shape[-2:]} != meta size {size}")
            out.append(arr)
        return np.stack(out)

    frames = stack("frames", "ppm").astype(np.float64) / 255.0
    maps = {sub: stack(sub, "pgm").astype(np.float64)[:, None] / 255.0 for sub in ("depth", "thermal", "event")}
    masks = stack("masks", "pgm")
    boxes = _read_boxes(root / "boxes.txt", length)
    lang_path = root / "lang.txt"
    text = lang_path.read_text(encoding="utf-8").strip() if lang_path.exists() else ""
    if task == "rgb_n" and not text:
        raise DatasetError(f"{lang_path}: empty language description for task rgb_n")
    extra = {k: v for k, v in meta.items() if k not in ("size", "length", "seed", "clip_id")}
    return Clip(frames=frames, boxes=boxes, masks=masks, depth=maps["depth"], thermal=maps["thermal"],
                event=maps["event"], text=text, clip_id=meta.get("clip_id", root.name),
                seed=int(meta["seed"]), meta=extra)


def gen_config_from(cfg) -> GenConfig:
    """GenConfig from the synthetic-data keys of a TrackerConfig."""
    return GenConfig(frame_size=cfg.frame_size, length=cfg.clip_length, num_objects=cfg.num_objects,
                     num_distractors=cfg.num_distractors, max_speed=cfg.max_speed,
                     rgb_corruption=cfg.rgb_corruption)


def generate_dataset(seed: int, n_clips: int, cfg: GenConfig | None = None) -> list[Clip]:
    seeds = np.random.SeedSequence(seed).generate_state(n_clips)
    return [generate_clip(int(s), cfg, clip_id=f"clip_{i:04d}") for i, s in enumerate(seeds)]


def save_dataset(clips: list[Clip], path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        save_clip(clip, root / clip.clip_id)
    return root


def load_dataset(path: str | Path, task: str | None = None) -> list[Clip]:
    root = Path(path)
    if (root / "meta.txt").exists():
        return [load_clip(root, task)]
    dirs = sorted(p for p in root.iterdir() if (p / "meta.txt").exists()) if root.is_dir() else []
    if not dirs:
        raise DatasetError(f"{root}: no clip directories found")
    return [load_clip(d, task) for d in dirs]
