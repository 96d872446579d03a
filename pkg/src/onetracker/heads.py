"""Box and segmentation heads over the search-token grid, plus box decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Conv2d, Linear, Module, Parameter, ShapeError, Tensor, ops


@dataclass(frozen=True)
class Box:
    """Center/size box; normalized crop coordinates unless stated otherwise."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass
class BoxMaps:
    score: np.ndarray   # (G, G)
    offset: np.ndarray  # (2, G, G), x then y
    size: np.ndarray    # (2, G, G), w then h


def _grid_side(n_tokens: int) -> int:
    g = math.isqrt(n_tokens)
    if g * g != n_tokens:
        raise ShapeError(f"head: {n_tokens} search tokens do not form a square grid")
    return g


def tokens_to_map(tokens: Tensor) -> Tensor:
    """(B, G*G, D) -> (B, D, G, G)."""
    b, n, d = tokens.shape
    g = _grid_side(n)
    return tokens.reshape(b, g, g, d).permute(0, 3, 1, 2)


def _batched(tokens: Tensor) -> tuple[Tensor, bool]:
    if tokens.ndim == 2:
        return tokens.reshape(1, *tokens.shape), True
    return tokens, False


class _ConvStack(Module):
    def __init__(self, dim: int, hidden: int, out: int, rng):
        self.conv1 = Conv2d(dim, hidden, 3, rng, padding=1)
        self.conv2 = Conv2d(hidden, out, 3, rng, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


class BoxHead(Module):
    """Center-score / sub-cell offset / normalized size maps from search tokens."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.score = _ConvStack(dim, hidden, 1, rng)
        self.offset = _ConvStack(dim, hidden, 2, rng)
        self.size = _ConvStack(dim, hidden, 2, rng)

    def forward(self, search_tokens: Tensor) -> dict[str, Tensor]:
        tokens, squeeze = _batched(search_tokens)
        fmap = tokens_to_map(tokens)
        b, _, g, _ = fmap.shape
        out = {
            "score": ops.sigmoid(self.score(fmap)).reshape(b, g, g),
            "offset": ops.sigmoid(self.offset(fmap)),
            "size": ops.sigmoid(self.size(fmap)),
        }
        if squeeze:
            out = {k: v.reshape(*v.shape[1:]) for k, v in out.items()}
        return out


def upsample_factors(patch: int) -> tuple[int, int]:
    """Split the patch stride into two transpose-conv stages."""
    first = 4 if patch % 4 == 0 and patch > 4 else (2 if patch % 2 == 0 and patch > 2 else 1)
    return first, patch // first


class _TransposeConv(Module):
    """Transpose convolution with kernel == stride, on channels-last maps."""

    def __init__(self, in_ch: int, out_ch: int, factor: int, rng):
        self.factor = factor
        self.out_ch = out_ch
        self.proj = Linear(in_ch, factor * factor * out_ch, rng, bias=False)
        self.bias = Parameter(np.zeros(out_ch))

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        a, o = self.factor, self.out_ch
        y = self.proj(x).reshape(b, h, w, a, a, o).permute(0, 1, 3, 2, 4, 5)
        return y.reshape(b, h * a, w * a, o) + self.bias


class SegHead(Module):
    """Pixel logits over the search image: 1x1 reduce, two upsampling stages, 1x1 out."""

    def __init__(self, dim: int, hidden: int, patch: int, rng: np.random.Generator):
        f1, f2 = upsample_factors(patch)
        c1, c2 = max(hidden // 2, 1), max(hidden // 4, 1)
        self.reduce = Linear(dim, hidden, rng)
        self.up1 = _TransposeConv(hidden, c1, f1, rng)
        self.up2 = _TransposeConv(c1, c2, f2, rng)
        self.out = Linear(c2, 1, rng)

    def forward(self, search_tokens: Tensor) -> Tensor:
        tokens, squeeze = _batched(search_tokens)
        b, n, _ = tokens.shape
        g = _grid_side(n)
        x = ops.relu(self.reduce(tokens)).reshape(b, g, g, -1)
        x = ops.relu(self.up1(x))
        x = ops.relu(self.up2(x))
        logits = self.out(x)
        s = logits.shape[1]
        logits = logits.reshape(b, s, s)
        return logits.reshape(s, s) if squeeze else logits


def decode_box(maps: BoxMaps, penalty: np.ndarray | None = None) -> tuple[Box, float]:
    """Peak of score (times penalty) -> box in normalized crop coordinates and its raw score."""
    score = np.asarray(maps.score, dtype=np.float64)
    g = score.shape[0]
    weighted = score if penalty is None else score * penalty
    if penalty is not None and np.any(penalty < 0):
        raise ValueError("decode_box: penalty window must be non-negative")
    flat = int(np.argmax(weighted))  # first maximum in row-major order
    row, col = divmod(flat, g)
    ox = float(np.clip(maps.offset[0, row, col], 0.0, 1.0))
    oy = float(np.clip(maps.offset[1, row, col], 0.0, 1.0))
    w = float(np.clip(maps.size[0, row, col], 1e-6, 1.0))
    h = float(np.clip(maps.size[1, row, col], 1e-6, 1.0))
    cx = min((col + ox) / g, 1.0)
    cy = min((row + oy) / g, 1.0)
    return Box(cx, cy, w, h), float(score[row, col])


def maps_from_outputs(out: dict[str, Tensor], index: int | None = None) -> BoxMaps:
    pick = (lambda a: a) if index is None else (lambda a: a[index])
    return BoxMaps(pick(out["score"].data), pick(out["offset"].data), pick(out["size"].data))
