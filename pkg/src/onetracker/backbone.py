"""Patch embedding and the joint template/search transformer encoder.

Token tensors are ``(N, D)`` or batched ``(B, N, D)``; every op works on
the last two axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autograd import LayerNorm, Linear, Module, Parameter, ShapeError, Tensor, ops
from .config import BackboneConfig

PromptHook = Callable[[Tensor, int], Tensor]


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(..., C, S, S) -> (..., N, C*patch*patch), patches in row-major grid order."""
    *lead, c, h, w = images.shape
    if h % patch or w % patch:
        raise ShapeError(f"patchify: image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, c, gh, patch, gw, patch)
    nl = len(lead)
    perm = list(range(nl)) + [nl + 1, nl + 3, nl, nl + 2, nl + 4]
    return x.transpose(perm).reshape(*lead, gh * gw, c * patch * patch)


class PatchEmbed(Module):
    """Linear projection of non-overlapping patches (no positional term)."""

    def __init__(self, in_ch: int, dim: int, patch: int, rng: np.random.Generator, dtype=np.float64):
        self.in_ch = in_ch
        self.patch = patch
        self.proj = Linear(in_ch * patch * patch, dim, rng, dtype=dtype)

    def forward(self, images) -> Tensor:
        images = images.data if isinstance(images, Tensor) else np.asarray(images)
        if images.shape[-3] != self.in_ch:
            raise ShapeError(f"patch_embed: expected {self.in_ch} channels, got {images.shape[-3]}")
        return self.proj(Tensor(patchify(images, self.patch)))


class Attention(Module):
    """Multi-head self-attention with separate Q, K, V projections."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        h, dh = self.heads, d // self.heads

        def split(t):
            return t.reshape(*lead, n, h, dh).permute(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = ops.matmul(q, ops.transpose_last2(k)) * (1.0 / np.sqrt(dh))
        ctx = ops.matmul(ops.softmax(scores, axis=-1), v)
        nl = len(lead)
        ctx = ctx.permute(*range(nl), nl + 1, nl, nl + 2).reshape(*lead, n, d)
        return self.proj(ctx)


class EncoderLayer(Module):
    """Pre-norm block: H += Attn(LN(H)); H += FFN(LN(H))."""

    def __init__(self, dim: int, heads: int, mlp_hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.dim = dim
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.fc1 = Linear(dim, mlp_hidden, rng, dtype=dtype)
        self.fc2 = Linear(mlp_hidden, dim, rng, dtype=dtype)

    def forward(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.dim:
            raise ShapeError(f"encoder_layer: token dim {h.shape[-1]} != model dim {self.dim}")
        h = h + self.attn(self.norm1(h))
        return h + self.fc2(ops.gelu(self.fc1(self.norm2(h))))


@dataclass
class TokenState:
    H: Tensor
    n_z: int
    n_s: int
    layer_index: int

    @property
    def template(self) -> Tensor:
        return self.H[..., : self.n_z, :]

    @property
    def search(self) -> Tensor:
        return self.H[..., self.n_z:, :]


class ViTBackbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, in_ch: int = 3, dtype=np.float64):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(in_ch, cfg.dim, cfg.patch_size, rng, dtype=dtype)
        self.pos_template = Parameter(0.02 * rng.standard_normal((cfg.n_template, cfg.dim)), dtype=dtype)
        self.pos_search = Parameter(0.02 * rng.standard_normal((cfg.n_search, cfg.dim)), dtype=dtype)
        self.blocks = [EncoderLayer(cfg.dim, cfg.heads, cfg.mlp_hidden, rng, dtype=dtype)
                       for _ in range(cfg.depth)]

    def _embed(self, image, size: int, pos: Parameter, what: str) -> Tensor:
        arr = image.data if isinstance(image, Tensor) else np.asarray(image)
        if arr.shape[-1] != size or arr.shape[-2] != size:
            raise ShapeError(f"{what}: expected {size}x{size} input, got {arr.shape[-2]}x{arr.shape[-1]}")
        return self.patch_embed(arr) + pos

    def embed_template(self, image) -> Tensor:
        return self._embed(image, self.cfg.template_size, self.pos_template, "template")

    def embed_search(self, image) -> Tensor:
        """Search-resolution images (also used for full-frame templates)."""
        return self._embed(image, self.cfg.search_size, self.pos_search, "search")

    def encode(self, template_tokens: Tensor, search_tokens: Tensor,
               prompt_hook: Optional[PromptHook] = None) -> TokenState:
        """Run all layers on ``[template, search]``; ``prompt_hook(H, l)`` may rewrite H before layer l."""
        d = self.cfg.dim
        for name, t in (("template", template_tokens), ("search", search_tokens)):
            if t.shape[-1] != d:
                raise ShapeError(f"encode: {name} token dim {t.shape[-1]} != {d}")
        n_z, n_s = template_tokens.shape[-2], search_tokens.shape[-2]
        h = ops.concat([template_tokens, search_tokens], axis=-2)
        for l, block in enumerate(self.blocks):
            if prompt_hook is not None:
                new_h = prompt_hook(h, l)
                if new_h.shape != h.shape:
                    raise ShapeError(f"encode: prompt hook at layer {l} returned {new_h.shape}, expected {h.shape}")
                h = new_h
            h = block(h)
            if h.shape[-2:] != (n_z + n_s, d):
                raise ShapeError(f"encode: layer {l} produced {h.shape}")
        return TokenState(h, n_z, n_s, len(self.blocks))
