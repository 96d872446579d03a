"""Prompt Tracker: prompt embedding, CMT prompters, TTP adapters and the parameter census.

Linear maps act on row tokens (``x @ W``), so a frozen layer with
``W: (k, d)`` gets an adapter ``x -> s * ReLU(x @ W_down) @ W_up`` with
``W_down: (k, r)`` and ``W_up: (r, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Linear, Module, Parameter, ShapeError, Tensor, ops
from .backbone import EncoderLayer, PatchEmbed, TokenState
from .config import TrackerConfig
from .model import FoundationTracker
from .heads import upsample_factors

MODALITIES = ("N", "M", "D", "T", "E")
MAP_MODALITIES = ("D", "T", "E")


# -- TTP adapters --------------------------------------------------------------

class Adapter(Module):
    """Low-rank bottleneck ``s * ReLU(x @ down) @ up`` with ``up`` zero-initialised."""

    def __init__(self, k: int, d: int, r: int, s: float, rng: np.random.Generator, dtype=np.float64):
        if r > min(d, k):
            raise ValueError(f"adapter rank {r} exceeds min(d, k) = {min(d, k)}")
        bound = 1.0 / np.sqrt(k)
        self.down = Parameter(rng.uniform(-bound, bound, size=(k, r)), dtype=dtype)
        self.up = Parameter(np.zeros((r, d)), dtype=dtype)
        self.s = float(s)
        self.r = r

    def forward(self, x: Tensor) -> Tensor:
        return ops.matmul(ops.relu(ops.matmul(x, self.down)), self.up) * self.s


def adapter_forward(x, weight, adapter: Adapter, bias=None) -> Tensor:
    """``h = x W (+ b) + s * ReLU(x W_down) W_up`` for row tokens ``x: (t, k)``, ``W: (k, d)``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    weight = weight if isinstance(weight, Tensor) else Tensor(weight)
    k, d = weight.shape
    if adapter.down.shape[0] != k or adapter.up.shape[1] != d:
        raise ShapeError(f"adapter ({adapter.down.shape}, {adapter.up.shape}) does not fit weight {weight.shape}")
    h = ops.matmul(x, weight)
    if bias is not None:
        h = h + bias
    return h + adapter(x)


class AdaptedLinear(Module):
    """A frozen :class:`Linear` with a parallel trainable adapter."""

    def __init__(self, base: Linear, r: int, s: float, rng: np.random.Generator):
        self.base = base
        self.adapter = Adapter(base.in_features, base.out_features, r, s, rng, dtype=base.weight.dtype)

    def forward(self, x: Tensor) -> Tensor:
        return adapter_forward(x, self.base.weight, self.adapter, self.base.bias)


def inject_ttp(backbone, r: int, s: float, rng: np.random.Generator) -> int:
    """Freeze the backbone, then wrap Q, K, V and the FFN output linear of every layer.

    Returns the number of adapters created.
    """
    if any(isinstance(getattr(blk, "fc2", None), AdaptedLinear) for blk in backbone.blocks):
        raise RuntimeError("TTP adapters already injected")
    backbone.freeze()
    count = 0
    for block in backbone.blocks:
        targets = [(block.attn, "q"), (block.attn, "k"), (block.attn, "v"), (block, "fc2")]
        for owner, attr in targets:
            layer = getattr(owner, attr)
            setattr(owner, attr, AdaptedLinear(layer, r, s, rng))
            count += 1
    return count


# -- prompt embedding ----------------------------------------------------------

@dataclass
class PromptTokens:
    P: Tensor
    modality: str
    aligned: bool  # token-aligned with the matching tokens (or their template part)


class TextEncoder(Module):
    """Token table + learned positions + one encoder layer; stands in for a pretrained language model."""

    def __init__(self, vocab_size: int, dim: int, max_len: int, heads: int, mlp_hidden: int,
                 rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.table = Parameter(0.02 * rng.standard_normal((vocab_size, dim)))
        self.pos = Parameter(0.02 * rng.standard_normal((max_len, dim)))
        self.layer = EncoderLayer(dim, heads, mlp_hidden, rng)

    def forward(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        n = ids.shape[-1]
        if n > self.pos.shape[0]:
            raise ShapeError(f"text length {n} exceeds maximum {self.pos.shape[0]}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ValueError("token id outside vocabulary")
        onehot = np.zeros(ids.shape + (self.vocab_size,))
        np.put_along_axis(onehot, ids[..., None], 1.0, axis=-1)
        x = ops.matmul(Tensor(onehot), self.table) + self.pos[:n]
        return self.layer(x)


class PromptEmbedding(Module):
    """Maps one modality's raw payload to prompt tokens."""

    def __init__(self, modality: str, cfg: TrackerConfig, rng: np.random.Generator):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        self.modality = modality
        bb = cfg.backbone
        self.patch = bb.patch_size
        if modality == "N":
            self.text = TextEncoder(cfg.vocab_size, bb.dim, cfg.text_len, bb.heads, bb.mlp_hidden, rng)
        else:
            self.patch_embed = PatchEmbed(1, bb.dim, bb.patch_size, rng)

    def forward(self, payload: dict) -> PromptTokens:
        if self.modality == "N":
            if "text" not in payload:
                raise KeyError("RGB+N prompt needs 'text' token ids")
            return PromptTokens(self.text(payload["text"]), "N", aligned=False)
        if self.modality == "M":
            masks = payload.get("masks")
            if masks is None:
                raise KeyError("RGB+M prompt needs 'masks'")
            masks = masks if isinstance(masks, (list, tuple)) else [masks]
            toks = [self.patch_embed(np.asarray(mk, dtype=np.float64)) for mk in masks]
            P = toks[0] if len(toks) == 1 else ops.concat(toks, axis=-2)
            return PromptTokens(P, "M", aligned=True)
        if "template_map" not in payload or "search_map" not in payload:
            raise KeyError(f"RGB+{self.modality} prompt needs 'template_map' and 'search_map'")
        z = self.patch_embed(np.asarray(payload["template_map"], dtype=np.float64))
        s = self.patch_embed(np.asarray(payload["search_map"], dtype=np.float64))
        return PromptTokens(ops.concat([z, s], axis=-2), self.modality, aligned=True)


# -- CMT prompters ------------------------------------------------------------

def _pad_rows(x: Tensor, n_total: int) -> Tensor:
    """Append zero rows so a template-aligned tensor covers all matching tokens."""
    n = x.shape[-2]
    if n == n_total:
        return x
    if n > n_total:
        raise ShapeError(f"prompt has {n} tokens but only {n_total} matching tokens exist")
    zeros = Tensor(np.zeros(x.shape[:-2] + (n_total - n, x.shape[-1])))
    return ops.concat([x, zeros], axis=-2)


class CMTPrompter(Module):
    """Down-project H and P, fuse (linear add or text cross-attention), up-project to D."""

    def __init__(self, dim: int, m: int, modality: str, rng: np.random.Generator):
        self.modality = modality
        self.m = m
        self.down_h = Linear(dim, m, rng)
        self.down_p = Linear(dim, m, rng)
        if modality == "N":
            self.attn_q = Linear(m, m, rng)
            self.attn_k = Linear(m, m, rng)
            self.attn_v = Linear(m, m, rng)
        else:
            self.fusion = Linear(m, m, rng)
        self.up = Linear(m, dim, rng, zero_init=True)

    def forward(self, H: Tensor, P: Tensor, n_template: int) -> Tensor:
        n_total = H.shape[-2]
        lh = self.down_h(H)
        lp = self.down_p(P)
        if self.modality == "N":
            q, k, v = self.attn_q(lh), self.attn_k(lp), self.attn_v(lp)
            scores = ops.matmul(q, ops.transpose_last2(k)) * (1.0 / np.sqrt(self.m))
            fused = ops.matmul(ops.softmax(scores, axis=-1), v)
        else:
            n_p = P.shape[-2]
            if n_p not in (n_total, n_template):
                raise ShapeError(f"CMT prompter: prompt with {n_p} tokens is not aligned "
                                 f"to {n_template} template or {n_total} matching tokens")
            fused = self.fusion(lh + _pad_rows(lp, n_total))
        return self.up(fused)


def prompter_positions(depth: int, every_k: int | None = None, positions=None) -> tuple[int, ...]:
    if positions is not None:
        pos = tuple(sorted(set(int(p) for p in positions)))
        if any(p < 0 or p >= depth for p in pos):
            raise ValueError(f"prompter positions {pos} outside 0..{depth - 1}")
        return pos
    if every_k is None or every_k == 0:
        return ()
    if every_k < 0 or every_k > depth:
        raise ValueError(f"every_k={every_k} outside 1..{depth}")
    return tuple(range(0, depth, every_k))


# -- the Prompt Tracker -------------------------------------------------------

class PromptTracker(Module):
    """Frozen Foundation Tracker with TTP adapters, a prompt embedding and CMT prompters."""

    def __init__(self, foundation: FoundationTracker, modality: str, cfg: TrackerConfig | None = None,
                 positions=None, rng: np.random.Generator | None = None,
                 train_seg_head: bool | None = None):
        cfg = cfg or foundation.cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        self.cfg = cfg
        self.modality = modality
        self.foundation = foundation
        foundation.freeze()
        self.n_adapters = inject_ttp(foundation.backbone, cfg.r, cfg.s, rng)
        if train_seg_head is None:
            train_seg_head = cfg.train_seg_head_in_m
        if modality == "M" and train_seg_head:
            for p in foundation.seg_head.parameters():
                p.frozen = False
        self.prompt_embed = PromptEmbedding(modality, cfg, rng)
        self.positions = prompter_positions(cfg.depth, cfg.every_k, positions)
        self.prompters = {str(l): CMTPrompter(cfg.dim, cfg.m, modality, rng) for l in self.positions}

    def make_hook(self, prompt: PromptTokens, n_template: int):
        """Per-layer callback applying H <- H + CMT(H, P) and advancing P."""
        state = {"P": prompt.P}

        def hook(H: Tensor, layer: int) -> Tensor:
            if not self.positions:
                if layer != 0:
                    return H
                return H + self._direct_prompt(prompt, H.shape[-2])
            key = str(layer)
            if key not in self.prompters:
                return H
            nxt = self.prompters[key](H, state["P"], n_template)
            state["P"] = nxt
            return H + nxt

        return hook

    def _direct_prompt(self, prompt: PromptTokens, n_total: int) -> Tensor:
        if prompt.aligned:
            return _pad_rows(prompt.P, n_total)
        return ops.mean(prompt.P, axis=-2, keepdims=True)  # free-length text: broadcast its mean

    def encode(self, templates, search, payload: dict, full_frame: bool = False) -> TokenState:
        f = self.foundation
        z = f.embed_templates(templates, full_frame=full_frame)
        s = f.backbone.embed_search(search)
        prompt = self.prompt_embed(payload)
        return f.backbone.encode(z, s, self.make_hook(prompt, z.shape[-2]))

    def forward(self, templates, search, payload: dict, with_mask: bool = True,
                full_frame: bool = False) -> dict[str, Tensor]:
        return self.foundation.heads(self.encode(templates, search, payload, full_frame), with_mask)

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]


# -- census -------------------------------------------------------------------

def param_group(name: str, frozen: bool) -> str:
    if frozen:
        return "frozen"
    if ".adapter." in name:
        return "adapters"
    if name.startswith("prompters."):
        return "prompters"
    if name.startswith("prompt_embed."):
        return "prompt_embed"
    if ".seg_head." in name or name.startswith("seg_head."):
        return "seg_head"
    return "other"


def trainable_param_count(model: Module) -> dict[str, int]:
    """Exact parameter counts per group plus ``trainable`` and ``total``."""
    counts = {"adapters": 0, "prompters": 0, "prompt_embed": 0, "seg_head": 0, "other": 0, "frozen": 0}
    for name, p in model.named_parameters():
        counts[param_group(name, p.frozen)] += p.size
    counts["trainable"] = sum(v for k, v in counts.items() if k != "frozen")
    counts["total"] = counts["trainable"] + counts["frozen"]
    return counts


def adapter_count_formula(cfg: TrackerConfig) -> int:
    """depth * [3 r (D + D) + r (hidden + D)]."""
    d, hdim = cfg.dim, cfg.backbone.mlp_hidden
    return cfg.depth * (3 * cfg.r * (d + d) + cfg.r * (hdim + d))


def prompter_count_formula(cfg: TrackerConfig, modality: str, n_prompters: int | None = None) -> int:
    """Per prompter: two (D m + m) downs, fusion, and (m D + D) up."""
    d, m = cfg.dim, cfg.m
    if n_prompters is None:
        n_prompters = len(cfg.prompter_positions)
    fusion = 3 * (m * m + m) if modality == "N" else (m * m + m)
    return n_prompters * (2 * (d * m + m) + fusion + (m * d + d))


def encoder_layer_count(dim: int, hidden: int) -> int:
    return 4 * (dim * dim + dim) + 4 * dim + (dim * hidden + hidden) + (hidden * dim + dim)


def prompt_embed_count_formula(cfg: TrackerConfig, modality: str) -> int:
    d, p = cfg.dim, cfg.patch_size
    if modality == "N":
        return cfg.vocab_size * d + cfg.text_len * d + encoder_layer_count(d, cfg.backbone.mlp_hidden)
    return p * p * d + d


def seg_head_count_formula(cfg: TrackerConfig) -> int:
    """reduce (D h + h), two kernel==stride upsamplers (a^2 in out + out), 1x1 out (c2 + 1)."""
    h = cfg.head_channels
    c1, c2 = max(h // 2, 1), max(h // 4, 1)
    f1, f2 = upsample_factors(cfg.patch_size)
    return (cfg.dim * h + h) + (f1 * f1 * h * c1 + c1) + (f2 * f2 * c1 * c2 + c2) + (c2 + 1)


def census_formula(cfg: TrackerConfig, modality: str, train_seg_head: bool | None = None) -> dict[str, int]:
    out = {
        "adapters": adapter_count_formula(cfg),
        "prompters": prompter_count_formula(cfg, modality),
        "prompt_embed": prompt_embed_count_formula(cfg, modality),
    }
    if train_seg_head is None:
        train_seg_head = cfg.train_seg_head_in_m
    if modality == "M" and train_seg_head:
        out["seg_head"] = seg_head_count_formula(cfg)
    out["trainable"] = sum(out.values())
    return out


def format_census(counts: dict[str, int]) -> str:
    keys = [k for k in ("adapters", "prompters", "prompt_embed", "seg_head", "other", "trainable", "frozen", "total")
            if k in counts]
    return "\n".join(f"{k:>13s} {counts[k]:>12,d}" for k in keys)
