"""Foundation Tracker: backbone plus box and segmentation heads."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Module, Tensor, ops
from .backbone import PromptHook, TokenState, ViTBackbone
from .config import TrackerConfig
from .heads import BoxHead, SegHead


def _as_list(templates) -> list[np.ndarray]:
    if isinstance(templates, (list, tuple)):
        return [np.asarray(t.data if isinstance(t, Tensor) else t) for t in templates]
    return [np.asarray(templates.data if isinstance(templates, Tensor) else templates)]


class FoundationTracker(Module):
    def __init__(self, cfg: TrackerConfig, rng: np.random.Generator | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        bb = cfg.backbone
        self.backbone = ViTBackbone(bb, rng, dtype=dtype)
        self.box_head = BoxHead(bb.dim, cfg.head_channels, rng)
        self.seg_head = SegHead(bb.dim, cfg.head_channels, bb.patch_size, rng)
        if dtype != np.float64:
            for p in self.box_head.parameters() + self.seg_head.parameters():
                p.data = p.data.astype(dtype)

    def embed_templates(self, templates, full_frame: bool = False) -> Tensor:
        """Template tokens; several templates are concatenated in order."""
        embed = self.backbone.embed_search if full_frame else self.backbone.embed_template
        toks = [embed(t) for t in _as_list(templates)]
        return toks[0] if len(toks) == 1 else ops.concat(toks, axis=-2)

    def encode(self, templates, search, prompt_hook: PromptHook | None = None,
               full_frame: bool = False) -> TokenState:
        z = self.embed_templates(templates, full_frame=full_frame)
        s = self.backbone.embed_search(search)
        return self.backbone.encode(z, s, prompt_hook)

    def heads(self, state: TokenState, with_mask: bool = True) -> dict[str, Tensor]:
        search_tokens = state.search
        out = dict(self.box_head(search_tokens))
        if with_mask:
            out["mask_logits"] = self.seg_head(search_tokens)
        return out

    def forward(self, templates, search, prompt_hook: PromptHook | None = None,
                with_mask: bool = True, full_frame: bool = False) -> dict[str, Tensor]:
        return self.heads(self.encode(templates, search, prompt_hook, full_frame), with_mask)

    def parameter_groups(self) -> dict[str, list]:
        """Stage-1 learning-rate groups: encoder vs heads."""
        return {
            "backbone": self.backbone.parameters(),
            "heads": self.box_head.parameters() + self.seg_head.parameters(),
        }


def stack_batch(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(a, dtype=np.float64) for a in arrays])
