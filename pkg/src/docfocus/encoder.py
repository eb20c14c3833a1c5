"""Hierarchical windowed-attention vision encoder with a patch merge at the
end of every stage. In "vilma" mode the merges of the configured stages are
prompt-conditioned; in "plain" mode the output is prompt-independent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .layers import PatchMerge, PromptedMerge, WindowBlock


@dataclass(frozen=True)
class EncoderConfig:
    page_height: int = 256
    page_width: int = 128
    patch_size: int = 4
    depths: tuple[int, ...] = (1, 1, 2, 1)
    base_channels: int = 16
    window: int = 4
    heads: int = 2
    mlp_ratio: float = 2.0
    mode: str = "plain"                      # "plain" | "vilma"
    vilma_stages: tuple[int, ...] = ()       # 1-based stage indices
    prompt_dim: int = 32

    def __post_init__(self):
        if self.mode not in ("plain", "vilma"):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if (self.mode == "vilma") != bool(self.vilma_stages):
            raise ConfigError("vilma_stages must be non-empty exactly in vilma mode")
        bad = [s for s in self.vilma_stages if not 1 <= s <= self.num_stages]
        if bad:
            raise ConfigError(f"vilma stages out of range: {bad}")
        if len(set(self.vilma_stages)) != len(self.vilma_stages):
            raise ConfigError("duplicate vilma stages")
        factor = self.patch_size * 2**self.num_stages
        if self.page_height % factor or self.page_width % factor:
            raise ConfigError(
                f"page {self.page_height}x{self.page_width} must be divisible "
                f"by patch_size * 2^stages = {factor}"
            )
        for k in range(1, self.num_stages + 1):
            h, w = self.stage_grid(k)
            if h % self.window or w % self.window:
                raise ConfigError(
                    f"stage {k} grid {h}x{w} not divisible by window {self.window}"
                )

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_channels(self, stage: int) -> int:
        """Channel width of the feature map entering stage `stage` (1-based)."""
        return self.base_channels * 2 ** (stage - 1)

    def stage_grid(self, stage: int) -> tuple[int, int]:
        return (
            self.page_height // self.patch_size // 2 ** (stage - 1),
            self.page_width // self.patch_size // 2 ** (stage - 1),
        )

    @property
    def out_channels(self) -> int:
        return self.base_channels * 2**self.num_stages

    @property
    def out_tokens(self) -> int:
        h, w = self.stage_grid(self.num_stages)
        return (h // 2) * (w // 2)


@dataclass
class AttentionRecord:
    """Cross-attention map of one prompt-conditioned merge layer.

    weights[h, i, j, t] is the softmax weight with which visual position
    (i, j) at this stage's resolution attends to prompt token t under head h.
    """

    stage: int
    weights: np.ndarray  # (heads, h, w, T_p)

    @property
    def grid(self) -> tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[2]


class VisionEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        gh = cfg.page_height // cfg.patch_size
        gw = cfg.page_width // cfg.patch_size
        self.patch_proj = nn.Linear(cfg.patch_size * cfg.patch_size, cfg.base_channels)
        self.pos_embed = nn.Parameter(torch.zeros(gh, gw, cfg.base_channels))
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for k in range(1, cfg.num_stages + 1):
            dim = cfg.stage_channels(k)
            self.stages.append(
                nn.ModuleList(
                    [
                        WindowBlock(dim, cfg.window, cfg.heads, cfg.mlp_ratio)
                        for _ in range(cfg.depths[k - 1])
                    ]
                )
            )
            if cfg.mode == "vilma" and k in cfg.vilma_stages:
                self.merges.append(PromptedMerge(dim, cfg.prompt_dim, cfg.heads))
            else:
                self.merges.append(PatchMerge(dim))
        self.out_norm = nn.LayerNorm(cfg.out_channels)

    def patch_embed(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W) pixels -> (B, H/p, W/p, c0) via linear patchification."""
        p = self.cfg.patch_size
        b, h, w = images.shape
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        x = images.view(b, h // p, p, w // p, p)
        x = x.permute(0, 1, 3, 2, 4).reshape(b, h // p, w // p, p * p)
        return self.patch_proj(x)

    def forward(
        self,
        images: torch.Tensor,                      # (B, H, W)
        prompt: torch.Tensor | None = None,        # (B, T, prompt_dim)
        prompt_mask: torch.Tensor | None = None,   # (B, T) bool
        capture: bool = False,
    ):
        """Returns visual tokens (B, L_out, c_out); with capture=True also a
        list of per-merge attention weight tensors (stage, (B,H,h,w,T))."""
        if self.cfg.mode == "vilma" and prompt is None:
            raise ConfigError("vilma mode requires a prompt encoding")
        x = self.patch_embed(images) + self.pos_embed
        records = []
        for k, (blocks, merge) in enumerate(zip(self.stages, self.merges), start=1):
            for block in blocks:
                x = block(x)
            if isinstance(merge, PromptedMerge):
                if capture:
                    x, weights = merge(x, prompt, prompt_mask, need_weights=True)
                    records.append((k, weights))
                else:
                    x = merge(x, prompt, prompt_mask)
            else:
                x = merge(x)
        b = x.shape[0]
        tokens = self.out_norm(x.reshape(b, -1, self.cfg.out_channels))
        if capture:
            return tokens, records
        return tokens
