"""Attention building blocks: windowed self-attention stage blocks and the
two patch-merging variants (plain, and prompt-conditioned via multi-head
cross-attention)."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import MaskError, ShapeError


class MultiHeadAttention(nn.Module):
    """Standard scaled dot-product attention with optional key masking.

    Queries come from `dim`-wide inputs; keys/values may live in a different
    `kv_dim` space (used for cross-attention onto prompt embeddings).
    """

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,          # (B, Lq, dim)
        kv: torch.Tensor,             # (B, Lk, kv_dim)
        key_mask: torch.Tensor | None = None,   # (B, Lk) bool, True = attend
        causal: bool = False,
        need_weights: bool = False,
    ):
        bsz, lq, _ = query.shape
        lk = kv.shape[1]
        if key_mask is not None and bool((key_mask.sum(dim=-1) == 0).any()):
            raise MaskError("a sample has no attendable key positions")

        q = self.q_proj(query).view(bsz, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(kv).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(kv).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)

        logits = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5  # (B, H, Lq, Lk)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        if causal:
            future = torch.triu(
                torch.ones(lq, lk, dtype=torch.bool, device=query.device), diagonal=1
            )
            logits = logits.masked_fill(future, float("-inf"))
        weights = logits.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(bsz, lq, self.dim)
        out = self.out_proj(out)
        if need_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, ratio: float = 2.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, h, w, c) -> (B * nw, window*window, c)."""
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"grid {h}x{w} not divisible by window {window}")
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(x: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    b = x.shape[0] // ((h // window) * (w // window))
    x = x.view(b, h // window, w // window, window, window, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class WindowBlock(nn.Module):
    """Pre-norm transformer block with non-shifted window self-attention."""

    def __init__(self, dim: int, window: int, heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.window = window
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, h, w, c)
        b, h, w, c = x.shape
        windows = window_partition(self.norm1(x), self.window)
        attended = self.attn(windows, windows)
        x = x + window_reverse(attended, self.window, h, w)
        return x + self.mlp(self.norm2(x))


def concat_2x2(x: torch.Tensor) -> torch.Tensor:
    """Group 2x2 neighbours: (B, h, w, c) -> (B, h/2, w/2, 4c)."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"grid {h}x{w} has an odd side, cannot merge 2x2")
    return torch.cat(
        [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]],
        dim=-1,
    )


class PatchMerge(nn.Module):
    """Down-sampling by 2x2 concatenation plus a linear reduction to 2c."""

    def __init__(self, dim: int):
        super().__init__()
        self.reduction = nn.Linear(4 * dim, 2 * dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.reduction(concat_2x2(x))


class PromptedMerge(nn.Module):
    """Patch merging preceded by cross-attention onto the prompt encoding.

    Each visual position queries the prompt embeddings (keys and values);
    the normalized attention output is added back to the feature map before
    the usual 2x2 concatenation and linear reduction. The `reduction` weight
    plays exactly the same role (and has the same shape) as in PatchMerge.
    """

    def __init__(self, dim: int, prompt_dim: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, kv_dim=prompt_dim)
        self.norm = nn.LayerNorm(dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim)

    def forward(
        self,
        x: torch.Tensor,                 # (B, h, w, c)
        prompt: torch.Tensor,            # (B, T, prompt_dim)
        prompt_mask: torch.Tensor | None = None,
        need_weights: bool = False,
    ):
        b, h, w, c = x.shape
        flat = x.reshape(b, h * w, c)
        attended, weights = self.attn(
            flat, prompt, key_mask=prompt_mask, need_weights=True
        )
        mixed = (flat + self.norm(attended)).view(b, h, w, c)
        out = self.reduction(concat_2x2(mixed))
        if need_weights:
            return out, weights.view(b, self.attn.heads, h, w, -1)
        return out
