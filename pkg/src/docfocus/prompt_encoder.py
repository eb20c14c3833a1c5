"""Frozen context-aware prompt encoder.

A single bidirectional self-attention layer over learned token embeddings,
randomly initialized from a fixed seed and never trained. It provides the
stable prompt representation consumed by the prompt-conditioned merge layers.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import FeedForward, MultiHeadAttention


class PromptEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 32, heads: int = 2, max_len: int = 128):
        super().__init__()
        self.max_len = max_len
        self.tok_emb = nn.Embedding(vocab_size, dim)
        self.pos_emb = nn.Parameter(torch.zeros(max_len, dim))
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim)
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ids, mask: (B, T) -> embeddings (B, T, dim)."""
        t = ids.shape[1]
        if t > self.max_len:
            raise ValueError(f"prompt length {t} exceeds max {self.max_len}")
        x = self.tok_emb(ids) + self.pos_emb[:t]
        h = self.norm1(x)
        x = x + self.attn(h, h, key_mask=mask)
        x = x + self.mlp(self.norm2(x))
        return self.out_norm(x)

    def checksum(self) -> float:
        """Order-independent parameter fingerprint for the frozen contract."""
        return float(sum(p.double().abs().sum().item() for p in self.parameters()))
