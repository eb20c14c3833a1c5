"""Visual projector and the small encoder-decoder language model.

The LM encoder reads a mixed sequence of (optional) prompt token embeddings
followed by projected visual tokens; the decoder is teacher-forced with a
PAD start token and trained with cross-entropy over non-PAD positions.
Prompt inclusion during pre-training is stochastic per sample.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyTarget
from .layers import FeedForward, MultiHeadAttention


class Projector(nn.Module):
    """Two-layer MLP aligning visual tokens with the LM embedding space."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


@dataclass
class DropoutPolicy:
    """Per-sample prompt concatenation with probability rho during training."""

    rho: float
    rng: random.Random

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    def draw_include(self) -> bool:
        return self.rng.random() < self.rho


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, key_mask=mask)
        return x + self.mlp(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, mlp_ratio)

    def forward(self, x, memory, memory_mask):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal=True)
        x = x + self.cross_attn(self.norm2(x), memory, key_mask=memory_mask)
        return x + self.mlp(self.norm3(x))


class Seq2SeqLM(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        dim: int = 64,
        heads: int = 4,
        enc_layers: int = 2,
        dec_layers: int = 2,
        mlp_ratio: float = 2.0,
        max_prompt_len: int = 96,
        max_visual_len: int = 64,
        max_target_len: int = 512,
        pad_id: int = 0,
        eos_id: int = 1,
    ):
        super().__init__()
        self.pad_id = pad_id
        self.eos_id = eos_id
        self.dim = dim
        self.max_prompt_len = max_prompt_len
        self.max_target_len = max_target_len
        self.tok_emb = nn.Embedding(vocab_size, dim)
        self.prompt_pos = nn.Parameter(torch.zeros(max_prompt_len, dim))
        self.visual_pos = nn.Parameter(torch.zeros(max_visual_len, dim))
        self.target_pos = nn.Parameter(torch.zeros(max_target_len, dim))
        self.enc_layers = nn.ModuleList(
            [EncoderLayer(dim, heads, mlp_ratio) for _ in range(enc_layers)]
        )
        self.enc_norm = nn.LayerNorm(dim)
        self.dec_layers = nn.ModuleList(
            [DecoderLayer(dim, heads, mlp_ratio) for _ in range(dec_layers)]
        )
        self.dec_norm = nn.LayerNorm(dim)
        self.lm_head = nn.Linear(dim, vocab_size)

    # --- input assembly -------------------------------------------------

    def assemble_input(
        self,
        prompts: list[list[int]] | None,
        visual: torch.Tensor,                  # (B, L, dim)
        policy: DropoutPolicy | None = None,
        training: bool = False,
    ):
        """Build the mixed [prompt | visual] LM input.

        Prompt slots of samples whose draw excluded the prompt (training only)
        are masked out entirely; outside training the prompt is always kept.
        Returns (embeddings (B, S, dim), mask (B, S) bool, included flags).
        """
        bsz, n_visual = visual.shape[0], visual.shape[1]
        device = visual.device
        if prompts is None:
            src = visual + self.visual_pos[:n_visual].to(visual.dtype)
            mask = torch.ones(bsz, n_visual, dtype=torch.bool, device=device)
            return src, mask, [False] * bsz

        if training and policy is not None:
            included = [policy.draw_include() for _ in range(bsz)]
        else:
            included = [True] * bsz
        t_max = max(1, max(len(p) for p in prompts))
        if t_max > self.max_prompt_len:
            raise ValueError(f"prompt length {t_max} exceeds {self.max_prompt_len}")
        ids = torch.full((bsz, t_max), self.pad_id, dtype=torch.long, device=device)
        mask = torch.zeros(bsz, t_max + n_visual, dtype=torch.bool, device=device)
        for i, p in enumerate(prompts):
            if included[i] and p:
                ids[i, : len(p)] = torch.tensor(p, dtype=torch.long, device=device)
                mask[i, : len(p)] = True
        mask[:, t_max:] = True
        prompt_emb = self.tok_emb(ids) + self.prompt_pos[:t_max].to(visual.dtype)
        src = torch.cat([prompt_emb, visual + self.visual_pos[:n_visual].to(visual.dtype)], dim=1)
        return src, mask, included

    # --- forward paths ---------------------------------------------------

    def encode(self, src: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = src
        for layer in self.enc_layers:
            x = layer(x, mask)
        return self.enc_norm(x)

    def decode(self, memory: torch.Tensor, memory_mask: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        t = tgt_in.shape[1]
        if t > self.max_target_len:
            raise ValueError(f"target length {t} exceeds {self.max_target_len}")
        x = self.tok_emb(tgt_in) + self.target_pos[:t].to(memory.dtype)
        for layer in self.dec_layers:
            x = layer(x, memory, memory_mask)
        return self.lm_head(self.dec_norm(x))

    def forward_logits(self, src, mask, targets: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits; decoder input is the PAD-shifted target."""
        memory = self.encode(src, mask)
        tgt_in = torch.full_like(targets, self.pad_id)
        tgt_in[:, 1:] = targets[:, :-1]
        return self.decode(memory, mask, tgt_in)

    @torch.no_grad()
    def greedy_decode(self, src, mask, max_len: int) -> list[list[int]]:
        """Deterministic greedy generation until EOS or max_len, per sample."""
        bsz = src.shape[0]
        memory = self.encode(src, mask)
        out = torch.full((bsz, 1), self.pad_id, dtype=torch.long, device=src.device)
        finished = [False] * bsz
        results: list[list[int]] = [[] for _ in range(bsz)]
        for _ in range(max_len):
            logits = self.decode(memory, mask, out)
            nxt = logits[:, -1].argmax(dim=-1)
            for i in range(bsz):
                if not finished[i]:
                    tok = int(nxt[i])
                    if tok == self.eos_id:
                        finished[i] = True
                    else:
                        results[i].append(tok)
            if all(finished):
                break
            out = torch.cat([out, nxt[:, None]], dim=1)
        return results


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Cross-entropy averaged over non-PAD target positions."""
    if targets.numel() == 0 or bool((targets != pad_id).sum() == 0):
        raise EmptyTarget("no supervised target positions")
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        ignore_index=pad_id,
        reduction="mean",
    )


def pad_batch(seqs: list[list[int]], pad_id: int = 0, max_len: int | None = None) -> torch.Tensor:
    """Right-pad integer sequences into a (B, T) long tensor."""
    if max_len is not None:
        seqs = [s[:max_len] for s in seqs]
    t = max(1, max(len(s) for s in seqs))
    out = torch.full((len(seqs), t), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out
