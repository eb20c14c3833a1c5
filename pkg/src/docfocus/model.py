"""Full document-VQA model: vision encoder + frozen prompt encoder +
projector + seq2seq language model, with seeded deterministic initialization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from .codec import Vocabulary
from .encoder import AttentionRecord, EncoderConfig, VisionEncoder
from .errors import ConfigError
from .lm import DropoutPolicy, Projector, Seq2SeqLM, pad_batch, sequence_loss
from .prompt_encoder import PromptEncoder


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    d_lm: int = 64
    lm_heads: int = 4
    lm_enc_layers: int = 2
    lm_dec_layers: int = 2
    lm_mlp_ratio: float = 2.0
    proj_hidden: int = 128
    max_prompt_len: int = 96
    max_target_len: int = 512
    prompt_heads: int = 2
    prompt_seed: int = 771_177  # frozen prompt encoder is built once from this

    def with_encoder(self, **kwargs) -> "ModelConfig":
        return replace(self, encoder=replace(self.encoder, **kwargs))


class DocModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.vision = VisionEncoder(cfg.encoder)
        self.prompt_encoder = PromptEncoder(
            len(vocab),
            dim=cfg.encoder.prompt_dim,
            heads=cfg.prompt_heads,
            max_len=cfg.max_prompt_len,
        )
        self.projector = Projector(cfg.encoder.out_channels, cfg.proj_hidden, cfg.d_lm)
        self.lm = Seq2SeqLM(
            len(vocab),
            dim=cfg.d_lm,
            heads=cfg.lm_heads,
            enc_layers=cfg.lm_enc_layers,
            dec_layers=cfg.lm_dec_layers,
            mlp_ratio=cfg.lm_mlp_ratio,
            max_prompt_len=cfg.max_prompt_len,
            max_visual_len=cfg.encoder.out_tokens,
            max_target_len=cfg.max_target_len,
            pad_id=vocab.pad_id,
            eos_id=vocab.eos_id,
        )

    # --- small helpers ----------------------------------------------------

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def image_tensor(self, pixels: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(pixels, np.ndarray):
            pixels = torch.from_numpy(pixels)
        return pixels.to(device=self.device, dtype=self.dtype)

    def encode_prompts(self, prompts: list[list[int]]):
        """Frozen context-aware embeddings; empty prompts become one PAD."""
        padded = [p if p else [self.vocab.pad_id] for p in prompts]
        ids = pad_batch(padded, self.vocab.pad_id).to(self.device)
        mask = torch.zeros_like(ids, dtype=torch.bool)
        for i, p in enumerate(padded):
            mask[i, : len(p)] = True
        with torch.no_grad():
            emb = self.prompt_encoder(ids, mask)
        return emb, mask

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # --- forward paths ------------------------------------------------------

    def visual_tokens(
        self,
        images: torch.Tensor,
        encoder_prompts: list[list[int]] | None = None,
        capture: bool = False,
    ):
        if self.cfg.encoder.mode == "vilma":
            if encoder_prompts is None:
                raise ConfigError("vilma mode requires encoder prompts")
            emb, mask = self.encode_prompts(encoder_prompts)
        else:
            emb, mask = None, None
        return self.vision(images, emb, mask, capture=capture)

    def forward_batch(
        self,
        images: torch.Tensor,                       # (B, H, W)
        targets: torch.Tensor,                      # (B, T) long
        encoder_prompts: list[list[int]] | None = None,
        lm_prompts: list[list[int]] | None = None,
        policy: DropoutPolicy | None = None,
        training: bool = False,
    ):
        """Teacher-forced loss over a batch. Returns (loss, logits, included)."""
        visual = self.visual_tokens(images, encoder_prompts)
        projected = self.projector(visual)
        src, mask, included = self.lm.assemble_input(
            lm_prompts, projected, policy, training
        )
        logits = self.lm.forward_logits(src, mask, targets)
        return sequence_loss(logits, targets, self.vocab.pad_id), logits, included

    @torch.no_grad()
    def generate(
        self,
        pixels: np.ndarray | torch.Tensor,
        prompt: str | None = None,
        max_len: int = 32,
    ) -> str:
        """Greedy answer decoding for one page; deterministic given weights."""
        images = self.image_tensor(pixels)[None]
        prompt_ids = self.vocab.tokenize(prompt) if prompt is not None else None
        encoder_prompts = (
            [prompt_ids or [self.vocab.pad_id]]
            if self.cfg.encoder.mode == "vilma"
            else None
        )
        visual = self.visual_tokens(images, encoder_prompts)
        projected = self.projector(visual)
        lm_prompts = [prompt_ids] if prompt_ids is not None else None
        src, mask, _ = self.lm.assemble_input(lm_prompts, projected, training=False)
        ids = self.lm.greedy_decode(src, mask, max_len)[0]
        return self.vocab.detokenize(ids)

    @torch.no_grad()
    def capture_attention(
        self, pixels: np.ndarray | torch.Tensor, prompt: str
    ) -> list[AttentionRecord]:
        """Per prompt-conditioned merge layer, the per-head cross-attention
        weights over prompt tokens at that stage's resolution."""
        if self.cfg.encoder.mode != "vilma":
            raise ConfigError("attention capture requires vilma mode")
        images = self.image_tensor(pixels)[None]
        prompt_ids = self.vocab.tokenize(prompt) or [self.vocab.pad_id]
        _, raw = self.visual_tokens(images, [prompt_ids], capture=True)
        return [
            AttentionRecord(stage=stage, weights=w[0].detach().double().numpy())
            for stage, w in raw
        ]


def init_parameters(module: nn.Module, seed: int, skip_prefix: str | None = None) -> None:
    """Seeded, name-ordered re-initialization of all parameters.

    Layer-norm gains become 1, biases 0; embedding and position tables draw
    from N(0, 0.02); remaining (linear) weights draw uniformly within the
    usual 1/sqrt(fan_in) bound. Deterministic for a fixed architecture.
    """
    gen = torch.Generator().manual_seed(seed)
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        if skip_prefix and name.startswith(skip_prefix):
            continue
        with torch.no_grad():
            if p.ndim == 1:
                if name.endswith("bias"):
                    p.zero_()
                else:
                    p.fill_(1.0)
            elif "emb" in name or "pos" in name:
                p.normal_(0.0, 0.02, generator=gen)
            else:
                bound = 1.0 / (p.shape[-1] ** 0.5)
                p.uniform_(-bound, bound, generator=gen)


def build_model(
    cfg: ModelConfig,
    vocab: Vocabulary,
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> DocModel:
    model = DocModel(cfg, vocab)
    init_parameters(model, seed, skip_prefix="prompt_encoder.")
    init_parameters(model.prompt_encoder, cfg.prompt_seed)
    model.prompt_encoder.requires_grad_(False)
    return model.to(dtype)


def parameter_checksum(module: nn.Module) -> float:
    return float(sum(p.double().abs().sum().item() for p in module.parameters()))


def model_config_to_dict(cfg: ModelConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    enc = dict(d["encoder"])
    enc["depths"] = tuple(enc["depths"])
    enc["vilma_stages"] = tuple(enc["vilma_stages"])
    rest = {k: v for k, v in d.items() if k != "encoder"}
    return ModelConfig(encoder=EncoderConfig(**enc), **rest)
