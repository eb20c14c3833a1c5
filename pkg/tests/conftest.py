import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).parent))

from docfocus.codec import default_vocabulary
from docfocus.encoder import EncoderConfig
from docfocus.model import ModelConfig

torch.set_num_threads(2)


def tiny_encoder_config(mode="plain", vilma_stages=()):
    """Smallest grid that exercises two stages and both merge kinds."""
    return EncoderConfig(
        page_height=16,
        page_width=16,
        patch_size=2,
        depths=(1, 1),
        base_channels=4,
        window=2,
        heads=2,
        mode=mode,
        vilma_stages=tuple(vilma_stages),
        prompt_dim=8,
    )


def tiny_model_config(mode="plain", vilma_stages=()):
    return ModelConfig(
        encoder=tiny_encoder_config(mode, vilma_stages),
        d_lm=8,
        lm_heads=2,
        lm_enc_layers=1,
        lm_dec_layers=1,
        proj_hidden=8,
        max_prompt_len=16,
        max_target_len=12,
    )


def small_encoder_config(mode="plain", vilma_stages=()):
    """Smallest geometry that still fits rendered glyph lines (32x64 page)."""
    return EncoderConfig(
        page_height=32,
        page_width=64,
        patch_size=2,
        depths=(1, 1),
        base_channels=4,
        window=2,
        heads=2,
        mode=mode,
        vilma_stages=tuple(vilma_stages),
        prompt_dim=8,
    )


def small_model_config(mode="plain", vilma_stages=()):
    return ModelConfig(
        encoder=small_encoder_config(mode, vilma_stages),
        d_lm=16,
        lm_heads=2,
        lm_enc_layers=1,
        lm_dec_layers=1,
        proj_hidden=16,
        max_prompt_len=32,
        max_target_len=32,
    )


VOCAB = default_vocabulary()
