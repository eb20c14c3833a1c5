import numpy as np
import pytest
import torch

from conftest import VOCAB, tiny_encoder_config, tiny_model_config
from docfocus.encoder import EncoderConfig, VisionEncoder
from docfocus.errors import ConfigError, ShapeError
from docfocus.model import ModelConfig, build_model, parameter_checksum
from docfocus.synth import SynthConfig, generate_page

torch.manual_seed(0)


class TestEncoderConfig:
    def test_default_shapes(self):
        cfg = EncoderConfig()
        assert cfg.stage_grid(1) == (64, 32)
        assert cfg.stage_grid(4) == (8, 4)
        assert cfg.out_channels == 256
        assert cfg.out_tokens == 8

    def test_mode_consistency(self):
        with pytest.raises(ConfigError):
            EncoderConfig(mode="vilma", vilma_stages=())
        with pytest.raises(ConfigError):
            EncoderConfig(mode="plain", vilma_stages=(1,))
        with pytest.raises(ConfigError):
            EncoderConfig(mode="vilma", vilma_stages=(5,))

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            EncoderConfig(page_height=250)


class TestPatchEmbed:
    def test_shape(self):
        enc = VisionEncoder(EncoderConfig())
        out = enc.patch_embed(torch.rand(2, 256, 128))
        assert out.shape == (2, 64, 32, 16)

    def test_non_divisible_rejected(self):
        enc = VisionEncoder(EncoderConfig())
        with pytest.raises(ShapeError):
            enc.patch_embed(torch.rand(1, 250, 128))

    def test_zero_image_gives_bias(self):
        enc = VisionEncoder(tiny_encoder_config()).double()
        out = enc.patch_embed(torch.zeros(1, 16, 16).double())
        expected = enc.patch_proj.bias.detach().expand_as(out)
        assert torch.equal(out, expected)


class TestEncode:
    def test_plain_output_shape_and_merge_law(self):
        cfg = tiny_encoder_config()
        enc = VisionEncoder(cfg)
        tokens = enc(torch.rand(2, 16, 16))
        # 8x8 patches, one merge per stage: 8*8 / 4^2 = 4 tokens, c0 * 2^2
        assert tokens.shape == (2, 4, 16)

    def test_plain_mode_prompt_independent(self):
        model = build_model(tiny_model_config(), VOCAB, seed=1)
        page = torch.rand(1, 16, 16)
        a = model.visual_tokens(page)
        b = model.visual_tokens(page)
        assert torch.equal(a, b)

    def test_vilma_mode_prompt_sensitive(self):
        """Different prompts change the visual tokens for almost every seed."""
        differing = 0
        page = torch.rand(1, 16, 16)
        for seed in range(100):
            model = build_model(
                tiny_model_config("vilma", (1, 2)), VOCAB, seed=seed
            )
            a = model.visual_tokens(page, [VOCAB.tokenize("where is x?")])
            b = model.visual_tokens(page, [VOCAB.tokenize("name the id")])
            if (a - b).abs().max() > 0:
                differing += 1
        assert differing == 100

    def test_vilma_requires_prompt(self):
        enc = VisionEncoder(tiny_encoder_config("vilma", (1,)))
        with pytest.raises(ConfigError):
            enc(torch.rand(1, 16, 16))

    def test_default_geometry_on_real_page(self):
        page = generate_page(SynthConfig(words=12), seed=1)
        model = build_model(ModelConfig(), VOCAB, seed=0)
        tokens = model.visual_tokens(model.image_tensor(page.pixels)[None])
        assert tokens.shape == (1, 8, 256)


class TestCaptureAttention:
    def test_records_per_stage_and_normalization(self):
        model = build_model(tiny_model_config("vilma", (1, 2)), VOCAB, seed=3)
        page = np.random.RandomState(0).rand(16, 16).astype(np.float32)
        records = model.capture_attention(page, "where is x?")
        assert [r.stage for r in records] == [1, 2]
        assert records[0].grid == (8, 8)
        assert records[1].grid == (4, 4)
        for r in records:
            sums = r.weights.sum(axis=-1)
            assert np.allclose(sums, 1.0, atol=1e-5)

    def test_single_token_prompt_all_ones(self):
        model = build_model(tiny_model_config("vilma", (2,)), VOCAB, seed=3)
        page = np.random.RandomState(1).rand(16, 16).astype(np.float32)
        records = model.capture_attention(page, "a")
        assert records[0].weights.shape[-1] == 1
        assert np.all(records[0].weights == 1.0)

    def test_plain_mode_rejected(self):
        model = build_model(tiny_model_config(), VOCAB, seed=3)
        with pytest.raises(ConfigError):
            model.capture_attention(np.zeros((16, 16), dtype=np.float32), "x")


class TestPromptEncoderContract:
    def test_deterministic_and_shapes(self):
        model = build_model(tiny_model_config(), VOCAB, seed=5)
        e1, m1 = model.encode_prompts([VOCAB.tokenize("abc")])
        e2, _ = model.encode_prompts([VOCAB.tokenize("abc")])
        assert torch.equal(e1, e2)
        assert e1.shape == (1, 3, 8)
        e3, _ = model.encode_prompts([VOCAB.tokenize("abcdefg")])
        assert e3.shape == (1, 7, 8)

    def test_empty_prompt_becomes_pad(self):
        model = build_model(tiny_model_config(), VOCAB, seed=5)
        emb, mask = model.encode_prompts([[]])
        assert emb.shape == (1, 1, 8)
        assert mask.tolist() == [[True]]

    def test_frozen_and_identical_across_model_seeds(self):
        a = build_model(tiny_model_config(), VOCAB, seed=1)
        b = build_model(tiny_model_config(), VOCAB, seed=2)
        assert parameter_checksum(a.prompt_encoder) == parameter_checksum(b.prompt_encoder)
        assert all(not p.requires_grad for p in a.prompt_encoder.parameters())
        names = {n for n, p in a.named_parameters() if not p.requires_grad}
        assert all(n.startswith("prompt_encoder.") for n in names)
