import math
import random

import pytest
import torch

from conftest import VOCAB, tiny_model_config
from docfocus.errors import EmptyTarget
from docfocus.lm import DropoutPolicy, Projector, pad_batch, sequence_loss
from docfocus.model import build_model
from gradcheck import check_gradients

torch.manual_seed(0)


class TestProjector:
    def test_shape(self):
        proj = Projector(256, 128, 64)
        assert proj(torch.randn(2, 32, 256)).shape == (2, 32, 64)

    def test_zero_input_bias_path(self):
        proj = Projector(16, 8, 4).double()
        out = proj(torch.zeros(1, 5, 16).double())
        expected = proj.fc2(torch.nn.functional.gelu(proj.fc1(torch.zeros(1, 1, 16).double())))
        assert torch.allclose(out, expected.expand_as(out))

    def test_gradients_match_finite_differences(self):
        proj = Projector(6, 5, 4).double()
        x = torch.randn(1, 3, 6, dtype=torch.double, requires_grad=True)
        probe = torch.randn(1, 3, 4).double()

        def loss_fn():
            return (proj(x) * probe).sum()

        assert check_gradients(loss_fn, [x] + list(proj.parameters())) <= 1e-4


class TestSequenceLoss:
    def test_uniform_logits(self):
        v = len(VOCAB)
        logits = torch.zeros(1, 4, v, dtype=torch.double)
        targets = pad_batch([VOCAB.tokenize("abcd")])
        loss = sequence_loss(logits, targets, VOCAB.pad_id)
        assert abs(loss.item() - math.log(v)) < 1e-6

    def test_saturated_logits(self):
        v = len(VOCAB)
        targets = pad_batch([VOCAB.tokenize("ab")])
        logits = torch.zeros(1, 2, v, dtype=torch.double)
        for t in range(2):
            logits[0, t, targets[0, t]] = 1e6
        assert sequence_loss(logits, targets, VOCAB.pad_id).item() < 1e-3

    def test_pad_positions_contribute_zero(self):
        v = len(VOCAB)
        targets = pad_batch([VOCAB.tokenize("ab"), VOCAB.tokenize("abcdef")])
        logits = torch.randn(2, 6, v, dtype=torch.double)
        base = sequence_loss(logits, targets, VOCAB.pad_id).item()
        toggled = logits.clone()
        toggled[0, 2:] += 1000.0  # only PAD-target positions of sample 0
        assert sequence_loss(toggled, targets, VOCAB.pad_id).item() == pytest.approx(base, abs=1e-12)

    def test_empty_target(self):
        logits = torch.zeros(1, 1, len(VOCAB))
        with pytest.raises(EmptyTarget):
            sequence_loss(logits, torch.zeros(1, 1, dtype=torch.long), VOCAB.pad_id)

    def test_non_negative(self):
        targets = pad_batch([VOCAB.tokenize("abc"), VOCAB.tokenize("xy")])
        logits = torch.randn(2, targets.shape[1], len(VOCAB))
        assert sequence_loss(logits, targets, VOCAB.pad_id).item() >= 0


class TestAssembleInput:
    def test_rho_one_always_includes(self):
        model = build_model(tiny_model_config(), VOCAB, seed=1)
        visual = torch.randn(4, 4, 8)
        policy = DropoutPolicy(rho=1.0, rng=random.Random(0))
        _, _, included = model.lm.assemble_input(
            [VOCAB.tokenize("ab")] * 4, visual, policy, training=True
        )
        assert included == [True] * 4

    def test_rho_zero_never_includes(self):
        model = build_model(tiny_model_config(), VOCAB, seed=1)
        visual = torch.randn(4, 4, 8)
        policy = DropoutPolicy(rho=0.0, rng=random.Random(0))
        src, mask, included = model.lm.assemble_input(
            [VOCAB.tokenize("ab")] * 4, visual, policy, training=True
        )
        assert included == [False] * 4
        assert not mask[:, :2].any()

    def test_half_rho_monte_carlo(self):
        policy = DropoutPolicy(rho=0.5, rng=random.Random(1234))
        n = 10_000
        frac = sum(policy.draw_include() for _ in range(n)) / n
        assert 0.48 <= frac <= 0.52

    def test_eval_mode_ignores_rng_state(self):
        model = build_model(tiny_model_config(), VOCAB, seed=1)
        visual = torch.randn(2, 4, 8)
        prompts = [VOCAB.tokenize("ab"), VOCAB.tokenize("xyz")]
        outs = []
        for rng_seed in (0, 99):
            policy = DropoutPolicy(rho=0.5, rng=random.Random(rng_seed))
            src, mask, included = model.lm.assemble_input(
                prompts, visual, policy, training=False
            )
            outs.append((src, mask, included))
        assert torch.equal(outs[0][0], outs[1][0])
        assert torch.equal(outs[0][1], outs[1][1])
        assert outs[0][2] == outs[1][2] == [True, True]

    def test_masked_prompt_equals_omitted_prompt(self):
        """With the prompt excluded, logits match a run that never saw it."""
        model = build_model(tiny_model_config(), VOCAB, seed=2).double()
        visual = torch.randn(1, 4, 8).double()
        targets = pad_batch([VOCAB.tokenize("ab")])
        policy = DropoutPolicy(rho=0.0, rng=random.Random(0))
        src_a, mask_a, _ = model.lm.assemble_input(
            [VOCAB.tokenize("xyz")], visual, policy, training=True
        )
        logits_a = model.lm.forward_logits(src_a, mask_a, targets)
        src_b, mask_b, _ = model.lm.assemble_input(None, visual)
        logits_b = model.lm.forward_logits(src_b, mask_b, targets)
        assert torch.allclose(logits_a, logits_b, atol=1e-12)


class TestGenerate:
    def test_max_len_zero(self):
        model = build_model(tiny_model_config(), VOCAB, seed=4)
        page = torch.rand(16, 16).numpy()
        assert model.generate(page, "q?", max_len=0) == ""

    def test_deterministic(self):
        model = build_model(tiny_model_config(), VOCAB, seed=4)
        page = torch.rand(16, 16).numpy()
        a = model.generate(page, "what?", max_len=8)
        b = model.generate(page, "what?", max_len=8)
        assert a == b

    def test_stops_at_eos(self):
        model = build_model(tiny_model_config(), VOCAB, seed=4)
        src = torch.randn(1, 4, 8)
        mask = torch.ones(1, 4, dtype=torch.bool)
        ids = model.lm.greedy_decode(src, mask, max_len=11)[0]
        assert len(ids) <= 11
        assert VOCAB.eos_id not in ids


class TestEndToEndGradients:
    def test_full_path_matches_finite_differences(self):
        model = build_model(
            tiny_model_config("vilma", (1, 2)), VOCAB, seed=7, dtype=torch.float64
        )
        images = torch.rand(1, 16, 16, dtype=torch.float64)
        prompt = [VOCAB.tokenize("ab ")]
        targets = pad_batch([VOCAB.tokenize("cd") + [VOCAB.eos_id]])

        def loss_fn():
            loss, _, _ = model.forward_batch(
                images, targets, encoder_prompts=prompt, lm_prompts=prompt
            )
            return loss

        tensors = model.trainable_parameters()
        err = check_gradients(loss_fn, tensors, max_coords=12)
        assert err <= 1e-3
