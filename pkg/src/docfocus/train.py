"""Three-stage training pipeline.

Stage I ("ltr") teaches the model to transcribe the page in reading order
with plain patch merging and no prompt. Stage II ("lmpm") switches the
configured merges to prompt-conditioned ones - freshly initialized, all other
weights carried over bitwise - and trains span denoising with the corrupted
span fed as the prompt, concatenated to the LM input only with probability
rho. Stage III ("finetune") trains question answering with the prompt always
concatenated, in one of three arms: baseline (plain encoder, prompt to the LM
only), render (prompt drawn into the page header, plain encoder), or vilma
(prompt-conditioned encoder plus LM concat).

Batch construction is synchronous and every random choice comes from a named
stream derived from the plan seed, so results do not depend on worker count.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .checkpoint import (
    load_checkpoint,
    load_into_model,
    model_tensors,
    read_manifest,
    save_checkpoint,
)
from .codec import Vocabulary, sample_lmpm
from .corpus import CorpusEntry
from .errors import ConfigError, StageError
from .lm import DropoutPolicy, pad_batch
from .metrics import PredictionRecord
from .model import DocModel, ModelConfig, build_model, model_config_to_dict
from .synth import page_text, render_prompt_on_image
from .util import derive_seed, stable_hash

STAGES = ("ltr", "lmpm", "finetune")
ARMS = ("baseline", "render", "vilma")

PROVENANCE_PROMPT_ENCODER = "frozen-prompt-encoder"


@dataclass(frozen=True)
class TrainPlan:
    stage: str
    steps: int
    batch_size: int = 8
    base_lr: float = 1e-3
    warmup_steps: int = 50
    min_lr: float = 0.0
    rho: float = 0.5
    vilma_stages: tuple[int, ...] = (1, 2, 3, 4)
    seed: int = 0
    arm: str = "vilma"
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    span_min: int = 16
    span_max: int = 64
    corruption_rate: float = 0.15
    mean_span: float = 3.0
    max_answer_len: int = 16

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.arm not in ARMS:
            raise ConfigError(f"unknown arm {self.arm!r}")
        if not self.steps > self.warmup_steps >= 0:
            raise ConfigError("need steps > warmup_steps >= 0")
        if not self.base_lr > self.min_lr >= 0:
            raise ConfigError("need base_lr > min_lr >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")

    @property
    def plan_hash(self) -> str:
        return stable_hash(asdict(self))


def lr_at(step: int, plan: TrainPlan) -> float:
    """Linear warmup to base_lr, then cosine decay to min_lr."""
    if not 0 <= step <= plan.steps:
        raise ValueError(f"step {step} outside [0, {plan.steps}]")
    if plan.warmup_steps > 0 and step < plan.warmup_steps:
        return plan.base_lr * step / plan.warmup_steps
    t = (step - plan.warmup_steps) / (plan.steps - plan.warmup_steps)
    return plan.min_lr + (plan.base_lr - plan.min_lr) * (1.0 + math.cos(math.pi * t)) / 2.0


@dataclass(frozen=True)
class StepRecord:
    step: int
    stage: str
    loss: float
    lr: float
    prompt_included_fraction: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    checkpoint_dir: Path
    records: list[StepRecord]

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")


def _optimizer(model: DocModel, plan: TrainPlan) -> torch.optim.AdamW:
    params = model.trainable_parameters()
    frozen = [n for n, p in model.named_parameters() if not p.requires_grad]
    if any(not n.startswith("prompt_encoder.") for n in frozen):
        raise ConfigError(f"unexpected frozen parameters: {frozen}")
    return torch.optim.AdamW(
        params, lr=plan.base_lr, betas=plan.betas, weight_decay=plan.weight_decay
    )


def _stack_images(model: DocModel, pages) -> torch.Tensor:
    return torch.stack([model.image_tensor(p.pixels) for p in pages])


def _train_loop(model, plan, out_dir, batch_fn) -> list[StepRecord]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt = _optimizer(model, plan)
    records = []
    model.train()
    with open(out_dir / "steps.jsonl", "a", encoding="utf-8") as log:
        for step in range(plan.steps):
            lr = lr_at(step, plan)
            for group in opt.param_groups:
                group["lr"] = lr
            images, targets, enc_prompts, lm_prompts, policy = batch_fn(step)
            loss, _, included = model.forward_batch(
                images,
                targets,
                encoder_prompts=enc_prompts,
                lm_prompts=lm_prompts,
                policy=policy,
                training=True,
            )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), plan.grad_clip)
            opt.step()
            frac = 0.0 if lm_prompts is None else sum(included) / len(included)
            rec = StepRecord(step, plan.stage, float(loss.item()), lr, frac)
            records.append(rec)
            log.write(rec.to_json() + "\n")
    model.eval()
    return records


def _save(model, plan, out_dir, provenance, rng_state, extra_meta=None) -> Path:
    metadata = {
        "stage": plan.stage,
        "step": plan.steps,
        "plan_hash": plan.plan_hash,
        "rng_state": _jsonable(rng_state),
        "model_config": model_config_to_dict(model.cfg),
    }
    if extra_meta:
        metadata.update(extra_meta)
    return save_checkpoint(Path(out_dir) / "checkpoint", model_tensors(model), metadata, provenance)


def _jsonable(state):
    if isinstance(state, tuple):
        return [_jsonable(s) for s in state]
    return state


def rng_state_from_metadata(meta_state):
    """Invert the JSON round-trip of random.Random().getstate()."""
    version, internal, gauss = meta_state
    return (version, tuple(internal), gauss)


def _base_provenance(model: DocModel, stage: str) -> dict[str, str]:
    prov = {}
    for name in model.state_dict():
        if name.startswith("prompt_encoder."):
            prov[name] = PROVENANCE_PROMPT_ENCODER
        else:
            prov[name] = stage
    return prov


# --- stage I: transcription pretraining ------------------------------------


def run_ltr(
    plan: TrainPlan,
    entries: list[CorpusEntry],
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    out_dir: str | Path,
    dtype: torch.dtype = torch.float32,
) -> TrainResult:
    if plan.stage != "ltr":
        raise ConfigError(f"plan stage is {plan.stage!r}, expected 'ltr'")
    if model_cfg.encoder.mode != "plain":
        raise ConfigError("stage I uses the plain (prompt-independent) encoder")
    if not entries:
        raise ConfigError("empty corpus")
    model = build_model(model_cfg, vocab, derive_seed(plan.seed, "init"), dtype)
    transcripts = [
        (vocab.tokenize(page_text(e.page)) + [vocab.eos_id])[: model_cfg.max_target_len]
        for e in entries
    ]
    batch_rng = random.Random(derive_seed(plan.seed, "batch"))

    def batch_fn(step):
        idx = [batch_rng.randrange(len(entries)) for _ in range(plan.batch_size)]
        images = _stack_images(model, [entries[i].page for i in idx])
        targets = pad_batch([transcripts[i] for i in idx], vocab.pad_id).to(model.device)
        return images, targets, None, None, None

    records = _train_loop(model, plan, out_dir, batch_fn)
    ckpt = _save(model, plan, out_dir, _base_provenance(model, "ltr"), batch_rng.getstate())
    return TrainResult(checkpoint_dir=ckpt, records=records)


# --- stage II: masked-span prompt pretraining -------------------------------


def expected_new_tensors(model_cfg: ModelConfig) -> set[str]:
    """Tensor names that exist only in the prompt-conditioned architecture."""
    names = set()
    for stage in model_cfg.encoder.vilma_stages:
        prefix = f"vision.merges.{stage - 1}."
        for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
            names.add(f"{prefix}attn.{proj}.weight")
            names.add(f"{prefix}attn.{proj}.bias")
        names.add(f"{prefix}norm.weight")
        names.add(f"{prefix}norm.bias")
    return names


def migrate_to_lmpm(
    init_ckpt: str | Path,
    plan: TrainPlan,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    out_dir: str | Path,
    dtype: torch.dtype = torch.float32,
) -> Path:
    """Carry every stage-I tensor bitwise into the prompt-conditioned
    architecture; only the new cross-attention and norm tensors are freshly
    initialized (deterministically from the plan seed)."""
    source = load_checkpoint(init_ckpt)
    if source.stage != "ltr":
        raise StageError(f"migration expects an 'ltr' checkpoint, got {source.stage!r}")
    if model_cfg.encoder.mode != "vilma":
        raise ConfigError("migration target must be a vilma-mode config")
    model = build_model(model_cfg, vocab, derive_seed(plan.seed, "migrate-init"), dtype)
    state = model.state_dict()
    new_names = set(state) - set(source.tensors)
    expected = expected_new_tensors(model_cfg)
    if new_names != expected:
        raise StageError(
            "architecture difference is not the prompt-merge tensor set: "
            f"unexpected={sorted(new_names - expected)} missing={sorted(expected - new_names)}"
        )
    tensors = model_tensors(model)
    for name, arr in source.tensors.items():
        if name in tensors:
            tensors[name] = arr  # carried bitwise
    provenance = dict(source.provenance)
    for name in new_names:
        provenance[name] = "lmpm-init"
    metadata = {
        "stage": "lmpm",
        "step": 0,
        "plan_hash": plan.plan_hash,
        "rng_state": source.metadata.get("rng_state"),
    }
    return save_checkpoint(Path(out_dir), tensors, metadata, provenance)


def run_lmpm(
    plan: TrainPlan,
    entries: list[CorpusEntry],
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    out_dir: str | Path,
    init_ckpt: str | Path,
    dtype: torch.dtype = torch.float32,
) -> TrainResult:
    if plan.stage != "lmpm":
        raise ConfigError(f"plan stage is {plan.stage!r}, expected 'lmpm'")
    if model_cfg.encoder.mode != "vilma":
        raise ConfigError("stage II requires a vilma-mode encoder")
    out_dir = Path(out_dir)
    migrated_dir = migrate_to_lmpm(
        init_ckpt, plan, model_cfg, vocab, out_dir / "migrated", dtype
    )
    migrated = load_checkpoint(migrated_dir)
    model = build_model(model_cfg, vocab, derive_seed(plan.seed, "init"), dtype)
    load_into_model(model, migrated)

    usable = [
        (e.page, doc)
        for e in entries
        if len(doc := vocab.tokenize(page_text(e.page))) >= plan.span_min
    ]
    if not usable:
        raise ConfigError(f"no page has at least span_min={plan.span_min} tokens")
    pages = [page for page, _ in usable]
    docs = [doc for _, doc in usable]
    batch_rng = random.Random(derive_seed(plan.seed, "batch"))
    span_rng = random.Random(derive_seed(plan.seed, "spans"))
    policy = DropoutPolicy(plan.rho, random.Random(derive_seed(plan.seed, "dropout")))

    def batch_fn(step):
        idx = [batch_rng.randrange(len(docs)) for _ in range(plan.batch_size)]
        enc_prompts, targets = [], []
        for i in idx:
            sample = sample_lmpm(
                docs[i],
                span_rng,
                vocab,
                span_min=plan.span_min,
                span_max=plan.span_max,
                corruption_rate=plan.corruption_rate,
                mean_span=plan.mean_span,
            )
            enc_prompts.append(sample.corrupted)
            targets.append(sample.target)
        images = _stack_images(model, [pages[i] for i in idx])
        tgt = pad_batch(targets, vocab.pad_id).to(model.device)
        return images, tgt, enc_prompts, enc_prompts, policy

    records = _train_loop(model, plan, out_dir, batch_fn)
    provenance = dict(migrated.provenance)
    ckpt = _save(model, plan, out_dir, provenance, batch_rng.getstate())
    return TrainResult(checkpoint_dir=ckpt, records=records)


# --- stage III: question-answering fine-tune --------------------------------


def run_finetune(
    plan: TrainPlan,
    entries: list[CorpusEntry],
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    out_dir: str | Path,
    init_ckpt: str | Path,
    dtype: torch.dtype = torch.float32,
) -> TrainResult:
    if plan.stage != "finetune":
        raise ConfigError(f"plan stage is {plan.stage!r}, expected 'finetune'")
    source_meta = read_manifest(init_ckpt)["metadata"]
    if plan.arm == "vilma":
        if source_meta["stage"] != "lmpm":
            raise StageError("vilma fine-tuning starts from an 'lmpm' checkpoint")
        if model_cfg.encoder.mode != "vilma":
            raise ConfigError("vilma arm requires a vilma-mode config")
    else:
        if source_meta["stage"] not in ("ltr", "lmpm"):
            raise StageError(
                f"fine-tuning expects an 'ltr' or 'lmpm' checkpoint, got {source_meta['stage']!r}"
            )
        if model_cfg.encoder.mode != "plain":
            raise ConfigError(f"{plan.arm} arm requires a plain-mode config")

    source = load_checkpoint(init_ckpt)
    model = build_model(model_cfg, vocab, derive_seed(plan.seed, "init"), dtype)
    load_into_model(model, source)

    pairs = [(e.page, t) for e in entries for t in e.triples]
    if not pairs:
        raise ConfigError("corpus has no question/answer triples")
    rendered_cache: dict[tuple[str, str], object] = {}

    def page_pixels(page, question):
        if plan.arm != "render":
            return page
        key = (page.page_id, question)
        if key not in rendered_cache:
            rendered_cache[key] = render_prompt_on_image(page, question)
        return rendered_cache[key]

    batch_rng = random.Random(derive_seed(plan.seed, "batch"))

    def batch_fn(step):
        picked = [pairs[batch_rng.randrange(len(pairs))] for _ in range(plan.batch_size)]
        images = _stack_images(
            model, [page_pixels(page, t.question) for page, t in picked]
        )
        questions = [vocab.tokenize(t.question) for _, t in picked]
        targets = pad_batch(
            [
                (vocab.tokenize(t.answers[0]) + [vocab.eos_id])[: plan.max_answer_len]
                for _, t in picked
            ],
            vocab.pad_id,
        ).to(model.device)
        enc_prompts = questions if plan.arm == "vilma" else None
        lm_prompts = None if plan.arm == "render" else questions
        return images, targets, enc_prompts, lm_prompts, None

    records = _train_loop(model, plan, out_dir, batch_fn)
    ckpt = _save(
        model,
        plan,
        out_dir,
        dict(source.provenance),
        batch_rng.getstate(),
        extra_meta={"arm": plan.arm},
    )
    return TrainResult(checkpoint_dir=ckpt, records=records)


# --- inference helpers -------------------------------------------------------


def load_model(
    ckpt_dir: str | Path,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    dtype: torch.dtype = torch.float32,
) -> DocModel:
    model = build_model(model_cfg, vocab, seed=0, dtype=dtype)
    load_into_model(model, load_checkpoint(ckpt_dir))
    model.eval()
    return model


def predict_records(
    model: DocModel,
    entries: list[CorpusEntry],
    arm: str = "vilma",
    max_len: int = 16,
) -> list[PredictionRecord]:
    """Greedy predictions for every (page, question) pair in the corpus."""
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}")
    records = []
    for entry in entries:
        for triple in entry.triples:
            page = entry.page
            if arm == "render":
                page = render_prompt_on_image(page, triple.question)
                prediction = model.generate(page.pixels, prompt=None, max_len=max_len)
            else:
                prediction = model.generate(page.pixels, triple.question, max_len=max_len)
            records.append(
                PredictionRecord(
                    page_id=entry.page.page_id,
                    question=triple.question,
                    prediction=prediction,
                    gold=tuple(triple.answers),
                    word_count=entry.page.word_count,
                )
            )
    return records
