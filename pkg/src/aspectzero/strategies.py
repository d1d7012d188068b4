"""Training strategies: vanilla fine-tuning, implicit aspect tokens, and
explicit aspect-detection pre-training.

A TrainingPlan is an ordered list of stages.  Vanilla and implicit plans
run a single fine-tuning stage; explicit plans first train an aspect
classifier over pooled text representations (the temporary head is
discarded, only the backbone survives) and then fine-tune.

Implicit training injects the example's aspect into every built instance;
the reserved aspect token (encoder formalizations) or the aspect phrase
(generative prompts) enters the input layout downstream.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import formalizations as fz
from .corpus import IN_DOMAIN, AspectCorpus, Dataset, Example
from .encoder import gradient, save_checkpoint
from .optim import AdamW, schedule_multiplier
from .tokenizer import END, SEP, START

STRATEGIES = ("vanilla", "implicit", "explicit")

ASPECT_QUESTION = "What aspect is this? Answer:"


@dataclass
class StageConfig:
    name: str  # "aspect_pretrain" | "finetune"
    learning_rate: float
    batch_size: int
    warmup_fraction: float
    schedule: str
    epochs: int
    weight_decay: float
    seed: int
    negatives_per_positive: int = 3
    loss_scope: str = "full"
    # 0 = training prompts list the dataset's whole vocabulary; otherwise
    # sample this many options from the aspect-wide label union, so prompts
    # carry confusable distractors sharing tokens with the answer
    prompt_options: int = 0


def default_stage(name: str, formalization: str, seed: int = 0, **overrides) -> StageConfig:
    """Published defaults: AdamW, weight decay 0.01, 3 epochs for every
    stage; binary/dual fine-tuning at 2e-5/16 with 10% warmup and a linear
    schedule; generative at 4e-5/128 with 1% warmup and a cosine schedule;
    aspect pre-training at 2e-5/16 with 10% linear warmup into a cosine
    schedule."""
    if name == "aspect_pretrain":
        cfg = StageConfig(name, 2e-5, 16, 0.10, "cosine", 3, 0.01, seed)
    elif formalization == fz.GENERATIVE_PROMPT:
        cfg = StageConfig(name, 4e-5, 128, 0.01, "cosine", 3, 0.01, seed)
    else:
        cfg = StageConfig(name, 2e-5, 16, 0.10, "linear", 3, 0.01, seed)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class TrainingPlan:
    strategy: str
    formalization: str
    stages: list[StageConfig] = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.formalization not in fz.KINDS:
            raise ValueError(f"unknown formalization {self.formalization!r}")
        names = [s.name for s in self.stages]
        if self.strategy == "explicit":
            if names != ["aspect_pretrain", "finetune"]:
                raise ValueError(
                    "explicit plans have exactly two stages: aspect_pretrain, finetune"
                )
        elif names != ["finetune"]:
            raise ValueError(f"{self.strategy} plans have exactly one finetune stage")

    @classmethod
    def default(
        cls,
        strategy: str,
        formalization: str,
        seed: int = 0,
        pretrain_overrides: dict | None = None,
        finetune_overrides: dict | None = None,
    ) -> "TrainingPlan":
        stages = []
        if strategy == "explicit":
            stages.append(
                default_stage("aspect_pretrain", formalization, seed=seed,
                              **(pretrain_overrides or {}))
            )
        stages.append(
            default_stage("finetune", formalization, seed=seed + len(stages),
                          **(finetune_overrides or {}))
        )
        return cls(strategy, formalization, stages)


# -- aspect injection ---------------------------------------------------------


def inject_aspect(
    instance: fz.ClassificationInstance,
    aspect: str,
    known_aspects: tuple[str, ...] | None = None,
) -> fz.ClassificationInstance:
    """Set the aspect on an instance; applied at most once."""
    if instance.aspect is not None:
        raise ValueError(
            f"instance already carries aspect {instance.aspect!r}; "
            "injection is applied at most once"
        )
    if known_aspects is not None and aspect not in known_aspects:
        raise ValueError(f"unknown aspect {aspect!r}; known: {tuple(known_aspects)}")
    return fz.with_aspect(instance, aspect)


# -- instance building -----------------------------------------------------------


def _as_datasets(corpora) -> list[Dataset]:
    datasets: list[Dataset] = []
    for item in corpora:
        if isinstance(item, AspectCorpus):
            datasets.extend(item.datasets)
        elif isinstance(item, Dataset):
            datasets.append(item)
        else:
            raise TypeError(f"expected Dataset or AspectCorpus, got {type(item)!r}")
    return datasets


def combined_vocabulary(datasets: list[Dataset]) -> tuple[str, ...]:
    vocab: dict[str, None] = {}
    for d in datasets:
        for label in d.spec.label_vocabulary:
            vocab.setdefault(label)
    return tuple(vocab)


def _sample_prompt_options(
    gold: str, pool: tuple[str, ...], count: int, rng: np.random.Generator
) -> tuple[str, ...]:
    """Gold plus sampled distractors, shuffled; order is part of the prompt."""
    distractors = [label for label in pool if label != gold]
    k = min(count - 1, len(distractors))
    chosen = [distractors[i] for i in rng.choice(len(distractors), size=k, replace=False)]
    options = [gold] + chosen
    order = rng.permutation(len(options))
    return tuple(options[i] for i in order)


def build_training_instances(
    corpora,
    formalization: str,
    strategy: str,
    seed: int,
    negatives_per_positive: int = 3,
    label_space: tuple[str, ...] | None = None,
    prompt_options: int = 0,
) -> list[fz.ClassificationInstance]:
    """Materialize training instances from in-domain train partitions.

    Implicit strategy injects each example's aspect; vanilla and explicit
    leave the aspect unset.  For generative prompts, `prompt_options` > 0
    samples that many options per prompt from the same-aspect label union
    (confusable distractors), instead of listing the dataset's vocabulary.
    """
    datasets = _as_datasets(corpora)
    if not datasets:
        raise ValueError("empty corpus")
    implicit = strategy == "implicit"
    rng = np.random.default_rng(seed)
    if formalization == fz.SEQUENCE_CLS and label_space is None:
        label_space = combined_vocabulary(datasets)
    aspect_unions = {
        aspect: combined_vocabulary(
            [d for d in datasets if d.spec.aspect == aspect]
        )
        for aspect in {d.spec.aspect for d in datasets}
    }
    instances: list[fz.ClassificationInstance] = []
    for d in datasets:
        if d.spec.split != IN_DOMAIN:
            raise ValueError(
                f"{d.spec.dataset_id} is out-of-domain; training uses in-domain data only"
            )
        vocab = d.spec.label_vocabulary
        for ex in d.partition("train"):
            if formalization in (fz.BINARY_PAIR, fz.DUAL_PAIR):
                built = fz.make_binary_pairs(
                    ex,
                    vocab,
                    negatives_per_positive=negatives_per_positive,
                    seed=int(rng.integers(2**63)),
                    kind=formalization,
                )
            elif formalization == fz.GENERATIVE_PROMPT:
                if prompt_options > 0:
                    options = _sample_prompt_options(
                        ex.gold_labels[0], aspect_unions[ex.aspect],
                        prompt_options, rng,
                    )
                else:
                    options = tuple(vocab)
                built = [
                    fz.ClassificationInstance(
                        fz.GENERATIVE_PROMPT, ex.text, options, ex.gold_labels[0]
                    )
                ]
            elif formalization == fz.SEQUENCE_CLS:
                built = [
                    fz.ClassificationInstance(
                        fz.SEQUENCE_CLS,
                        ex.text,
                        ex.gold_labels[0],
                        label_space.index(ex.gold_labels[0]),
                    )
                ]
            else:
                raise ValueError(f"unknown formalization {formalization!r}")
            if implicit:
                built = [inject_aspect(inst, ex.aspect) for inst in built]
            instances.extend(built)
    if not instances:
        raise ValueError("corpus produced no training instances")
    return instances


# -- tokenized batches --------------------------------------------------------------


def _materialize(model, instances, formalization, loss_scope):
    max_len = model.max_sequence_length
    tok = model.tokenizer
    if formalization == fz.GENERATIVE_PROMPT:
        pack = fz.load_template_pack()
        rows = []
        for inst in instances:
            prompt = fz.build_generative_prompt(
                tok, inst.text, inst.label, aspect=inst.aspect,
                template_pack=pack, max_sequence_length=max_len,
            )
            seq = list(prompt.ids) + tok.encode(inst.target) + [END]
            rows.append((seq, prompt.answer_start))
        return rows
    if formalization == fz.BINARY_PAIR:
        return [
            (fz.binary_input_ids(tok, i.text, i.label, i.aspect, max_len), int(i.target))
            for i in instances
        ]
    if formalization == fz.DUAL_PAIR:
        return [
            (
                fz.dual_text_ids(tok, i.text, i.aspect, max_len),
                fz.dual_label_ids(tok, i.label, max_len),
                float(i.target),
            )
            for i in instances
        ]
    if formalization == fz.SEQUENCE_CLS:
        rows = []
        for i in instances:
            ids = tok.encode(i.text)
            if not ids:
                raise ValueError("text tokenizes to nothing")
            rows.append(([START] + ids[: max_len - 1], int(i.target)))
        return rows
    raise ValueError(f"unknown formalization {formalization!r}")


def _collate(model, rows, formalization, loss_scope):
    if formalization == fz.DUAL_PAIR:
        text_ids, text_mask = model.encode_batch([r[0] for r in rows])
        label_ids, label_mask = model.encode_batch([r[1] for r in rows])
        targets = np.array([r[2] for r in rows])
        return (text_ids, text_mask, label_ids, label_mask, targets)
    if formalization == fz.GENERATIVE_PROMPT:
        ids, mask = model.encode_batch([r[0] for r in rows])
        loss_mask = np.zeros_like(mask)
        for i, (seq, answer_start) in enumerate(rows):
            start = 1 if loss_scope == "full" else answer_start
            loss_mask[i, start : len(seq)] = 1.0
        return (ids, mask, loss_mask)
    ids, mask = model.encode_batch([r[0] for r in rows])
    targets = np.array([r[1] for r in rows], dtype=np.int64)
    return (ids, mask, targets)


def _loss_fn(formalization, head_name=None):
    if formalization == fz.BINARY_PAIR:
        return fz.binary_batch_loss
    if formalization == fz.DUAL_PAIR:
        return fz.dual_batch_loss
    if formalization == fz.GENERATIVE_PROMPT:
        return fz.lm_batch_loss
    if formalization == fz.SEQUENCE_CLS:
        return lambda model, batch: fz.pooled_head_loss(model, head_name, batch)
    raise ValueError(formalization)


def _run_stage(model, rows, formalization, config: StageConfig, loss_fn,
               stage_index: int, log: list[dict]) -> None:
    rng = np.random.default_rng(config.seed)
    n = len(rows)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    optimizer = AdamW(
        model.parameters(), config.learning_rate, weight_decay=config.weight_decay
    )
    captured: dict[str, float] = {}

    def wrapped(model, batch):
        loss = loss_fn(model, batch)
        captured["loss"] = float(loss.data)
        return loss

    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            chunk = [rows[i] for i in order[lo : lo + config.batch_size]]
            batch = _collate(model, chunk, formalization, config.loss_scope)
            scale = schedule_multiplier(
                step, total_steps, config.warmup_fraction, config.schedule
            )
            grads = gradient(model, wrapped, batch)
            optimizer.step(grads, lr_scale=scale)
            log.append(
                {
                    "stage": config.name,
                    "stage_index": stage_index,
                    "step": step,
                    "loss": captured["loss"],
                    "learning_rate": config.learning_rate * scale,
                }
            )
            step += 1


# -- stages ----------------------------------------------------------------------


def dedupe_by_text(examples) -> list[Example]:
    """One aspect label per unique text; the first occurrence wins."""
    seen: set[str] = set()
    out = []
    for ex in examples:
        if ex.text not in seen:
            seen.add(ex.text)
            out.append(ex)
    return out


def aspect_pretrain(model, examples, config: StageConfig,
                    stage_index: int = 0, log: list[dict] | None = None):
    """Train aspect detection over pooled text representations, then discard
    the temporary classification head; only the backbone survives.

    Autoregressive models cast aspect detection as generating the aspect
    name, keeping one architecture throughout.
    """
    if log is None:
        log = []
    examples = dedupe_by_text(examples)
    aspects_present = sorted({ex.aspect for ex in examples})
    if len(aspects_present) < 2:
        raise ValueError("aspect pre-training needs a corpus spanning >= 2 aspects")
    tok = model.tokenizer
    max_len = model.max_sequence_length
    if model.mode == "bidirectional":
        aspect_list = tok.aspects
        model.attach_head("aspect", len(aspect_list), seed=config.seed)
        rows = []
        for ex in examples:
            ids = [START] + tok.encode(ex.text)[: max_len - 1]
            rows.append((ids, aspect_list.index(ex.aspect)))
        try:
            _run_stage(
                model, rows, fz.SEQUENCE_CLS, config,
                _loss_fn(fz.SEQUENCE_CLS, head_name="aspect"), stage_index, log,
            )
        finally:
            model.detach_head("aspect")
    else:
        question = tok.encode(ASPECT_QUESTION)
        rows = []
        for ex in examples:
            text_ids = tok.encode(ex.text)
            budget = max_len - len(question) - 4 - len(tok.encode(ex.aspect))
            prompt = [START] + text_ids[:budget] + [SEP] + question
            seq = prompt + tok.encode(ex.aspect) + [END]
            rows.append((seq, len(prompt)))
        _run_stage(
            model, rows, fz.GENERATIVE_PROMPT, config,
            _loss_fn(fz.GENERATIVE_PROMPT), stage_index, log,
        )
    return model


def finetune(model, plan: TrainingPlan, corpora,
             stage_index: int | None = None, log: list[dict] | None = None):
    """Run the plan's fine-tuning stage over in-domain train data.

    Returns (model, log); the log holds one {stage, step, loss,
    learning_rate} entry per optimizer step.
    """
    if log is None:
        log = []
    config = plan.stages[-1]
    if stage_index is None:
        stage_index = len(plan.stages) - 1
    mode_needed = "autoregressive" if plan.formalization == fz.GENERATIVE_PROMPT \
        else "bidirectional"
    if model.mode != mode_needed:
        raise ValueError(
            f"{plan.formalization} needs a {mode_needed} model, got {model.mode}"
        )
    instances = build_training_instances(
        corpora,
        plan.formalization,
        plan.strategy,
        seed=config.seed,
        negatives_per_positive=config.negatives_per_positive,
        prompt_options=config.prompt_options,
    )
    if plan.formalization == fz.BINARY_PAIR and "binary" not in model.heads:
        model.attach_head("binary", 2, seed=config.seed)
    if plan.formalization == fz.SEQUENCE_CLS and "seq_cls" not in model.heads:
        label_space = combined_vocabulary(_as_datasets(corpora))
        model.attach_head("seq_cls", len(label_space), labels=label_space,
                          seed=config.seed)
    head_name = "seq_cls" if plan.formalization == fz.SEQUENCE_CLS else None
    rows = _materialize(model, instances, plan.formalization, config.loss_scope)
    _run_stage(
        model, rows, plan.formalization, config,
        _loss_fn(plan.formalization, head_name=head_name), stage_index, log,
    )
    return model, log


def run_plan(plan: TrainingPlan, model_init, corpora,
             run_dir: str | os.PathLike | None = None):
    """Execute the plan's stages in order, feeding each stage's model into
    the next.  With `run_dir`, persists one checkpoint directory per stage
    (checkpoints/<stage_index>/) and a JSONL training log.

    Returns (model, artifacts) where artifacts maps stage indices to
    checkpoint paths (when persisted) and carries the full log.
    """
    model = model_init
    log: list[dict] = []
    checkpoints: list[str] = []
    datasets = _as_datasets(corpora)
    for stage_index, config in enumerate(plan.stages):
        if config.name == "aspect_pretrain":
            examples = [ex for d in datasets for ex in d.partition("train")]
            aspect_pretrain(model, examples, config, stage_index=stage_index, log=log)
        else:
            finetune(model, plan, corpora, stage_index=stage_index, log=log)
        if run_dir is not None:
            ckpt_dir = os.path.join(os.fspath(run_dir), "checkpoints", str(stage_index))
            save_checkpoint(model, ckpt_dir)
            checkpoints.append(ckpt_dir)
    if run_dir is not None:
        log_dir = os.path.join(os.fspath(run_dir), "logs")
        os.makedirs(log_dir, exist_ok=True)
        with open(os.path.join(log_dir, "training.jsonl"), "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return model, {"checkpoints": checkpoints, "log": log}
