"""Training strategy tests: plan validation, aspect injection, explicit
pre-training, fine-tuning determinism, and stage composition."""

import numpy as np
import pytest

from aspectzero.corpus import IN_DOMAIN, Example
from aspectzero.encoder import ReferenceEncoder
from aspectzero.formalizations import (
    BINARY_PAIR,
    DUAL_PAIR,
    GENERATIVE_PROMPT,
    SEQUENCE_CLS,
    ClassificationInstance,
    binary_input_ids,
    build_generative_prompt,
)
from aspectzero.strategies import (
    StageConfig,
    TrainingPlan,
    aspect_pretrain,
    build_training_instances,
    default_stage,
    dedupe_by_text,
    finetune,
    inject_aspect,
    run_plan,
)
from aspectzero.tokenizer import HashTokenizer

from util import tiny_dataset

ASPECTS = ("sentiment", "intent", "topic")


def tiny_model(mode="bidirectional", seed=0, buckets=128):
    tok = HashTokenizer(n_buckets=buckets, aspects=ASPECTS)
    return ReferenceEncoder(tok, mode=mode, hidden_width=16, n_heads=2,
                            max_sequence_length=64, seed=seed)


def fast_overrides(**kw):
    base = dict(learning_rate=5e-3, batch_size=8, epochs=4)
    base.update(kw)
    return base


class TestTrainingPlan:
    def test_explicit_has_two_stages(self):
        plan = TrainingPlan.default("explicit", BINARY_PAIR)
        assert [s.name for s in plan.stages] == ["aspect_pretrain", "finetune"]

    def test_vanilla_and_implicit_have_one(self):
        for strategy in ("vanilla", "implicit"):
            plan = TrainingPlan.default(strategy, BINARY_PAIR)
            assert [s.name for s in plan.stages] == ["finetune"]

    def test_malformed_stage_lists_rejected(self):
        stage = default_stage("finetune", BINARY_PAIR)
        with pytest.raises(ValueError, match="exactly two stages"):
            TrainingPlan("explicit", BINARY_PAIR, [stage])
        with pytest.raises(ValueError, match="exactly one finetune"):
            TrainingPlan("vanilla", BINARY_PAIR,
                         [default_stage("aspect_pretrain", BINARY_PAIR), stage])

    def test_published_defaults_for_encoder_finetuning(self):
        # AdamW regime: 2e-5, batch 16, 10% warmup, linear, 3 epochs, wd 0.01
        for formalization in (BINARY_PAIR, DUAL_PAIR):
            stage = TrainingPlan.default("vanilla", formalization).stages[0]
            assert stage.learning_rate == 2e-5
            assert stage.batch_size == 16
            assert stage.warmup_fraction == 0.10
            assert stage.schedule == "linear"
            assert stage.epochs == 3
            assert stage.weight_decay == 0.01

    def test_published_defaults_for_generative_finetuning(self):
        stage = TrainingPlan.default("vanilla", GENERATIVE_PROMPT).stages[0]
        assert stage.learning_rate == 4e-5
        assert stage.batch_size == 128
        assert stage.warmup_fraction == 0.01
        assert stage.schedule == "cosine"
        assert stage.epochs == 3
        assert stage.weight_decay == 0.01

    def test_published_defaults_for_aspect_pretraining(self):
        stage = TrainingPlan.default("explicit", BINARY_PAIR).stages[0]
        assert stage.learning_rate == 2e-5
        assert stage.batch_size == 16
        assert stage.warmup_fraction == 0.10
        assert stage.schedule == "cosine"
        assert stage.epochs == 3
        assert stage.weight_decay == 0.01


class TestInjectAspect:
    def test_round_trip(self):
        inst = ClassificationInstance(BINARY_PAIR, "text", "label", True)
        assert inject_aspect(inst, "sentiment").aspect == "sentiment"

    def test_double_injection_rejected(self):
        inst = ClassificationInstance(BINARY_PAIR, "text", "label", True,
                                      aspect="sentiment")
        with pytest.raises(ValueError, match="at most once"):
            inject_aspect(inst, "intent")

    def test_unknown_aspect_rejected(self):
        inst = ClassificationInstance(BINARY_PAIR, "text", "label", True)
        with pytest.raises(ValueError, match="unknown aspect"):
            inject_aspect(inst, "finance", known_aspects=ASPECTS)

    def test_binary_sequences_differ_by_aspect_block_only(self):
        tok = HashTokenizer(n_buckets=128, aspects=ASPECTS)
        inst = ClassificationInstance(BINARY_PAIR, "calm quiet evening", "calm", True)
        injected = inject_aspect(inst, "sentiment")
        plain = binary_input_ids(tok, inst.text, inst.label, inst.aspect, 64)
        with_aspect = binary_input_ids(tok, injected.text, injected.label,
                                       injected.aspect, 64)
        # the aspect block is a contiguous 2-token insertion; stripping it
        # recovers the vanilla sequence exactly
        label_len = len(tok.encode(inst.label))
        block_at = 1 + label_len
        assert with_aspect[block_at:block_at + 2] == [2, tok.aspect_id("sentiment")]
        assert with_aspect[:block_at] + with_aspect[block_at + 2:] == plain

    def test_generative_prompts_differ_by_aspect_phrase_only(self):
        tok = HashTokenizer(n_buckets=512, aspects=ASPECTS)
        plain = build_generative_prompt(tok, "t", ("a", "b"))
        injected = build_generative_prompt(tok, "t", ("a", "b"), aspect="topic")
        diff = [(x, y) for x, y in zip(plain.ids, injected.ids) if x != y]
        assert len(plain.ids) == len(injected.ids)
        assert diff == [(tok.encode("category")[0], tok.encode("topic")[0])]


def three_aspect_datasets(texts_per_label=8, buckets=128, seed=0):
    labels = {
        "sentiment": ("joy", "anger"),
        "intent": ("check balance", "book flight"),
        "topic": ("world", "sports"),
    }
    return [
        tiny_dataset(dataset_id=f"{aspect}_ds", aspect=aspect,
                     labels=labels[aspect], texts_per_label=texts_per_label,
                     seed=seed + i)
        for i, aspect in enumerate(ASPECTS)
    ]


class TestBuildTrainingInstances:
    def test_implicit_instances_always_carry_aspect(self):
        datasets = three_aspect_datasets()
        instances = build_training_instances(datasets, BINARY_PAIR, "implicit",
                                             seed=0)
        assert all(i.aspect is not None for i in instances)

    def test_vanilla_instances_never_carry_aspect(self):
        datasets = three_aspect_datasets()
        for formalization in (BINARY_PAIR, DUAL_PAIR, GENERATIVE_PROMPT,
                              SEQUENCE_CLS):
            instances = build_training_instances(datasets, formalization,
                                                 "vanilla", seed=0)
            assert all(i.aspect is None for i in instances)

    def test_generative_prompt_option_sampling(self):
        datasets = three_aspect_datasets()
        instances = build_training_instances(datasets, GENERATIVE_PROMPT,
                                             "vanilla", seed=0, prompt_options=2)
        for inst in instances:
            assert len(inst.label) == 2
            assert inst.target in inst.label

    def test_out_of_domain_training_rejected(self):
        bad = tiny_dataset(dataset_id="ood", split="out_of_domain")
        with pytest.raises(ValueError, match="out-of-domain"):
            build_training_instances([bad], BINARY_PAIR, "vanilla", seed=0)


class TestAspectPretrain:
    def test_separable_corpus_reaches_high_heldout_accuracy(self):
        # 3 aspects x ~100 texts with aspect-specific vocabulary
        train_sets = three_aspect_datasets(texts_per_label=25, seed=0)
        held_out = three_aspect_datasets(texts_per_label=6, seed=77)
        model = tiny_model(seed=1)
        config = StageConfig("aspect_pretrain", 5e-3, 16, 0.1, "cosine", 6, 0.01,
                             seed=0)
        examples = [ex for d in train_sets for ex in d.partition("train")]
        aspect_pretrain(model, examples, config)
        # probe: retrain only a fresh head on the frozen backbone would be
        # fair game, but simpler is to verify with a fresh pretrain pass and
        # held-out texts through the trained backbone + temporary head; here
        # we just re-attach a head and train it briefly on the train split
        from aspectzero.encoder import gradient
        from aspectzero.formalizations import pooled_head_loss
        from aspectzero.optim import AdamW
        from aspectzero.tokenizer import START

        model.attach_head("aspect", len(ASPECTS), seed=3)
        rows = [([START] + model.tokenizer.encode(ex.text)[:63],
                 ASPECTS.index(ex.aspect)) for ex in examples]
        ids, mask = model.encode_batch([r[0] for r in rows])
        batch = (ids, mask, np.array([r[1] for r in rows]))
        loss_fn = lambda m, b: pooled_head_loss(m, "aspect", b)
        optimizer = AdamW({k: v for k, v in model.parameters().items()
                           if k.startswith("head.aspect")}, 5e-2)
        for _ in range(60):
            grads = gradient(model, loss_fn, batch)
            optimizer.step({k: g for k, g in grads.items()
                            if k.startswith("head.aspect")})
        correct = 0
        total = 0
        for d in held_out:
            for ex in d.examples:
                row = [START] + model.tokenizer.encode(ex.text)[:63]
                b_ids, b_mask = model.encode_batch([row])
                states = model.forward(b_ids, b_mask)
                from aspectzero.encoder import pooled_first
                probs = model.heads["aspect"].logits(pooled_first(states)) \
                    .softmax(axis=-1).data[0]
                correct += int(np.argmax(probs) == ASPECTS.index(ex.aspect))
                total += 1
        model.detach_head("aspect")
        assert correct / total >= 0.95

    def test_temporary_head_discarded(self):
        model = tiny_model(seed=2)
        datasets = three_aspect_datasets(texts_per_label=4)
        config = StageConfig("aspect_pretrain", 1e-3, 8, 0.1, "cosine", 1, 0.01,
                             seed=0)
        examples = [ex for d in datasets for ex in d.partition("train")]
        out = aspect_pretrain(model, examples, config)
        assert "aspect" not in out.heads

    def test_backbone_parameters_change(self):
        model = tiny_model(seed=3)
        before = {k: t.data.copy() for k, t in model.parameters().items()}
        datasets = three_aspect_datasets(texts_per_label=4)
        config = StageConfig("aspect_pretrain", 1e-3, 8, 0.1, "cosine", 1, 0.01,
                             seed=0)
        aspect_pretrain(model, [ex for d in datasets for ex in d.partition("train")],
                        config)
        changed = any(
            not np.array_equal(before[k], t.data)
            for k, t in model.parameters().items()
        )
        assert changed

    def test_single_aspect_corpus_rejected(self):
        model = tiny_model()
        d = tiny_dataset(texts_per_label=4)
        config = StageConfig("aspect_pretrain", 1e-3, 8, 0.1, "cosine", 1, 0.01,
                             seed=0)
        with pytest.raises(ValueError, match=">= 2 aspects"):
            aspect_pretrain(model, d.partition("train"), config)

    def test_autoregressive_pretrain_runs(self):
        model = tiny_model(mode="autoregressive", seed=4)
        datasets = three_aspect_datasets(texts_per_label=3)
        config = StageConfig("aspect_pretrain", 1e-3, 8, 0.1, "cosine", 1, 0.01,
                             seed=0)
        out = aspect_pretrain(model,
                              [ex for d in datasets for ex in d.partition("train")],
                              config)
        assert out.heads == {}

    def test_dedupe_by_text_keeps_first(self):
        a = Example("same text", ("joy",), "d", "sentiment", IN_DOMAIN, "train")
        b = Example("same text", ("x",), "d", "intent", IN_DOMAIN, "train")
        assert dedupe_by_text([a, b]) == [a]


class TestFinetune:
    def test_identical_seeds_identical_logs(self):
        datasets = three_aspect_datasets()
        logs = []
        for _ in range(2):
            model = tiny_model(seed=5)
            plan = TrainingPlan.default("vanilla", BINARY_PAIR, seed=9,
                                        finetune_overrides=fast_overrides(epochs=2))
            _, log = finetune(model, plan, datasets)
            logs.append([entry["loss"] for entry in log])
        assert logs[0] == logs[1]

    def test_loss_drops_on_small_fixture(self):
        # 16 instances must fall below 10% of the initial loss within 300 steps
        d = tiny_dataset(texts_per_label=4, labels=("joy", "anger"),
                         partition_mix=("train",))
        model = tiny_model(seed=6)
        plan = TrainingPlan.default(
            "vanilla", BINARY_PAIR, seed=1,
            finetune_overrides=dict(learning_rate=5e-3, batch_size=8, epochs=150,
                                    negatives_per_positive=1),
        )
        _, log = finetune(model, plan, [d])
        assert len(log) <= 300
        assert log[-1]["loss"] < 0.1 * log[0]["loss"]

    def test_log_schema(self):
        d = tiny_dataset(texts_per_label=2, partition_mix=("train",))
        model = tiny_model(seed=7)
        plan = TrainingPlan.default("vanilla", BINARY_PAIR, seed=0,
                                    finetune_overrides=fast_overrides(epochs=1))
        _, log = finetune(model, plan, [d])
        assert set(log[0]) >= {"stage", "step", "loss", "learning_rate"}
        assert [e["step"] for e in log] == list(range(len(log)))

    def test_mode_mismatch_rejected(self):
        model = tiny_model(mode="autoregressive")
        plan = TrainingPlan.default("vanilla", BINARY_PAIR, seed=0)
        with pytest.raises(ValueError, match="bidirectional"):
            finetune(model, plan, [tiny_dataset()])

    def test_empty_corpus_rejected(self):
        model = tiny_model()
        plan = TrainingPlan.default("vanilla", BINARY_PAIR, seed=0)
        with pytest.raises(ValueError, match="empty corpus"):
            finetune(model, plan, [])


class TestRunPlan:
    def test_all_strategies_reproducible_under_fixed_seeds(self):
        datasets = three_aspect_datasets(texts_per_label=3)
        for strategy in ("vanilla", "implicit", "explicit"):
            params = []
            for _ in range(2):
                plan = TrainingPlan.default(
                    strategy, BINARY_PAIR, seed=2,
                    pretrain_overrides=fast_overrides(epochs=1),
                    finetune_overrides=fast_overrides(epochs=1),
                )
                trained, _ = run_plan(plan, tiny_model(seed=12), datasets)
                params.append({k: t.data.copy()
                               for k, t in trained.parameters().items()})
            for name in params[0]:
                np.testing.assert_array_equal(params[0][name], params[1][name],
                                              err_msg=f"{strategy}:{name}")

    def test_vanilla_produces_one_checkpoint(self, tmp_path):
        datasets = three_aspect_datasets(texts_per_label=3)
        model = tiny_model(seed=8)
        plan = TrainingPlan.default("vanilla", BINARY_PAIR, seed=0,
                                    finetune_overrides=fast_overrides(epochs=1))
        _, artifacts = run_plan(plan, model, datasets, run_dir=tmp_path)
        assert len(artifacts["checkpoints"]) == 1
        assert (tmp_path / "checkpoints" / "0").is_dir()
        assert (tmp_path / "logs" / "training.jsonl").exists()

    def test_explicit_produces_two_checkpoints(self, tmp_path):
        datasets = three_aspect_datasets(texts_per_label=3)
        model = tiny_model(seed=9)
        plan = TrainingPlan.default(
            "explicit", BINARY_PAIR, seed=0,
            pretrain_overrides=fast_overrides(epochs=1),
            finetune_overrides=fast_overrides(epochs=1),
        )
        _, artifacts = run_plan(plan, model, datasets, run_dir=tmp_path)
        assert len(artifacts["checkpoints"]) == 2
        from aspectzero.encoder import load_checkpoint
        first = load_checkpoint(tmp_path / "checkpoints" / "0")
        second = load_checkpoint(tmp_path / "checkpoints" / "1")
        assert first.mode == second.mode
        assert "binary" in second.heads and "aspect" not in second.heads

    def test_explicit_equals_manual_stage_composition(self):
        datasets = three_aspect_datasets(texts_per_label=3)
        plan = TrainingPlan.default(
            "explicit", BINARY_PAIR, seed=4,
            pretrain_overrides=fast_overrides(epochs=1),
            finetune_overrides=fast_overrides(epochs=2),
        )
        via_plan, _ = run_plan(plan, tiny_model(seed=10), datasets)

        manual = tiny_model(seed=10)
        examples = [ex for d in datasets for ex in d.partition("train")]
        aspect_pretrain(manual, examples, plan.stages[0], stage_index=0)
        finetune(manual, plan, datasets, stage_index=1)

        for name, t in via_plan.parameters().items():
            np.testing.assert_array_equal(t.data, manual.parameters()[name].data,
                                          err_msg=name)
