"""Synthetic benchmark generation: arithmetic, the zero-shot condition,
controlled overlap levels, determinism, and learnability-by-construction."""

import numpy as np
import pytest

from aspectzero.corpus import IN_DOMAIN, DatasetSpec, label_overlap, scan_dataset
from aspectzero.encoder import ReferenceEncoder, encode, pool
from aspectzero.formalizations import seq_cls_predict
from aspectzero.strategies import TrainingPlan, finetune
from aspectzero.synthetic import (
    NOISE_WORDS,
    OVERLAP_TARGETS,
    WORD_BANKS,
    SyntheticSpec,
    SyntheticSpecError,
    generate,
    write_benchmark,
)
from aspectzero.tokenizer import HashTokenizer, START

SMALL = SyntheticSpec(labels_per_dataset=4, train_texts_per_label=6,
                      test_texts_per_label=2, out_test_texts_per_label=3)


def datasets_from(spec, seed, tmp_path):
    paths = write_benchmark(spec, seed, tmp_path)
    return [scan_dataset(p) for p in sorted(paths)]


class TestWordBanks:
    def test_globally_distinct_tokens(self):
        seen = set()
        for aspect, banks in WORD_BANKS.items():
            for words in banks.values():
                for w in words:
                    assert w not in seen, f"duplicate bank word {w!r}"
                    seen.add(w)
        assert seen.isdisjoint(NOISE_WORDS)


class TestGenerate:
    def test_example_count_arithmetic(self):
        # 3 aspects x 2 in-domain datasets x 4 labels x 25 texts
        spec = SyntheticSpec(labels_per_dataset=4, train_texts_per_label=25,
                             test_texts_per_label=2)
        data = generate(spec, seed=0)
        train_in = sum(
            1
            for records in data.values()
            for r in records
            if r["split"] == "in" and r["partition"] == "train"
        )
        assert train_in == 600

    def test_zero_shot_condition_no_label_string_reuse(self):
        data = generate(SMALL, seed=3)
        in_labels = set()
        out_labels = set()
        for records in data.values():
            for r in records:
                (in_labels if r["split"] == "in" else out_labels).update(r["labels"])
        assert in_labels.isdisjoint(out_labels)

    def test_texts_contain_their_label_tokens(self):
        data = generate(SMALL, seed=4)
        for records in data.values():
            for r in records:
                words = set(r["text"].split())
                for token in r["labels"][0].split():
                    assert token in words

    def test_texts_globally_unique(self):
        data = generate(SMALL, seed=5)
        texts = [r["text"] for records in data.values() for r in records]
        assert len(texts) == len(set(texts))

    def test_deterministic_given_seed(self):
        assert generate(SMALL, seed=9) == generate(SMALL, seed=9)
        assert generate(SMALL, seed=9) != generate(SMALL, seed=10)

    def test_per_aspect_size_override(self):
        spec = SyntheticSpec(per_aspect_train_texts={"sentiment": 9, "intent": 7,
                                                     "topic": 5})
        data = generate(spec, seed=1)
        for aspect, expected in (("sentiment", 9), ("intent", 7), ("topic", 5)):
            count = sum(1 for r in data[f"{aspect}_in_0"]
                        if r["partition"] == "train")
            assert count == expected * spec.labels_per_dataset

    def test_infeasible_spec_rejected(self):
        with pytest.raises(SyntheticSpecError, match="label tokens"):
            generate(SyntheticSpec(labels_per_dataset=12), seed=0)
        with pytest.raises(SyntheticSpecError, match="at least 3 aspects"):
            SyntheticSpec(aspects=("sentiment", "intent"))


class TestOverlapLevels:
    def test_realized_overlap_matches_targets_and_orders(self, tmp_path):
        datasets = datasets_from(SyntheticSpec(), 11, tmp_path)
        in_specs = [d.spec for d in datasets if d.spec.split == IN_DOMAIN]
        union = tuple(dict.fromkeys(
            label for s in in_specs for label in s.label_vocabulary
        ))
        union_spec = DatasetSpec("in_union", "topic", IN_DOMAIN, union)
        realized = {}
        for d in datasets:
            if d.spec.split != IN_DOMAIN:
                realized[d.spec.dataset_id] = label_overlap(union_spec, d.spec)
        # default level assignment: sentiment=high, intent=medium, topic=low
        high = realized["sentiment_out_0"]
        medium = realized["intent_out_0"]
        low = realized["topic_out_0"]
        assert high > medium > low
        assert abs(high - OVERLAP_TARGETS["high"]) <= 10
        assert abs(medium - OVERLAP_TARGETS["medium"]) <= 10
        assert abs(low - OVERLAP_TARGETS["low"]) <= 10


class TestLearnability:
    def test_supervised_baseline_reaches_090_on_one_dataset(self, tmp_path):
        # the fixture is learnable by construction: a reference encoder with
        # a fixed softmax head fits one synthetic dataset
        spec = SyntheticSpec(labels_per_dataset=4, train_texts_per_label=12,
                             test_texts_per_label=6)
        datasets = datasets_from(spec, 21, tmp_path)
        d = next(x for x in datasets if x.spec.dataset_id == "sentiment_in_0")
        tok = HashTokenizer(n_buckets=256, aspects=("sentiment", "intent", "topic"))
        model = ReferenceEncoder(tok, hidden_width=32, n_heads=4,
                                 max_sequence_length=48, seed=0)
        plan = TrainingPlan.default(
            "vanilla", "sequence_cls", seed=0,
            finetune_overrides=dict(learning_rate=5e-3, batch_size=16, epochs=30),
        )
        finetune(model, plan, [d])
        labels = model.head_labels["seq_cls"]
        correct = 0
        test = d.partition("test")
        for ex in test:
            idx, _ = seq_cls_predict(model, ex.text)
            correct += int(labels[idx] == ex.gold_labels[0])
        assert correct / len(test) >= 0.9

    def test_aspect_probe_on_untrained_features(self, tmp_path):
        # linear probe over pooled untrained-encoder features separates the
        # aspects: the marker + keyword signal is strong by construction
        spec = SyntheticSpec(labels_per_dataset=4, train_texts_per_label=10,
                             test_texts_per_label=5)
        datasets = datasets_from(spec, 31, tmp_path)
        in_datasets = [d for d in datasets if d.spec.split == IN_DOMAIN]
        aspects = sorted({d.spec.aspect for d in in_datasets})
        tok = HashTokenizer(n_buckets=256, aspects=tuple(aspects))
        model = ReferenceEncoder(tok, hidden_width=32, n_heads=4,
                                 max_sequence_length=48, seed=7)

        def features(examples):
            rows = []
            targets = []
            for ex in examples:
                ids = [START] + tok.encode(ex.text)[:47]
                states = encode(model, ids)
                rows.append(pool(states, [True] * len(ids), "mean").values)
                targets.append(aspects.index(ex.aspect))
            return np.array(rows), np.array(targets)

        train = [ex for d in in_datasets for ex in d.partition("train")]
        test = [ex for d in in_datasets for ex in d.partition("test")]
        x_train, y_train = features(train)
        x_test, y_test = features(test)
        # ridge probe against one-hot targets
        onehot = np.eye(len(aspects))[y_train]
        x_aug = np.hstack([x_train, np.ones((len(x_train), 1))])
        w = np.linalg.solve(
            x_aug.T @ x_aug + 1e-3 * np.eye(x_aug.shape[1]), x_aug.T @ onehot
        )
        x_test_aug = np.hstack([x_test, np.ones((len(x_test), 1))])
        predictions = np.argmax(x_test_aug @ w, axis=1)
        assert (predictions == y_test).mean() >= 0.8
