"""Deterministic synthetic benchmark generation.

Builds small aspect-separable datasets in the corpus JSONL format.  Every
text consists of its label's tokens, one aspect-marker token, and neutral
noise tokens, so a text lexically contains its own label: the signal a
zero-shot scorer can generalize from.

Within an aspect, all in-domain datasets draw their label phrases from one
shared token pool, recombined differently per dataset.  That makes the
token-level "label appears in the text" rule the only signal consistent
across datasets, while whole-phrase memorization does not transfer; it
mirrors multi-dataset joint training and is what lets trained models rank
unseen recombined labels.

Out-of-domain datasets get label vocabularies that are string-disjoint from
every in-domain vocabulary (the zero-shot condition) while reusing a
controlled fraction of in-domain label tokens, which sets the realized
label-token overlap level (high / medium / low).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .tokenizer import DEFAULT_ASPECTS

OVERLAP_TARGETS = {"high": 80.0, "medium": 50.0, "low": 20.0}

# One bank per aspect: label words feed in-domain label phrases, fresh words
# feed the novel part of out-of-domain phrases, markers appear once in every
# text of the aspect.
WORD_BANKS: dict[str, dict[str, tuple[str, ...]]] = {
    "sentiment": {
        "label_words": (
            "happy", "sad", "angry", "joyful", "fear", "love", "hate", "calm",
            "upbeat", "gloomy", "rage", "delight", "sorrow", "dread", "cheerful",
            "bitter", "serene", "glee", "misery", "fury",
        ),
        "fresh_words": (
            "thrilled", "uneasy", "weary", "hopeful", "crushed", "elated",
            "grim", "jolly", "tearful", "giddy",
        ),
        "markers": ("mood", "feelings", "vibe"),
    },
    "intent": {
        "label_words": (
            "check", "balance", "book", "flight", "cancel", "order", "play",
            "music", "set", "alarm", "transfer", "funds", "track", "package",
            "renew", "subscription", "find", "recipe", "pay", "bill",
        ),
        "fresh_words": (
            "schedule", "meeting", "mute", "speaker", "locate", "store",
            "convert", "currency", "compose", "email",
        ),
        "markers": ("command", "query", "task"),
    },
    "topic": {
        "label_words": (
            "world", "news", "sports", "games", "business", "markets",
            "science", "research", "health", "medicine", "travel", "tourism",
            "politics", "election", "culture", "cinema", "education", "school",
            "technology", "software",
        ),
        "fresh_words": (
            "finance", "banking", "climate", "energy", "space", "astronomy",
            "law", "courts", "food", "cooking",
        ),
        "markers": ("subject", "theme", "section"),
    },
}

NOISE_WORDS = (
    "about", "with", "from", "into", "over", "under", "after", "before",
    "during", "while", "very", "quite", "rather", "just", "still", "also",
    "then", "than", "some", "many", "few", "each", "both", "more",
)

# intent-style multi-word labels are part of the point; cycle short and long
_LABEL_LENGTHS = (2, 1, 2, 3)


class SyntheticSpecError(ValueError):
    """The requested benchmark cannot be built from the word banks."""


@dataclass(frozen=True)
class SyntheticSpec:
    aspects: tuple[str, ...] = DEFAULT_ASPECTS
    in_datasets_per_aspect: int = 2
    out_datasets_per_aspect: int = 1
    labels_per_dataset: int = 8
    out_labels_per_dataset: int = 4
    train_texts_per_label: int = 15
    test_texts_per_label: int = 5
    out_train_texts_per_label: int = 2
    out_test_texts_per_label: int = 12
    noise_words_per_text: int = 3
    per_aspect_train_texts: dict[str, int] | None = None
    # cycled over (aspect, out-dataset) pairs in order
    overlap_levels: tuple[str, ...] = ("high", "medium", "low")

    def __post_init__(self):
        if len(self.aspects) < 3:
            raise SyntheticSpecError("need at least 3 aspects")
        for aspect in self.aspects:
            if aspect not in WORD_BANKS:
                raise SyntheticSpecError(f"no word bank for aspect {aspect!r}")
        for level in self.overlap_levels:
            if level not in OVERLAP_TARGETS:
                raise SyntheticSpecError(f"unknown overlap level {level!r}")
        if self.noise_words_per_text > len(NOISE_WORDS):
            raise SyntheticSpecError("not enough noise words")

    def train_texts_for(self, aspect: str) -> int:
        if self.per_aspect_train_texts and aspect in self.per_aspect_train_texts:
            return self.per_aspect_train_texts[aspect]
        return self.train_texts_per_label

    @property
    def label_lengths(self) -> tuple[int, ...]:
        return tuple(
            _LABEL_LENGTHS[i % len(_LABEL_LENGTHS)]
            for i in range(self.labels_per_dataset)
        )


def _aspect_pool(aspect: str, n_tokens: int) -> list[str]:
    bank = WORD_BANKS[aspect]["label_words"]
    if n_tokens > len(bank):
        raise SyntheticSpecError(
            f"{aspect}: need {n_tokens} label tokens, bank has {len(bank)}"
        )
    return list(bank[:n_tokens])


def _slice_phrases(pool: list[str], lengths: tuple[int, ...]) -> list[tuple[str, ...]]:
    phrases = []
    cursor = 0
    for length in lengths:
        phrases.append(tuple(pool[cursor : cursor + length]))
        cursor += length
    return phrases


def _in_domain_vocabularies(
    spec: SyntheticSpec, pool: list[str], rng: np.random.Generator
) -> list[list[tuple[str, ...]]]:
    """One label list per in-domain dataset, all recombinations of `pool`."""
    lengths = spec.label_lengths
    vocabularies = []
    used_phrases: set[str] = set()
    for d in range(spec.in_datasets_per_aspect):
        for _attempt in range(1000):
            if d == 0:
                arrangement = list(pool)
            else:
                arrangement = [pool[i] for i in rng.permutation(len(pool))]
            phrases = _slice_phrases(arrangement, lengths)
            if all(" ".join(p) not in used_phrases for p in phrases):
                break
        else:
            raise SyntheticSpecError("could not find a fresh label recombination")
        used_phrases.update(" ".join(p) for p in phrases)
        vocabularies.append(phrases)
    return vocabularies


def _out_domain_vocabulary(
    spec: SyntheticSpec,
    aspect: str,
    level: str,
    pool: list[str],
    in_domain_phrases: set[str],
    rng: np.random.Generator,
) -> list[tuple[str, ...]]:
    """Two-token phrases reusing round(target * total) in-domain tokens."""
    total = 2 * spec.out_labels_per_dataset
    n_reuse = int(round(OVERLAP_TARGETS[level] / 100.0 * total))
    if n_reuse > len(pool):
        raise SyntheticSpecError(
            f"{aspect}: overlap target {level} needs {n_reuse} reusable tokens, "
            f"only {len(pool)} exist"
        )
    fresh_bank = WORD_BANKS[aspect]["fresh_words"]
    if total - n_reuse > len(fresh_bank):
        raise SyntheticSpecError(
            f"{aspect}: overlap target {level} needs {total - n_reuse} fresh "
            f"tokens, bank has {len(fresh_bank)}"
        )
    reused = [pool[i] for i in sorted(rng.choice(len(pool), size=n_reuse, replace=False))]
    tokens = reused + list(fresh_bank[: total - n_reuse])
    for _attempt in range(1000):
        order = rng.permutation(len(tokens))
        phrases = [
            (tokens[order[2 * k]], tokens[order[2 * k + 1]])
            for k in range(spec.out_labels_per_dataset)
        ]
        if all(" ".join(p) not in in_domain_phrases for p in phrases):
            return phrases
    raise SyntheticSpecError(f"{aspect}: could not avoid in-domain label collisions")


def _compose_text(
    tokens: tuple[str, ...],
    markers: tuple[str, ...],
    n_noise: int,
    rng: np.random.Generator,
) -> str:
    # label tokens appear twice: keyword repetition keeps the text-label
    # match signal above the noise floor even for never-trained tokens
    words = list(tokens) + list(tokens)
    words.append(markers[int(rng.integers(len(markers)))])
    noise_idx = rng.choice(len(NOISE_WORDS), size=n_noise, replace=False)
    words.extend(NOISE_WORDS[i] for i in noise_idx)
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def _dataset_records(
    dataset_id: str,
    aspect: str,
    split_wire: str,
    labels: list[tuple[str, ...]],
    markers: tuple[str, ...],
    n_train: int,
    n_test: int,
    n_noise: int,
    rng: np.random.Generator,
    seen_texts: set[str],
) -> list[dict]:
    records = []
    for partition, count in (("train", n_train), ("test", n_test)):
        for tokens in labels:
            phrase = " ".join(tokens)
            for _ in range(count):
                for _attempt in range(1000):
                    text = _compose_text(tokens, markers, n_noise, rng)
                    if text not in seen_texts:
                        break
                else:
                    raise SyntheticSpecError(
                        f"{dataset_id}: could not generate enough distinct texts"
                    )
                seen_texts.add(text)
                records.append(
                    {
                        "text": text,
                        "labels": [phrase],
                        "dataset": dataset_id,
                        "aspect": aspect,
                        "split": split_wire,
                        "partition": partition,
                    }
                )
    return records


def generate(spec: SyntheticSpec, seed: int) -> dict[str, list[dict]]:
    """Raw JSONL-ready records for every dataset, keyed by dataset id.

    Deterministic given `seed`.  In-domain label vocabularies never share a
    label string with out-of-domain ones; overlap levels control token
    reuse.
    """
    rng = np.random.default_rng(seed)
    datasets: dict[str, list[dict]] = {}
    seen_texts: set[str] = set()
    level_cursor = 0
    for aspect in spec.aspects:
        markers = WORD_BANKS[aspect]["markers"]
        pool = _aspect_pool(aspect, sum(spec.label_lengths))
        vocabularies = _in_domain_vocabularies(spec, pool, rng)
        aspect_phrases = {
            " ".join(p) for phrases in vocabularies for p in phrases
        }
        n_train = spec.train_texts_for(aspect)
        for d, labels in enumerate(vocabularies):
            dataset_id = f"{aspect}_in_{d}"
            datasets[dataset_id] = _dataset_records(
                dataset_id, aspect, "in", labels, markers,
                n_train, spec.test_texts_per_label, spec.noise_words_per_text,
                rng, seen_texts,
            )
        for d in range(spec.out_datasets_per_aspect):
            level = spec.overlap_levels[level_cursor % len(spec.overlap_levels)]
            level_cursor += 1
            labels = _out_domain_vocabulary(
                spec, aspect, level, pool, aspect_phrases, rng
            )
            dataset_id = f"{aspect}_out_{d}"
            datasets[dataset_id] = _dataset_records(
                dataset_id, aspect, "out", labels, markers,
                spec.out_train_texts_per_label, spec.out_test_texts_per_label,
                spec.noise_words_per_text, rng, seen_texts,
            )
    return datasets


def write_benchmark(spec: SyntheticSpec, seed: int, out_dir) -> list[str]:
    """Write one JSONL file per dataset; returns the file paths."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for dataset_id, records in generate(spec, seed).items():
        path = os.path.join(out_dir, f"{dataset_id}.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        paths.append(path)
    return paths
