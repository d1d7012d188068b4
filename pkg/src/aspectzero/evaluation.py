"""Evaluation protocol: any-match accuracy over test partitions, the
generated-answer fallback mapping, and aggregate reporting.

A prediction is correct when it matches any gold label after
canonicalization (case-fold, trim, collapse whitespace).  Generative
predictions that don't exactly match a candidate are mapped to the most
similar candidate in an embedding space; the embedder is pluggable and
defaults to a deterministic bag-of-token reference.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import formalizations as fz
from .corpus import Dataset
from .encoder import BagOfTokenEmbedder, encode, pool
from .formalizations import canonical_label

EMPTY_GENERATION_PLACEHOLDER = "unknown"

ASPECT_POLICIES = ("none", "dataset")


@dataclass
class MetricsRecord:
    """Per-dataset accuracy with run provenance."""

    run_id: str
    dataset_id: str
    aspect: str
    split: str
    n_correct: int
    n_examples: int
    predictions: list[dict] | None = None

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_examples

    def to_dict(self) -> dict:
        payload = {
            "run_id": self.run_id,
            "dataset_id": self.dataset_id,
            "aspect": self.aspect,
            "split": self.split,
            "n_correct": self.n_correct,
            "n_examples": self.n_examples,
            "accuracy": self.accuracy,
        }
        if self.predictions is not None:
            payload["predictions"] = self.predictions
        return payload


def is_correct(prediction: str, gold) -> bool:
    """True iff the prediction matches any gold label after canonicalization."""
    gold = tuple(gold)
    if not gold:
        raise ValueError("gold label set must be non-empty")
    canon = canonical_label(prediction)
    return any(canon == canonical_label(g) for g in gold)


def _embed(embedder, text: str) -> np.ndarray:
    tokens = embedder.tokenizer.encode(text)
    states = encode(embedder, tokens)
    return pool(states, np.ones(len(tokens), dtype=bool), "mean").values


def map_generated_to_label(generated: str, candidates, embedder=None) -> str:
    """Resolve a free-form generation to a candidate label.

    Exact canonical matches return immediately without consulting the
    embedder; otherwise the candidate with the highest cosine similarity to
    the generation wins (ties to the lowest index).  Empty generations are
    embedded as a fixed placeholder.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list is empty")
    canon = canonical_label(generated)
    for candidate in candidates:
        if canon == canonical_label(candidate):
            return candidate
    if len(candidates) == 1:
        return candidates[0]
    if embedder is None:
        embedder = BagOfTokenEmbedder()
    query = canon if canon else EMPTY_GENERATION_PLACEHOLDER
    query_vec = _embed(embedder, query)
    scores = [
        fz.cosine(query_vec, _embed(embedder, candidate)) for candidate in candidates
    ]
    return candidates[int(np.argmax(scores))]


def predict_one(model, formalization: str, text: str, candidates,
                aspect: str | None, embedder=None,
                template_pack=None) -> str:
    """One label prediction under the given formalization."""
    if formalization == fz.BINARY_PAIR:
        return fz.binary_predict(model, text, candidates, aspect)
    if formalization == fz.DUAL_PAIR:
        return fz.dual_predict(model, text, candidates, aspect)
    if formalization == fz.GENERATIVE_PROMPT:
        prompt = fz.build_generative_prompt(
            model.tokenizer, text, candidates, aspect=aspect,
            template_pack=template_pack,
            max_sequence_length=model.max_sequence_length,
        )
        budget = max(len(model.tokenizer.encode(c)) for c in candidates) + 1
        generated = fz.generative_predict(model, prompt, max_new_tokens=budget)
        return map_generated_to_label(generated, candidates, embedder)
    if formalization == fz.SEQUENCE_CLS:
        index, _ = fz.seq_cls_predict(model, text)
        return model.head_labels["seq_cls"][index]
    raise ValueError(f"unknown formalization {formalization!r}")


def evaluate(model, formalization: str, dataset: Dataset,
             aspect_policy: str = "none", run_id: str = "",
             fallback_embedder=None, dump_predictions: bool = False) -> MetricsRecord:
    """Accuracy of `model` on the dataset's test partition.

    Candidates are always the dataset's own label vocabulary.  With
    aspect_policy="dataset" the dataset's known aspect is passed to the
    predictor (used for implicitly trained models).
    """
    if aspect_policy not in ASPECT_POLICIES:
        raise ValueError(f"unknown aspect policy {aspect_policy!r}")
    test = dataset.partition("test")
    if not test:
        raise ValueError(f"{dataset.spec.dataset_id} has no test examples")
    candidates = list(dataset.spec.label_vocabulary)
    aspect = dataset.spec.aspect if aspect_policy == "dataset" else None
    embedder = fallback_embedder
    if formalization == fz.GENERATIVE_PROMPT and embedder is None:
        embedder = BagOfTokenEmbedder()
    template_pack = fz.load_template_pack() \
        if formalization == fz.GENERATIVE_PROMPT else None
    n_correct = 0
    dump: list[dict] | None = [] if dump_predictions else None
    for ex in test:
        prediction = predict_one(
            model, formalization, ex.text, candidates, aspect,
            embedder=embedder, template_pack=template_pack,
        )
        correct = is_correct(prediction, ex.gold_labels)
        n_correct += int(correct)
        if dump is not None:
            dump.append(
                {
                    "text_hash": hashlib.sha256(ex.text.encode("utf-8")).hexdigest()[:16],
                    "gold": list(ex.gold_labels),
                    "prediction": prediction,
                    "correct": correct,
                }
            )
    return MetricsRecord(
        run_id=run_id,
        dataset_id=dataset.spec.dataset_id,
        aspect=dataset.spec.aspect,
        split=dataset.spec.split,
        n_correct=n_correct,
        n_examples=len(test),
        predictions=dump,
    )


# -- aggregation -----------------------------------------------------------------


def aggregate(records: list[MetricsRecord], run_id: str | None = None) -> dict:
    """Per-aspect means and the overall unweighted mean over datasets."""
    if not records:
        raise ValueError("no records to aggregate")
    aspects: dict[str, list[float]] = {}
    for record in records:
        aspects.setdefault(record.aspect, []).append(record.accuracy)
    # fsum keeps the means exactly permutation-invariant
    aspect_means = {
        aspect: math.fsum(values) / len(values)
        for aspect, values in sorted(aspects.items())
    }
    average = math.fsum(r.accuracy for r in records) / len(records)
    return {
        "run_id": run_id if run_id is not None else records[0].run_id,
        "records": [r.to_dict() for r in records],
        "aspect_means": aspect_means,
        "average": average,
    }


def render_report(report: dict) -> str:
    """Plain-text table for an aggregate report."""
    rows = report["records"]
    id_width = max(len("dataset"), max(len(r["dataset_id"]) for r in rows))
    aspect_width = max(len("aspect"), max(len(r["aspect"]) for r in rows))
    lines = [
        f"{'dataset'.ljust(id_width)}  {'aspect'.ljust(aspect_width)}  "
        f"{'split':<13}  {'accuracy':>8}  {'n':>6}"
    ]
    for r in rows:
        lines.append(
            f"{r['dataset_id'].ljust(id_width)}  {r['aspect'].ljust(aspect_width)}  "
            f"{r['split']:<13}  {100 * r['accuracy']:>8.1f}  {r['n_examples']:>6}"
        )
    for aspect, mean in report["aspect_means"].items():
        lines.append(f"{aspect} mean: {100 * mean:.1f}")
    lines.append(f"average: {100 * report['average']:.1f}")
    return "\n".join(lines) + "\n"


def write_metrics(report: dict, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_predictions_csv(record: MetricsRecord, path: str | os.PathLike) -> None:
    if record.predictions is None:
        raise ValueError("record carries no prediction dump")
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text_hash", "gold", "prediction", "correct"])
        for row in record.predictions:
            writer.writerow(
                [row["text_hash"], "|".join(row["gold"]), row["prediction"],
                 str(row["correct"]).lower()]
            )
