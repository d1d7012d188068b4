"""Dataset ingestion, label standardization, aspect normalization, and
label-token overlap diagnostics.

The on-disk interchange format is JSONL, one record per line:

    {"text": ..., "labels": [...], "dataset": ..., "aspect": ...,
     "split": "in"|"out", "partition": "train"|"test"}

Labels must be natural-language text: a label with no alphabetic character
(e.g. a bare class index) is rejected at ingestion.  All operations here are
pure given their inputs and seed.
"""

from __future__ import annotations

import json
import os
import re
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

IN_DOMAIN = "in_domain"
OUT_OF_DOMAIN = "out_of_domain"
SPLITS = (IN_DOMAIN, OUT_OF_DOMAIN)
PARTITIONS = ("train", "test")

_SPLIT_WIRE = {IN_DOMAIN: "in", OUT_OF_DOMAIN: "out"}
_SPLIT_FROM_WIRE = {v: k for k, v in _SPLIT_WIRE.items()}

_TOKEN_SPLIT_RE = re.compile(r"[^a-z0-9]+")
_ALPHA_RE = re.compile(r"[^\W\d_]")


class CorpusError(ValueError):
    """Raised on malformed records, vocabulary violations, or infeasible
    normalization targets."""


@dataclass(frozen=True)
class Example:
    """One text with its gold label set and provenance."""

    text: str
    gold_labels: tuple[str, ...]
    dataset_id: str
    aspect: str
    split: str
    partition: str

    def __post_init__(self):
        if not self.text:
            raise CorpusError("example text must be non-empty")
        if not self.gold_labels:
            raise CorpusError("gold_labels must be non-empty")
        for label in self.gold_labels:
            if not label.strip():
                raise CorpusError("gold label is empty after trimming")
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")
        if self.partition not in PARTITIONS:
            raise CorpusError(f"unknown partition {self.partition!r}")


@dataclass
class DatasetSpec:
    """A named dataset's label vocabulary and ingestion metadata.

    `counts`, when set, declares (train, test) example counts that ingestion
    must match exactly.  Textual-label validation happens where records
    enter the system (load/scan) and on standardization targets, so a spec
    for a raw, not-yet-standardized dataset may still carry labels like
    "+1" on its way into standardize_labels.
    """

    dataset_id: str
    aspect: str
    split: str
    label_vocabulary: tuple[str, ...]
    counts: tuple[int, int] | None = None

    def __post_init__(self):
        self.label_vocabulary = tuple(self.label_vocabulary)
        if not self.label_vocabulary:
            raise CorpusError(f"{self.dataset_id}: label vocabulary is empty")
        seen = set()
        for label in self.label_vocabulary:
            key = label.strip().casefold()
            if not key:
                raise CorpusError(f"{self.dataset_id}: blank label")
            if key in seen:
                raise CorpusError(f"{self.dataset_id}: duplicate label {label!r}")
            seen.add(key)
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")


@dataclass
class Dataset:
    spec: DatasetSpec
    examples: list[Example]

    def partition(self, name: str) -> list[Example]:
        return [ex for ex in self.examples if ex.partition == name]


@dataclass
class AspectCorpus:
    aspect: str
    datasets: list[Dataset] = field(default_factory=list)

    @property
    def unique_text_count(self) -> int:
        """Distinct train-partition text strings across member datasets."""
        return len({ex.text for d in self.datasets for ex in d.partition("train")})


def is_textual_label(label: str) -> bool:
    return bool(_ALPHA_RE.search(label))


# -- JSONL ingestion --------------------------------------------------------------


def _example_from_record(record: dict, line_no: int, path: str) -> Example:
    where = f"{path}:{line_no}"
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: record is not a JSON object")
    for key in ("text", "labels", "dataset", "aspect", "split", "partition"):
        if key not in record:
            raise CorpusError(f"{where}: missing field {key!r}")
    text = record["text"]
    labels = record["labels"]
    if not isinstance(text, str) or not text:
        raise CorpusError(f"{where}: empty text")
    if not isinstance(labels, list) or not labels:
        raise CorpusError(f"{where}: labels must be a non-empty list")
    split = _SPLIT_FROM_WIRE.get(record["split"])
    if split is None:
        raise CorpusError(f"{where}: split must be 'in' or 'out'")
    deduped = tuple(dict.fromkeys(labels))
    try:
        return Example(
            text=text,
            gold_labels=deduped,
            dataset_id=record["dataset"],
            aspect=record["aspect"],
            split=split,
            partition=record["partition"],
        )
    except CorpusError as err:
        raise CorpusError(f"{where}: {err}") from None


def load_dataset(path: str | os.PathLike, spec: DatasetSpec) -> list[Example]:
    """Load a JSONL dataset, validating every record against `spec`.

    Record order is preserved.  Errors carry the offending line number.
    """
    path = os.fspath(path)
    for label in spec.label_vocabulary:
        if not is_textual_label(label):
            raise CorpusError(
                f"{spec.dataset_id}: non-textual label {label!r} in the declared "
                "vocabulary (labels must contain at least one alphabetic character)"
            )
    vocab = set(spec.label_vocabulary)
    examples: list[Example] = []
    tallies = {"train": 0, "test": 0}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{path}:{line_no}: malformed JSON ({err.msg})") from None
            example = _example_from_record(record, line_no, path)
            if example.dataset_id != spec.dataset_id:
                raise CorpusError(
                    f"{path}:{line_no}: dataset {example.dataset_id!r} "
                    f"does not match spec {spec.dataset_id!r}"
                )
            if example.aspect != spec.aspect or example.split != spec.split:
                raise CorpusError(
                    f"{path}:{line_no}: aspect/split does not match the dataset spec"
                )
            for label in example.gold_labels:
                if not is_textual_label(label):
                    raise CorpusError(f"{path}:{line_no}: non-textual label {label!r}")
                if label not in vocab:
                    raise CorpusError(
                        f"{path}:{line_no}: label {label!r} not in the "
                        f"{spec.dataset_id} vocabulary"
                    )
            tallies[example.partition] += 1
            examples.append(example)
    if spec.counts is not None:
        declared = tuple(spec.counts)
        actual = (tallies["train"], tallies["test"])
        if declared != actual:
            raise CorpusError(
                f"{path}: count mismatch for {spec.dataset_id}: declared "
                f"train/test {declared[0]}/{declared[1]}, found {actual[0]}/{actual[1]}"
            )
    return examples


def scan_dataset(path: str | os.PathLike) -> Dataset:
    """Ingest a JSONL file, deriving its DatasetSpec from the records.

    The vocabulary is the labels in first-appearance order; counts are the
    observed tallies.
    """
    path = os.fspath(path)
    examples: list[Example] = []
    vocab: dict[str, None] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{path}:{line_no}: malformed JSON ({err.msg})") from None
            example = _example_from_record(record, line_no, path)
            if examples and (
                example.dataset_id != examples[0].dataset_id
                or example.aspect != examples[0].aspect
                or example.split != examples[0].split
            ):
                raise CorpusError(
                    f"{path}:{line_no}: mixed dataset/aspect/split within one file"
                )
            for label in example.gold_labels:
                if not is_textual_label(label):
                    raise CorpusError(f"{path}:{line_no}: non-textual label {label!r}")
                vocab.setdefault(label)
            examples.append(example)
    if not examples:
        raise CorpusError(f"{path}: no records")
    first = examples[0]
    n_train = sum(1 for ex in examples if ex.partition == "train")
    spec = DatasetSpec(
        dataset_id=first.dataset_id,
        aspect=first.aspect,
        split=first.split,
        label_vocabulary=tuple(vocab),
        counts=(n_train, len(examples) - n_train),
    )
    return Dataset(spec, examples)


# -- label standardization ----------------------------------------------------------


def standardize_labels(
    dataset: Dataset,
    mapping: dict[str, str],
    allow_merges: bool = False,
) -> Dataset:
    """Rewrite every label through `mapping`.

    The mapping must cover the whole vocabulary and map to textual labels.
    Two source labels may map to one target only when `allow_merges` is set;
    the merged label owns the union of both example sets.
    """
    spec = dataset.spec
    for label in spec.label_vocabulary:
        if label not in mapping:
            raise CorpusError(f"{spec.dataset_id}: unmapped label {label!r}")
    targets: dict[str, list[str]] = {}
    for source in spec.label_vocabulary:
        target = mapping[source]
        if not is_textual_label(target):
            raise CorpusError(f"{spec.dataset_id}: non-textual target label {target!r}")
        targets.setdefault(target, []).append(source)
    if not allow_merges:
        for target, sources in targets.items():
            if len(sources) > 1:
                raise CorpusError(
                    f"{spec.dataset_id}: labels {sources} all map to {target!r}; "
                    "pass allow_merges=True to merge them"
                )
    new_vocab = tuple(dict.fromkeys(mapping[label] for label in spec.label_vocabulary))
    new_spec = replace(spec, label_vocabulary=new_vocab)
    new_examples = [
        replace(ex, gold_labels=tuple(dict.fromkeys(mapping[g] for g in ex.gold_labels)))
        for ex in dataset.examples
    ]
    return Dataset(new_spec, new_examples)


# -- aspect normalization ------------------------------------------------------------


def _largest_remainder(weights: list[float], total: int) -> list[int]:
    """Integer allocation of `total` proportional to `weights` (sum preserved)."""
    scale = total / sum(weights)
    raw = [w * scale for w in weights]
    floors = [int(np.floor(r)) for r in raw]
    shortfall = total - sum(floors)
    remainders = sorted(
        range(len(raw)), key=lambda i: (raw[i] - floors[i], weights[i]), reverse=True
    )
    for i in remainders[:shortfall]:
        floors[i] += 1
    return floors


def _stratified_keep(
    dataset: Dataset, quota: int, rng: np.random.Generator
) -> list[Example]:
    """Keep `quota` train examples, preserving per-label proportions.

    Examples are stratified by their first gold label; largest-remainder
    rounding; every class keeps at least one example (reported when that
    forces a bump).
    """
    train = dataset.partition("train")
    groups: dict[str, list[int]] = {}
    order = {label: i for i, label in enumerate(dataset.spec.label_vocabulary)}
    for idx, ex in enumerate(train):
        groups.setdefault(ex.gold_labels[0], []).append(idx)
    labels = sorted(groups, key=lambda lbl: order.get(lbl, len(order)))
    if quota < len(labels):
        raise CorpusError(
            f"{dataset.spec.dataset_id}: quota {quota} cannot keep one example "
            f"per class ({len(labels)} classes)"
        )
    sizes = [len(groups[lbl]) for lbl in labels]
    keeps = _largest_remainder([float(s) for s in sizes], quota)
    bumped = [lbl for lbl, k in zip(labels, keeps) if k == 0]
    if bumped:
        warnings.warn(
            f"{dataset.spec.dataset_id}: classes {bumped} would round to zero "
            "examples; keeping one of each",
            stacklevel=3,
        )
        for i, k in enumerate(keeps):
            if k == 0:
                keeps[i] = 1
        overflow = sum(keeps) - quota
        for i in sorted(range(len(keeps)), key=lambda j: keeps[j], reverse=True):
            if overflow == 0:
                break
            give = min(overflow, keeps[i] - 1)
            keeps[i] -= give
            overflow -= give
    kept_indices: list[int] = []
    for lbl, k in zip(labels, keeps):
        pool = groups[lbl]
        if k >= len(pool):
            kept_indices.extend(pool)
        else:
            chosen = rng.choice(len(pool), size=k, replace=False)
            kept_indices.extend(pool[i] for i in sorted(chosen))
    kept_indices.sort()
    return [train[i] for i in kept_indices]


def aspect_normalize(
    corpora: list[AspectCorpus], seed: int
) -> list[AspectCorpus]:
    """Subsample every corpus's train partitions to the smallest corpus's
    unique-text count, preserving per-dataset label distributions.

    Test partitions are untouched.  Deterministic given `seed`.
    """
    if len(corpora) < 2:
        raise CorpusError("aspect normalization needs at least two corpora")
    for corpus in corpora:
        for d in corpus.datasets:
            if d.spec.split != IN_DOMAIN:
                raise CorpusError(
                    f"{d.spec.dataset_id} is not in_domain; only in-domain "
                    "corpora are normalized"
                )
    counts = [c.unique_text_count for c in corpora]
    target = min(counts)
    if any(c == 0 for c in counts):
        raise CorpusError("a corpus has no train texts")
    rng = np.random.default_rng(seed)
    out: list[AspectCorpus] = []
    for corpus, count in zip(corpora, counts):
        if count == target:
            out.append(corpus)
            continue
        sizes = []
        for d in corpus.datasets:
            train = d.partition("train")
            n_distinct = len({ex.text for ex in train})
            if n_distinct != len(train):
                raise CorpusError(
                    f"{d.spec.dataset_id}: duplicate train texts prevent exact "
                    "unique-text normalization"
                )
            sizes.append(n_distinct)
        if sum(sizes) != count:
            raise CorpusError(
                f"aspect {corpus.aspect}: texts shared across datasets prevent "
                "exact unique-text normalization"
            )
        quotas = _largest_remainder([float(s) for s in sizes], target)
        datasets = []
        for d, quota, size in zip(corpus.datasets, quotas, sizes):
            if quota == size:
                datasets.append(d)
                continue
            kept = _stratified_keep(d, quota, rng)
            examples = kept + d.partition("test")
            spec = replace(d.spec, counts=(len(kept), len(d.partition("test"))))
            datasets.append(Dataset(spec, examples))
        out.append(AspectCorpus(corpus.aspect, datasets))
    return out


# -- label-token overlap ----------------------------------------------------------------


def label_tokens(vocabulary) -> frozenset[str]:
    """Case-folded alphanumeric tokens drawn from a label vocabulary."""
    tokens: set[str] = set()
    for label in vocabulary:
        tokens.update(t for t in _TOKEN_SPLIT_RE.split(label.casefold()) if t)
    return frozenset(tokens)


def label_overlap(in_spec: DatasetSpec, out_spec: DatasetSpec) -> float:
    """How much of `out_spec`'s label token set was seen in `in_spec`, 0..100.

    Directional coverage: 100 * |T(out) & T(in)| / |T(out)|.  Identical label
    sets score 100; disjoint token sets score 0.
    """
    t_in = label_tokens(in_spec.label_vocabulary)
    t_out = label_tokens(out_spec.label_vocabulary)
    if not t_in or not t_out:
        raise CorpusError("label_overlap requires non-empty vocabularies")
    return 100.0 * len(t_out & t_in) / len(t_out)


def overlap_matrix(
    in_specs: list[DatasetSpec], out_specs: list[DatasetSpec]
) -> np.ndarray:
    """Matrix of overlap scores: entry (i, j) = label_overlap(in i, out j)."""
    if not in_specs or not out_specs:
        raise CorpusError("overlap_matrix requires non-empty spec lists")
    matrix = np.zeros((len(in_specs), len(out_specs)))
    for i, in_spec in enumerate(in_specs):
        for j, out_spec in enumerate(out_specs):
            matrix[i, j] = label_overlap(in_spec, out_spec)
    return matrix


def overlap_report(
    in_specs: list[DatasetSpec], out_specs: list[DatasetSpec]
) -> tuple[dict, str]:
    """Overlap matrix as a JSON-ready dict plus a plain-text table."""
    matrix = overlap_matrix(in_specs, out_specs)
    payload = {
        "in_datasets": [s.dataset_id for s in in_specs],
        "out_datasets": [s.dataset_id for s in out_specs],
        "matrix": [[round(v, 2) for v in row] for row in matrix.tolist()],
    }
    name_width = max(len(s.dataset_id) for s in in_specs)
    col_width = max(8, max(len(s.dataset_id) for s in out_specs) + 1)
    lines = [
        " " * name_width
        + "".join(s.dataset_id.rjust(col_width) for s in out_specs)
    ]
    for s, row in zip(in_specs, matrix):
        lines.append(
            s.dataset_id.ljust(name_width)
            + "".join(f"{v:>{col_width}.1f}" for v in row)
        )
    return payload, "\n".join(lines) + "\n"


# -- canonical serialization -------------------------------------------------------------


def example_to_record(example: Example) -> dict:
    return {
        "text": example.text,
        "labels": list(example.gold_labels),
        "dataset": example.dataset_id,
        "aspect": example.aspect,
        "split": _SPLIT_WIRE[example.split],
        "partition": example.partition,
    }


def canonical_jsonl(examples) -> str:
    """Deterministic serialization: records sorted by (dataset, text, first
    label), JSON keys sorted."""
    records = sorted(
        (example_to_record(ex) for ex in examples),
        key=lambda r: (r["dataset"], r["text"], r["labels"][0]),
    )
    return "".join(
        json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records
    )


def write_jsonl(examples, path: str | os.PathLike, canonical: bool = True) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if canonical:
        payload = canonical_jsonl(examples)
    else:
        payload = "".join(
            json.dumps(example_to_record(ex), sort_keys=True, ensure_ascii=False) + "\n"
            for ex in examples
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def group_by_aspect(datasets: list[Dataset]) -> list[AspectCorpus]:
    """Group datasets into per-aspect corpora, preserving input order."""
    corpora: dict[str, AspectCorpus] = {}
    for d in datasets:
        corpora.setdefault(d.spec.aspect, AspectCorpus(d.spec.aspect)).datasets.append(d)
    return list(corpora.values())
