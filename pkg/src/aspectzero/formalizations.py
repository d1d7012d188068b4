"""The three zero-shot classification formalizations plus the supervised
sequence-classification baseline.

* binary: score each (label, text) concatenation with a 2-way head; predict
  the highest-confidence True.
* dual: embed text and label independently (encode then mean-pool) and rank
  candidates by cosine similarity.
* generative: render a multiple-choice prompt, train with next-token loss,
  predict by greedy decoding.

Input layouts are fixed here so checkpoints stay interchangeable:

    binary      [start] label ([sep] aspect-token) [sep] text
    dual text   [start] (aspect-token) text        dual label   [start] label
    generative  [start] text [sep] question with options "Answer:"

Text is the only segment ever truncated; labels and options carry the
zero-shot signal and are kept whole.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .autodiff import Tensor
from .encoder import pooled_first, pooled_mean
from .tokenizer import END, SEP, START

BINARY_PAIR = "binary_pair"
DUAL_PAIR = "dual_pair"
GENERATIVE_PROMPT = "generative_prompt"
SEQUENCE_CLS = "sequence_cls"
KINDS = (BINARY_PAIR, DUAL_PAIR, GENERATIVE_PROMPT, SEQUENCE_CLS)

ASPECT_PHRASE_DEFAULT = "category"

_WS_RE = re.compile(r"\s+")


def canonical_label(value: str) -> str:
    """Case-fold, trim, and collapse internal whitespace."""
    return _WS_RE.sub(" ", value.strip().casefold())


@dataclass(frozen=True)
class ClassificationInstance:
    """A formalization-specific model input with its training target."""

    kind: str
    text: str
    label: str | tuple[str, ...]
    target: bool | float | str | int
    aspect: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown instance kind {self.kind!r}")
        if self.kind == BINARY_PAIR and not isinstance(self.target, bool):
            raise ValueError("binary_pair target must be a bool")
        if self.kind == DUAL_PAIR and float(self.target) not in (0.0, 1.0):
            raise ValueError("dual_pair target must be 0 or 1")
        if self.kind == GENERATIVE_PROMPT:
            options = self.label
            if not isinstance(options, tuple) or self.target not in options:
                raise ValueError("generative target must be one of the options")
        if self.kind == SEQUENCE_CLS and not isinstance(self.target, int):
            raise ValueError("sequence_cls target must be a class index")


# -- input layouts -----------------------------------------------------------


def _truncated_text_ids(tokenizer, text: str, budget: int, what: str) -> list[int]:
    if budget < 0:
        raise ValueError(f"{what}: sequence exceeds max length even without text")
    ids = tokenizer.encode(text)
    if ids and budget < 1:
        raise ValueError(f"{what}: no room left for text after mandatory segments")
    return ids[:budget]


def binary_input_ids(tokenizer, text: str, label: str, aspect: str | None,
                     max_sequence_length: int) -> list[int]:
    frame = [START] + tokenizer.encode(label)
    if aspect is not None:
        frame += [SEP, tokenizer.aspect_id(aspect)]
    frame += [SEP]
    text_ids = _truncated_text_ids(
        tokenizer, text, max_sequence_length - len(frame), "binary input"
    )
    return frame + text_ids


def dual_text_ids(tokenizer, text: str, aspect: str | None,
                  max_sequence_length: int) -> list[int]:
    frame = [START]
    if aspect is not None:
        frame.append(tokenizer.aspect_id(aspect))
    text_ids = _truncated_text_ids(
        tokenizer, text, max_sequence_length - len(frame), "dual text input"
    )
    return frame + text_ids


def dual_label_ids(tokenizer, label: str, max_sequence_length: int) -> list[int]:
    ids = [START] + tokenizer.encode(label)
    if len(ids) > max_sequence_length:
        raise ValueError("label exceeds max sequence length; labels are never truncated")
    return ids


# -- supervised baseline -------------------------------------------------------


def seq_cls_predict(model, text: str) -> tuple[int, np.ndarray]:
    """Class index and probability vector from the fixed-vocabulary head."""
    head = model.heads.get("seq_cls")
    if head is None:
        raise ValueError("model has no sequence-classification head")
    text_ids = model.tokenizer.encode(text)
    if not text_ids:
        raise ValueError("text tokenizes to nothing")
    ids = [START] + text_ids[: model.max_sequence_length - 1]
    batch_ids, mask = model.encode_batch([ids])
    states = model.forward(batch_ids, mask)
    probs = head.logits(pooled_first(states)).softmax(axis=-1).data[0]
    return int(np.argmax(probs)), probs


# -- binary cross-encoding --------------------------------------------------------


def make_binary_pairs(
    example,
    vocabulary,
    negatives_per_positive: int = 3,
    seed: int = 0,
    kind: str = BINARY_PAIR,
) -> list[ClassificationInstance]:
    """One True instance per gold label plus sampled False instances.

    Negatives are drawn uniformly without replacement from the non-gold part
    of `vocabulary`.  When no negatives exist the positives are emitted
    alone.  Deterministic given `seed`.
    """
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    vocabulary = list(vocabulary)
    gold = set(example.gold_labels)
    missing = gold - set(vocabulary)
    if missing:
        raise ValueError(f"gold labels {sorted(missing)} missing from the vocabulary")
    pool = [label for label in vocabulary if label not in gold]
    if not pool:
        import warnings

        warnings.warn(
            f"no negative labels available for {example.dataset_id!r}; "
            "emitting positives only",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    true_target, false_target = (True, False) if kind == BINARY_PAIR else (1.0, 0.0)
    instances: list[ClassificationInstance] = []
    for gold_label in example.gold_labels:
        instances.append(
            ClassificationInstance(kind, example.text, gold_label, true_target)
        )
        k = min(negatives_per_positive, len(pool))
        if k:
            chosen = rng.choice(len(pool), size=k, replace=False)
            for i in chosen:
                instances.append(
                    ClassificationInstance(kind, example.text, pool[i], false_target)
                )
    return instances


def binary_score(model, text: str, label: str, aspect: str | None = None) -> float:
    """P(True | label, text) from the 2-way head over the first-token vector."""
    scores = binary_scores(model, text, [label], aspect)
    return float(scores[0])


def binary_scores(model, text: str, candidates, aspect: str | None = None) -> np.ndarray:
    if model.mode != "bidirectional":
        raise ValueError("binary scoring requires a bidirectional model")
    head = model.heads.get("binary")
    if head is None:
        raise ValueError("model has no binary head")
    if not candidates:
        raise ValueError("candidate list is empty")
    sequences = [
        binary_input_ids(model.tokenizer, text, label, aspect, model.max_sequence_length)
        for label in candidates
    ]
    ids, mask = model.encode_batch(sequences)
    states = model.forward(ids, mask)
    probs = head.logits(pooled_first(states)).softmax(axis=-1).data
    return probs[:, 1]


def binary_predict(model, text: str, candidates, aspect: str | None = None) -> str:
    """argmax of binary_score over `candidates`; ties go to the lowest index."""
    candidates = list(candidates)
    scores = binary_scores(model, text, candidates, aspect)
    return candidates[int(np.argmax(scores))]


def binary_batch_loss(model, batch) -> Tensor:
    """Mean 2-way cross-entropy over a padded (ids, mask, targets) batch."""
    ids, mask, targets = batch
    states = model.forward(ids, mask)
    logits = model.heads["binary"].logits(pooled_first(states))
    log_probs = logits.log_softmax(axis=-1)
    picked = log_probs[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
    return picked.mean() * -1.0


def pooled_head_loss(model, head_name: str, batch) -> Tensor:
    """Mean cross-entropy of a pooled-vector head over (ids, mask, targets)."""
    ids, mask, targets = batch
    states = model.forward(ids, mask)
    logits = model.heads[head_name].logits(pooled_first(states))
    log_probs = logits.log_softmax(axis=-1)
    picked = log_probs[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
    return picked.mean() * -1.0


# -- dual encoding ------------------------------------------------------------------


def embed_text(model, text: str, aspect: str | None = None) -> np.ndarray:
    """encode -> mean-pool embedding of a text."""
    ids = dual_text_ids(model.tokenizer, text, aspect, model.max_sequence_length)
    batch_ids, mask = model.encode_batch([ids])
    return pooled_mean(model.forward(batch_ids, mask), mask).data[0]


def embed_label(model, label: str) -> np.ndarray:
    ids = dual_label_ids(model.tokenizer, label, model.max_sequence_length)
    batch_ids, mask = model.encode_batch([ids])
    return pooled_mean(model.forward(batch_ids, mask), mask).data[0]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs are reported and scored 0."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        import warnings

        warnings.warn("zero-norm embedding; treating similarity as 0", stacklevel=2)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def dual_encode_score(model, text: str, label: str, aspect: str | None = None) -> float:
    """Cosine similarity of independently encoded text and label."""
    if model.mode != "bidirectional":
        raise ValueError("dual encoding requires a bidirectional model")
    return cosine(embed_text(model, text, aspect), embed_label(model, label))


def dual_predict(model, text: str, candidates, aspect: str | None = None) -> str:
    if model.mode != "bidirectional":
        raise ValueError("dual encoding requires a bidirectional model")
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list is empty")
    text_vec = embed_text(model, text, aspect)
    sequences = [
        dual_label_ids(model.tokenizer, label, model.max_sequence_length)
        for label in candidates
    ]
    ids, mask = model.encode_batch(sequences)
    label_vecs = pooled_mean(model.forward(ids, mask), mask).data
    scores = [cosine(text_vec, vec) for vec in label_vecs]
    return candidates[int(np.argmax(scores))]


def dual_loss(model, instance: ClassificationInstance) -> float:
    """Squared error between the cosine score and the {0, 1} target."""
    if instance.kind != DUAL_PAIR:
        raise ValueError("dual_loss expects a dual_pair instance")
    score = dual_encode_score(model, instance.text, instance.label, instance.aspect)
    return (score - float(instance.target)) ** 2


def _batch_cosine(a: Tensor, b: Tensor) -> Tensor:
    num = (a * b).sum(axis=1)
    na = (a * a).sum(axis=1) ** 0.5
    nb = (b * b).sum(axis=1) ** 0.5
    return num * (na * nb) ** -1.0


def dual_batch_loss(model, batch) -> Tensor:
    """Mean squared error of cosine scores against {0,1} targets."""
    text_ids, text_mask, label_ids, label_mask, targets = batch
    text_vecs = pooled_mean(model.forward(text_ids, text_mask), text_mask)
    label_vecs = pooled_mean(model.forward(label_ids, label_mask), label_mask)
    diff = _batch_cosine(text_vecs, label_vecs) - np.asarray(targets, dtype=np.float64)
    return (diff * diff).mean()


# -- generative multiple choice ------------------------------------------------------


@dataclass(frozen=True)
class GenerativePrompt:
    ids: tuple[int, ...]
    answer_start: int
    options: tuple[str, ...]
    text: str
    aspect: str | None
    template_id: str


def load_template_pack(path: str | None = None) -> dict[str, str]:
    """Template pack: a JSON object mapping template_id to a template string
    with {text}, {options}, and {aspect_phrase} slots."""
    if path is None:
        payload = (
            resources.files("aspectzero") / "templates" / "default.json"
        ).read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            payload = fh.read()
    pack = json.loads(payload)
    if not isinstance(pack, dict) or not all(
        isinstance(v, str) for v in pack.values()
    ):
        raise ValueError("template pack must map template ids to template strings")
    return pack


_TEXT_SENTINEL = "\x00text\x00"


def build_generative_prompt(
    tokenizer,
    text: str,
    options,
    aspect: str | None = None,
    template_id: str = "default",
    template_pack: dict[str, str] | None = None,
    max_sequence_length: int = 128,
) -> GenerativePrompt:
    """Render the multiple-choice prompt to token ids.

    Options keep the caller-given order and are never truncated; the text is
    truncated as needed to leave room for the longest option plus the end
    marker.  The returned `answer_start` marks where answer tokens begin.
    """
    options = tuple(options)
    if not options:
        raise ValueError("options must be non-empty")
    pack = template_pack if template_pack is not None else load_template_pack()
    if template_id not in pack:
        raise ValueError(f"unknown template id {template_id!r}")
    rendered = pack[template_id].format(
        text=_TEXT_SENTINEL,
        options=", ".join(options),
        aspect_phrase=aspect if aspect is not None else ASPECT_PHRASE_DEFAULT,
    )
    ids: list[int] = [START]
    text_slots: list[int] = []
    for i, segment in enumerate(rendered.split("[sep]")):
        if i > 0:
            ids.append(SEP)
        for j, piece in enumerate(segment.split(_TEXT_SENTINEL)):
            if j > 0:
                text_slots.append(len(ids))
            ids.extend(tokenizer.encode(piece))
    answer_budget = max(len(tokenizer.encode(o)) for o in options) + 1
    budget = max_sequence_length - len(ids) - answer_budget
    text_ids = _truncated_text_ids(tokenizer, text, budget, "generative prompt")
    for slot in reversed(text_slots):
        ids[slot:slot] = text_ids
    return GenerativePrompt(
        ids=tuple(ids),
        answer_start=len(ids),
        options=options,
        text=text,
        aspect=aspect,
        template_id=template_id,
    )


def _answer_sequence(tokenizer, prompt: GenerativePrompt, answer: str) -> list[int]:
    canon = {canonical_label(o) for o in prompt.options}
    if canonical_label(answer) not in canon:
        raise ValueError(f"answer {answer!r} is not among the prompt's options")
    return list(prompt.ids) + tokenizer.encode(answer) + [END]


def lm_sequence_loss(model, sequence, loss_scope: str = "full",
                     answer_start: int | None = None) -> Tensor:
    """Summed next-token cross-entropy over one sequence.

    `full` sums over every predicted position; `answer_only` restricts the
    sum to positions from `answer_start` on.
    """
    if loss_scope not in ("full", "answer_only"):
        raise ValueError(f"unknown loss scope {loss_scope!r}")
    sequence = list(sequence)
    ids, mask = model.encode_batch([sequence])
    log_probs = model.lm_logits(ids, mask).log_softmax(axis=-1)
    targets = np.asarray(sequence[1:], dtype=np.int64)
    positions = np.arange(len(targets))
    picked = log_probs[0, positions, targets]
    if loss_scope == "answer_only":
        if answer_start is None:
            raise ValueError("answer_only scope needs answer_start")
        keep = (positions + 1 >= answer_start).astype(np.float64)
        return (picked * keep).sum() * -1.0
    return picked.sum() * -1.0


def generative_loss(model, prompt: GenerativePrompt, answer: str,
                    loss_scope: str = "full") -> float:
    """Next-token language-modeling loss for prompt + answer."""
    if model.mode != "autoregressive":
        raise ValueError("generative loss requires an autoregressive model")
    sequence = _answer_sequence(model.tokenizer, prompt, answer)
    loss = lm_sequence_loss(model, sequence, loss_scope, prompt.answer_start)
    return float(loss.data)


def lm_batch_loss(model, batch) -> Tensor:
    """Mean over sequences of summed next-token cross-entropy.

    `batch` is (ids, mask, loss_mask): loss_mask marks target positions that
    count toward the sum (already restricted by scope at build time).
    """
    ids, mask, loss_mask = batch
    log_probs = model.lm_logits(ids, mask).log_softmax(axis=-1)
    B, L = ids.shape
    rows = np.arange(B)[:, None]
    cols = np.arange(L - 1)[None, :]
    picked = log_probs[rows, cols, ids[:, 1:]]
    summed = (picked * loss_mask[:, 1:]).sum(axis=1)
    return summed.mean() * -1.0


def generative_predict(model, prompt: GenerativePrompt, max_new_tokens: int = 8) -> str:
    """Greedy decoding until the end marker or the token budget runs out."""
    if model.mode != "autoregressive":
        raise ValueError("generative prediction requires an autoregressive model")
    sequence = list(prompt.ids)
    generated: list[int] = []
    for _ in range(max_new_tokens):
        if len(sequence) >= model.max_sequence_length:
            break
        ids, mask = model.encode_batch([sequence])
        logits = model.lm_logits(ids, mask).data[0, -1]
        nxt = int(np.argmax(logits))
        if nxt == END:
            break
        generated.append(nxt)
        sequence.append(nxt)
    return model.tokenizer.decode(generated)


# -- aspect injection support -----------------------------------------------------


def with_aspect(instance: ClassificationInstance, aspect: str) -> ClassificationInstance:
    return replace(instance, aspect=aspect)
