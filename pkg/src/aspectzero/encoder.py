"""Pluggable text-encoder contract and a tiny trainable reference model.

An encoder handle exposes, at minimum: ``mode`` ("bidirectional" or
"autoregressive"), ``vocabulary_size``, ``hidden_width``,
``max_sequence_length``, a ``tokenizer``, an ``encode`` method mapping a
token-id sequence to one hidden vector per token, and a ``parameters``
mapping of named trainable tensors.  Scoring, training, and evaluation code
is written against that surface only, so larger backends can be swapped in.

The reference implementation is a 2-layer pre-norm self-attention network
with learned positional embeddings, small enough for CPU tests yet able to
overfit the synthetic fixtures.  Autoregressive mode adds a causal mask and
a next-token projection.
"""

from __future__ import annotations

import copy
import json
import os
import shutil
import tempfile
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .tokenizer import HashTokenizer

MASKED_SCORE = -1e30

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_PARAMS = "params.npz"


class NonFiniteLossError(ValueError):
    """Loss evaluated to NaN or infinity."""


@dataclass
class PooledVector:
    values: np.ndarray
    pooling: str  # "first_token" | "mean"


class LinearHead:
    """A softmax-ready linear projection over a pooled vector."""

    def __init__(self, in_width: int, out_width: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_width = in_width
        self.out_width = out_width
        self.w = Tensor(rng.normal(0.0, 0.02, size=(in_width, out_width)))
        self.b = Tensor(np.zeros(out_width))

    def logits(self, pooled: Tensor) -> Tensor:
        return pooled @ self.w + self.b

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class ReferenceEncoder:
    def __init__(
        self,
        tokenizer: HashTokenizer | None = None,
        mode: str = "bidirectional",
        hidden_width: int = 32,
        n_layers: int = 2,
        n_heads: int = 4,
        max_sequence_length: int = 128,
        seed: int = 0,
        embedding_init_std: float = 0.3,
        position_init_std: float = 0.02,
    ):
        if mode not in ("bidirectional", "autoregressive"):
            raise ValueError(f"unknown mode {mode!r}")
        if hidden_width % n_heads != 0:
            raise ValueError("n_heads must divide hidden_width")
        self.tokenizer = tokenizer if tokenizer is not None else HashTokenizer()
        self.mode = mode
        self.hidden_width = hidden_width
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_sequence_length = max_sequence_length
        self.seed = seed
        # wide token embeddings make same-token attention matching stand out
        # at init, which the pair-scoring formalizations rely on; autoregressive
        # use benefits from a stronger positional signal (position_init_std)
        self.embedding_init_std = embedding_init_std
        self.position_init_std = position_init_std
        self.heads: dict[str, LinearHead] = {}
        self.head_labels: dict[str, tuple[str, ...]] = {}
        self._params = self._init_params(np.random.default_rng(seed))

    @property
    def vocabulary_size(self) -> int:
        return self.tokenizer.vocabulary_size

    def _init_params(self, rng) -> dict[str, Tensor]:
        w, v = self.hidden_width, self.vocabulary_size
        hidden = 2 * w

        def normal(*shape):
            return Tensor(rng.normal(0.0, 0.02, size=shape))

        params = {
            "tok_emb": Tensor(
                rng.normal(0.0, self.embedding_init_std, size=(v, w))
            ),
            "pos_emb": Tensor(
                rng.normal(0.0, self.position_init_std, size=(self.max_sequence_length, w))
            ),
            "final_ln.g": Tensor(np.ones(w)),
            "final_ln.b": Tensor(np.zeros(w)),
        }
        for i in range(self.n_layers):
            params[f"layers.{i}.attn.wq"] = normal(w, w)
            params[f"layers.{i}.attn.wk"] = normal(w, w)
            params[f"layers.{i}.attn.wv"] = normal(w, w)
            params[f"layers.{i}.attn.wo"] = normal(w, w)
            params[f"layers.{i}.mlp.w1"] = normal(w, hidden)
            params[f"layers.{i}.mlp.b1"] = Tensor(np.zeros(hidden))
            params[f"layers.{i}.mlp.w2"] = normal(hidden, w)
            params[f"layers.{i}.mlp.b2"] = Tensor(np.zeros(w))
            params[f"layers.{i}.ln1.g"] = Tensor(np.ones(w))
            params[f"layers.{i}.ln1.b"] = Tensor(np.zeros(w))
            params[f"layers.{i}.ln2.g"] = Tensor(np.ones(w))
            params[f"layers.{i}.ln2.b"] = Tensor(np.zeros(w))
        if self.mode == "autoregressive":
            params["lm_head.w"] = normal(w, v)
            params["lm_head.b"] = Tensor(np.zeros(v))
        return params

    # -- heads -----------------------------------------------------------------

    def attach_head(self, name: str, out_width: int, labels: tuple[str, ...] | None = None,
                    seed: int = 0) -> LinearHead:
        if labels is not None and len(labels) != out_width:
            raise ValueError("head width must equal the label vocabulary size")
        head = LinearHead(self.hidden_width, out_width, seed=seed)
        self.heads[name] = head
        if labels is not None:
            self.head_labels[name] = tuple(labels)
        return head

    def detach_head(self, name: str) -> None:
        self.heads.pop(name, None)
        self.head_labels.pop(name, None)

    # -- parameters ---------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        named = {f"backbone.{k}": t for k, t in self._params.items()}
        for name, head in self.heads.items():
            for k, t in head.parameters().items():
                named[f"head.{name}.{k}"] = t
        return named

    def copy(self) -> "ReferenceEncoder":
        return copy.deepcopy(self)

    # -- forward -----------------------------------------------------------------

    def _layer_norm(self, x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + 1e-5) ** -0.5 * gamma + beta

    def _attention_bias(self, mask: np.ndarray) -> np.ndarray:
        # mask: (B, L) with 1 on real tokens.  Keys at padding are disallowed;
        # autoregressive mode additionally disallows future keys.
        B, L = mask.shape
        allowed = mask[:, None, None, :].astype(bool)
        if self.mode == "autoregressive":
            causal = np.tril(np.ones((L, L), dtype=bool))
            allowed = allowed & causal[None, None, :, :]
        return np.where(allowed, 0.0, MASKED_SCORE)

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Hidden states (B, L, W) for padded id batch `ids` with validity `mask`."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=np.float64)
        B, L = ids.shape
        if L > self.max_sequence_length:
            raise ValueError(
                f"sequence length {L} exceeds max_sequence_length "
                f"{self.max_sequence_length}; truncate before encoding"
            )
        if ids.max(initial=0) >= self.vocabulary_size or ids.min(initial=0) < 0:
            raise ValueError("token id out of range for this vocabulary")
        p = self._params
        x = p["tok_emb"][ids] + p["pos_emb"][:L]
        bias = self._attention_bias(mask)
        H, dh = self.n_heads, self.hidden_width // self.n_heads
        scale = 1.0 / np.sqrt(dh)
        for i in range(self.n_layers):
            h = self._layer_norm(x, p[f"layers.{i}.ln1.g"], p[f"layers.{i}.ln1.b"])
            q = (h @ p[f"layers.{i}.attn.wq"]).reshape(B, L, H, dh).transpose((0, 2, 1, 3))
            k = (h @ p[f"layers.{i}.attn.wk"]).reshape(B, L, H, dh).transpose((0, 2, 1, 3))
            v = (h @ p[f"layers.{i}.attn.wv"]).reshape(B, L, H, dh).transpose((0, 2, 1, 3))
            scores = q @ k.transpose((0, 1, 3, 2)) * scale + bias
            attn = scores.softmax(axis=-1) @ v
            attn = attn.transpose((0, 2, 1, 3)).reshape(B, L, self.hidden_width)
            x = x + attn @ p[f"layers.{i}.attn.wo"]
            h = self._layer_norm(x, p[f"layers.{i}.ln2.g"], p[f"layers.{i}.ln2.b"])
            h = (h @ p[f"layers.{i}.mlp.w1"] + p[f"layers.{i}.mlp.b1"]).gelu()
            x = x + h @ p[f"layers.{i}.mlp.w2"] + p[f"layers.{i}.mlp.b2"]
        return self._layer_norm(x, p["final_ln.g"], p["final_ln.b"])

    def lm_logits(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        if self.mode != "autoregressive":
            raise ValueError("next-token logits require an autoregressive model")
        states = self.forward(ids, mask)
        return states @ self._params["lm_head.w"] + self._params["lm_head.b"]

    def encode_batch(self, sequences: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Pad sequences into (ids, mask) arrays."""
        if not sequences:
            raise ValueError("empty batch")
        L = max(len(s) for s in sequences)
        ids = np.zeros((len(sequences), L), dtype=np.int64)
        mask = np.zeros((len(sequences), L), dtype=np.float64)
        for r, seq in enumerate(sequences):
            ids[r, : len(seq)] = seq
            mask[r, : len(seq)] = 1.0
        return ids, mask


class BagOfTokenEmbedder:
    """Deterministic lexical embedder satisfying the encoder contract.

    Each token id maps to a one-hot hidden vector, so the mean-pooled
    embedding of a text is its normalized token histogram.  Used as the
    default fallback embedder when mapping free-form generations onto
    candidate labels; a pre-trained sentence encoder can be plugged in
    through the same surface.
    """

    mode = "bidirectional"

    def __init__(self, n_buckets: int = 256):
        self.tokenizer = HashTokenizer(n_buckets=n_buckets, aspects=())
        self.hidden_width = self.tokenizer.vocabulary_size
        self.max_sequence_length = 10_000

    @property
    def vocabulary_size(self) -> int:
        return self.tokenizer.vocabulary_size

    def encode(self, tokens) -> np.ndarray:
        tokens = list(tokens)
        if len(tokens) > self.max_sequence_length:
            raise ValueError("sequence too long")
        states = np.zeros((len(tokens), self.hidden_width))
        for row, t in enumerate(tokens):
            states[row, int(t)] = 1.0
        return states

    def parameters(self) -> dict:
        return {}


# -- operations over the contract ---------------------------------------------------


def encode(model, tokens) -> np.ndarray:
    """One hidden vector per input token; deterministic given parameters.

    Overlong input raises: truncation policy belongs to the caller, never
    to the encoder.
    """
    tokens = list(int(t) for t in tokens)
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    if len(tokens) > model.max_sequence_length:
        raise ValueError(
            f"sequence length {len(tokens)} exceeds max_sequence_length "
            f"{model.max_sequence_length}"
        )
    if hasattr(model, "encode"):
        return np.asarray(model.encode(tokens), dtype=np.float64)
    ids, mask = model.encode_batch([tokens])
    return model.forward(ids, mask).data[0]


def pool(states: np.ndarray, mask, pooling: str) -> PooledVector:
    """Pool a hidden-state sequence to a single vector."""
    states = np.asarray(states, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != states.shape[0]:
        raise ValueError("mask length must equal sequence length")
    if not mask.any():
        raise ValueError("cannot pool a fully masked sequence")
    if pooling == "first_token":
        return PooledVector(states[0].copy(), pooling)
    if pooling == "mean":
        return PooledVector(states[mask].mean(axis=0), pooling)
    raise ValueError(f"unknown pooling mode {pooling!r}")


def lm_step(model, prefix) -> np.ndarray:
    """Next-token probability distribution given a non-empty prefix."""
    if model.mode != "autoregressive":
        raise ValueError("lm_step requires an autoregressive model")
    prefix = list(int(t) for t in prefix)
    if not prefix:
        raise ValueError("prefix must be non-empty")
    ids, mask = model.encode_batch([prefix])
    logits = model.lm_logits(ids, mask)
    return logits[:, len(prefix) - 1, :].softmax(axis=-1).data[0]


def gradient(model, loss_fn, batch) -> dict[str, np.ndarray]:
    """Gradient of `loss_fn(model, batch)` w.r.t. every model parameter.

    Parameters the loss does not touch get exact zero gradients.
    """
    params = model.parameters()
    for t in params.values():
        t.grad = None
    loss = loss_fn(model, batch)
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteLossError(f"loss is not finite: {loss.data!r}")
    loss.backward()
    return {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


# -- pooled tensors for training ---------------------------------------------------


def pooled_first(states: Tensor) -> Tensor:
    return states[:, 0, :]


def pooled_mean(states: Tensor, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=np.float64)
    weights = mask / mask.sum(axis=1, keepdims=True)
    return (states * weights[:, :, None]).sum(axis=1)


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(model: ReferenceEncoder, directory: str | os.PathLike) -> str:
    """Persist parameters + manifest atomically (write-then-rename)."""
    directory = os.fspath(directory)
    manifest = {
        "format_version": 1,
        "mode": model.mode,
        "hidden_width": model.hidden_width,
        "n_layers": model.n_layers,
        "n_heads": model.n_heads,
        "max_sequence_length": model.max_sequence_length,
        "seed": model.seed,
        "embedding_init_std": model.embedding_init_std,
        "position_init_std": model.position_init_std,
        "tokenizer": model.tokenizer.spec(),
        "special_tokens": model.tokenizer.special_token_map(),
        "heads": {
            name: {
                "out_width": head.out_width,
                "labels": list(model.head_labels.get(name, ())) or None,
            }
            for name, head in model.heads.items()
        },
    }
    arrays = {name: t.data for name, t in model.parameters().items()}
    parent = os.path.dirname(directory) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-ckpt-", dir=parent)
    try:
        np.savez(os.path.join(tmp, CHECKPOINT_PARAMS), **arrays)
        with open(os.path.join(tmp, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        if os.path.isdir(directory):
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def load_checkpoint(directory: str | os.PathLike) -> ReferenceEncoder:
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, CHECKPOINT_MANIFEST)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    tokenizer = HashTokenizer.from_spec(manifest["tokenizer"])
    model = ReferenceEncoder(
        tokenizer=tokenizer,
        mode=manifest["mode"],
        hidden_width=manifest["hidden_width"],
        n_layers=manifest["n_layers"],
        n_heads=manifest["n_heads"],
        max_sequence_length=manifest["max_sequence_length"],
        seed=manifest.get("seed", 0),
        embedding_init_std=manifest.get("embedding_init_std", 0.3),
        position_init_std=manifest.get("position_init_std", 0.02),
    )
    for name, meta in manifest.get("heads", {}).items():
        labels = tuple(meta["labels"]) if meta.get("labels") else None
        model.attach_head(name, meta["out_width"], labels=labels)
    loaded = np.load(os.path.join(directory, CHECKPOINT_PARAMS))
    params = model.parameters()
    missing = set(params) - set(loaded.files)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    for name, t in params.items():
        t.data = np.asarray(loaded[name], dtype=np.float64)
    return model
