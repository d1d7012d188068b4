"""Whitespace+punctuation tokenizer with a hash-bucketed vocabulary.

Word tokens are case-folded runs of alphanumerics; each punctuation mark is
its own token.  Word ids come from a stable hash (crc32) into a fixed number
of buckets, so no fitting pass is required and ids are reproducible across
processes.  A decode registry remembers the first string seen per bucket so
generated ids can be rendered back to text.

Reserved ids, in order: padding, sequence start, separator, end-of-answer,
then one id per aspect.  Hash buckets follow the reserved block.
"""

from __future__ import annotations

import re
import zlib

DEFAULT_ASPECTS = ("sentiment", "intent", "topic")

PAD, START, SEP, END = 0, 1, 2, 3
SPECIAL_NAMES = ("[pad]", "[start]", "[sep]", "[end]")

_WORD_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def word_tokens(text: str) -> list[str]:
    """Case-folded word/punctuation tokens of `text`."""
    return _WORD_RE.findall(text.casefold())


class HashTokenizer:
    def __init__(self, n_buckets: int = 512, aspects: tuple[str, ...] = DEFAULT_ASPECTS):
        if n_buckets < 1:
            raise ValueError("n_buckets must be positive")
        self.n_buckets = int(n_buckets)
        self.aspects = tuple(aspects)
        self._aspect_ids = {a: len(SPECIAL_NAMES) + i for i, a in enumerate(self.aspects)}
        self._word_base = len(SPECIAL_NAMES) + len(self.aspects)
        self._registry: dict[int, str] = {}

    @property
    def vocabulary_size(self) -> int:
        return self._word_base + self.n_buckets

    def aspect_id(self, aspect: str) -> int:
        try:
            return self._aspect_ids[aspect]
        except KeyError:
            raise ValueError(f"unknown aspect {aspect!r}; known: {self.aspects}") from None

    def word_id(self, word: str) -> int:
        bucket = zlib.crc32(word.encode("utf-8")) % self.n_buckets
        wid = self._word_base + bucket
        self._registry.setdefault(wid, word)
        return wid

    def encode(self, text: str) -> list[int]:
        return [self.word_id(w) for w in word_tokens(text)]

    def decode(self, ids) -> str:
        """Render word ids back to text; specials are skipped, unseen buckets
        render as a placeholder."""
        words = []
        for i in ids:
            i = int(i)
            if i < self._word_base:
                continue
            words.append(self._registry.get(i, "<unk>"))
        return " ".join(words)

    def special_token_map(self) -> dict[str, int]:
        table = {name: i for i, name in enumerate(SPECIAL_NAMES)}
        table.update({f"[aspect:{a}]": i for a, i in self._aspect_ids.items()})
        return table

    # -- checkpoint manifest support ------------------------------------------

    def spec(self) -> dict:
        return {
            "n_buckets": self.n_buckets,
            "aspects": list(self.aspects),
            "registry": {str(k): v for k, v in self._registry.items()},
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "HashTokenizer":
        tok = cls(n_buckets=spec["n_buckets"], aspects=tuple(spec["aspects"]))
        tok._registry = {int(k): v for k, v in spec.get("registry", {}).items()}
        return tok
