"""Whitespace word tokenizer with a corpus-built vocabulary."""

from __future__ import annotations

import os
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD = "<pad>"
UNK = "<unk>"
DEFAULT_MAX_LEN = 64

_TURKISH_UPPER = str.maketrans({"I": "ı", "İ": "i"})


class EmptyInputError(ValueError):
    pass


def normalize(text: str, turkish_casing: bool = False) -> str:
    """NFC-normalise and lowercase.

    Default casing is Unicode's; ``turkish_casing`` maps I -> ı and İ -> i first.
    """
    text = unicodedata.normalize("NFC", text)
    if turkish_casing:
        text = text.translate(_TURKISH_UPPER)
    return unicodedata.normalize("NFC", text.lower())


def split_tokens(text: str, turkish_casing: bool = False) -> list[str]:
    return normalize(text, turkish_casing).split()


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    min_freq: int = 1

    def __post_init__(self):
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocab must start with PAD and UNK")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, text: str, max_len: int = DEFAULT_MAX_LEN,
               turkish_casing: bool = False) -> list[int]:
        toks = split_tokens(text, turkish_casing)
        if not toks:
            raise EmptyInputError(f"sentence is empty after trimming: {text!r}")
        return [self.id(t) for t in toks[:max_len]]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens[2:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh]
        return cls((PAD, UNK, *words))


def build_vocab(corpus: Iterable[str], min_freq: int = 1,
                turkish_casing: bool = False) -> Vocab:
    """Ids by descending frequency, ties broken lexicographically, after PAD/UNK."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    n = 0
    for sentence in corpus:
        n += 1
        counts.update(split_tokens(sentence, turkish_casing))
    if n == 0:
        raise EmptyInputError("cannot build a vocabulary from an empty corpus")
    counts.pop(PAD, None)
    counts.pop(UNK, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq),
                  key=lambda t: (-counts[t], t))
    return Vocab((PAD, UNK, *kept), min_freq)


@dataclass
class TokenizedBatch:
    ids: np.ndarray   # int64 [B, T]
    mask: np.ndarray  # float64 0/1 [B, T]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape


def pad_ids(rows: Sequence[Sequence[int]], max_len: int = DEFAULT_MAX_LEN) -> TokenizedBatch:
    """Right-pad integer id rows into a batch, truncating at ``max_len``."""
    if not rows:
        raise EmptyInputError("empty batch")
    rows = [list(r)[:max_len] for r in rows]
    if any(len(r) == 0 for r in rows):
        raise EmptyInputError("batch contains an empty sequence")
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width))
    for b, r in enumerate(rows):
        ids[b, :len(r)] = r
        mask[b, :len(r)] = 1.0
    return TokenizedBatch(ids, mask)


def tokenize_batch(vocab: Vocab, sentences: Sequence[str], max_len: int = DEFAULT_MAX_LEN,
                   turkish_casing: bool = False) -> TokenizedBatch:
    if max_len < 1:
        raise ValueError("max_len must be positive")
    return pad_ids([vocab.encode(s, max_len, turkish_casing) for s in sentences], max_len)


def load_pretokenized(path: str | os.PathLike) -> list[list[int]]:
    """Read one sentence per line of space-separated decimal ids."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                raise EmptyInputError(f"{path}:{lineno}: empty sentence")
            try:
                rows.append([int(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer token id") from exc
    return rows
