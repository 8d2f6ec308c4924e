"""Pair corpora: TSV ingestion, validation splits, labeled pairings, batching, synthesis."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

KINDS = ("translation", "entailment", "caption")
ENTAILMENT_LABEL = "entailment"

Pair = tuple[str, str]


class MalformedInputError(ValueError):
    pass


@dataclass
class PairDataset:
    pairs: list[Pair]
    kind: str = "translation"
    source: str = "<memory>"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for i, (a, b) in enumerate(self.pairs):
            if not a.strip() or not b.strip():
                raise ValueError(f"pair {i} has an empty sentence")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def subset(self, indices: Sequence[int], source: Optional[str] = None) -> "PairDataset":
        return PairDataset([self.pairs[i] for i in indices], self.kind, source or self.source)

    def sentences(self) -> list[str]:
        return [s for pair in self.pairs for s in pair]


@dataclass
class LabeledPairings:
    items: list[tuple[str, str, float]]

    def __post_init__(self):
        for _, _, label in self.items:
            if label not in (0.0, 1.0):
                raise ValueError(f"labels must be 0.0 or 1.0, got {label}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, _, lab in self.items])

    def counts(self) -> dict[float, int]:
        labels = self.labels
        return {1.0: int((labels == 1.0).sum()), 0.0: int((labels == 0.0).sum())}


def load_pairs_tsv(path, kind: str = "translation", max_malformed: float = 0.01) -> PairDataset:
    """Read ``A<TAB>B[<TAB>label]`` lines in file order.

    For entailment sources with a label column, only ``entailment`` rows are kept.
    Blank lines are skipped. Rows with the wrong column count or an empty side are
    malformed; more than ``max_malformed`` of the non-blank lines is an error.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    pairs: list[Pair] = []
    malformed: list[int] = []
    total = filtered = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            total += 1
            cols = line.split("\t")
            if len(cols) not in (2, 3) or not cols[0].strip() or not cols[1].strip():
                malformed.append(lineno)
                continue
            if len(cols) == 3 and kind == "entailment":
                if cols[2].strip().lower() != ENTAILMENT_LABEL:
                    filtered += 1
                    continue
            pairs.append((cols[0].strip(), cols[1].strip()))
    if malformed:
        frac = len(malformed) / total
        msg = f"{path}: {len(malformed)} malformed of {total} lines (first at line {malformed[0]})"
        if frac > max_malformed:
            raise MalformedInputError(msg)
        logger.warning(msg)
    if filtered:
        logger.info("%s: kept %d entailment pairs, dropped %d other labels", path, len(pairs), filtered)
    return PairDataset(pairs, kind, os.fspath(path))


def write_pairs_tsv(ds: PairDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in ds.pairs:
            fh.write(f"{a}\t{b}\n")


def with_reversed(ds: PairDataset) -> PairDataset:
    """Append every pair reversed (B, A) after the originals."""
    return PairDataset(ds.pairs + [(b, a) for a, b in ds.pairs], ds.kind, ds.source)


def split_validation(ds: PairDataset, n_holdout: int, seed: int) -> tuple[PairDataset, PairDataset]:
    """Hold out a seeded uniform sample; both parts keep the original relative order."""
    if not 0 <= n_holdout < len(ds):
        raise ValueError(f"n_holdout={n_holdout} must be in [0, {len(ds)})")
    rng = np.random.default_rng(seed)
    held = np.zeros(len(ds), dtype=bool)
    held[rng.choice(len(ds), size=n_holdout, replace=False)] = True
    train = ds.subset(np.flatnonzero(~held).tolist())
    val = ds.subset(np.flatnonzero(held).tolist())
    return train, val


def make_eval_pairings(ds: PairDataset, n_pos: int, n_neg: int, seed: int) -> LabeledPairings:
    """``n_pos`` true pairs (label 1) then ``n_neg`` cross pairs A_i, B_j with i != j (label 0)."""
    n = len(ds)
    if n_pos < 0 or n_neg < 0:
        raise ValueError("pairing counts must be non-negative")
    if n < n_pos or (n_neg and n < 2):
        raise ValueError(f"need at least {max(n_pos, 2)} pairs, have {n}")
    rng = np.random.default_rng(seed)
    items = [(*ds.pairs[i], 1.0) for i in np.sort(rng.choice(n, size=n_pos, replace=False))]
    a_idx = rng.integers(0, n, size=n_neg)
    b_idx = rng.integers(0, n - 1, size=n_neg)
    b_idx = b_idx + (b_idx >= a_idx)
    items += [(ds.pairs[i][0], ds.pairs[j][1], 0.0) for i, j in zip(a_idx, b_idx)]
    return LabeledPairings(items)


def epochs_for(n_batches: int, batch_size: int, n_pairs: int) -> float:
    return n_batches * batch_size / n_pairs


class BatchIterator:
    """Exactly ``n_batches`` batches over seeded per-epoch shuffles.

    Epoch ``e`` is ordered by a permutation drawn from ``seed + e``; a trailing
    remainder shorter than ``batch_size`` is dropped. A pair whose A or B text
    already occurs in the batch is swapped for a resampled one so that no
    in-batch negative is a duplicate of a positive. ``collisions`` counts swaps.
    """

    def __init__(self, ds: PairDataset, batch_size: int, n_batches: int, seed: int):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if batch_size > len(ds):
            raise ValueError(f"batch_size={batch_size} exceeds dataset size {len(ds)}")
        if n_batches < 0:
            raise ValueError("n_batches must be >= 0")
        distinct = min(len({a for a, _ in ds.pairs}), len({b for _, b in ds.pairs}))
        if distinct < batch_size:
            raise ValueError(f"only {distinct} distinct sentences per side, cannot fill a "
                             f"duplicate-free batch of {batch_size}")
        self.ds = ds
        self.batch_size = batch_size
        self.n_batches = n_batches
        self.seed = seed
        self.collisions = 0

    def __len__(self) -> int:
        return self.n_batches

    def _fill(self, idx: list[int], rng: np.random.Generator) -> list[int]:
        pairs = self.ds.pairs
        seen_a: set[str] = set()
        seen_b: set[str] = set()
        out = []
        for i in idx:
            while pairs[i][0] in seen_a or pairs[i][1] in seen_b:
                self.collisions += 1
                i = int(rng.integers(len(pairs)))
            seen_a.add(pairs[i][0])
            seen_b.add(pairs[i][1])
            out.append(i)
        return out

    def __iter__(self) -> Iterator[list[Pair]]:
        self.collisions = 0
        per_epoch = len(self.ds) // self.batch_size
        emitted = epoch = 0
        while emitted < self.n_batches:
            rng = np.random.default_rng(self.seed + epoch)
            order = rng.permutation(len(self.ds))
            for k in range(per_epoch):
                if emitted == self.n_batches:
                    break
                idx = self._fill(order[k * self.batch_size:(k + 1) * self.batch_size].tolist(), rng)
                yield [self.ds.pairs[i] for i in idx]
                emitted += 1
            epoch += 1
        if self.collisions:
            logger.info("batch_iter: resampled %d duplicate pairs", self.collisions)


def batch_iter(ds: PairDataset, batch_size: int, n_batches: int, seed: int) -> BatchIterator:
    return BatchIterator(ds, batch_size, n_batches, seed)


# ---------------------------------------------------------------------------
# synthetic bilingual corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    vocab_l1: int = 200
    vocab_l2: int = 200
    min_len: int = 5
    max_len: int = 12
    n_translation: int = 5000
    n_entailment: int = 3000
    n_eval: int = 1000
    edit_rate: float = 0.3
    zipf_exponent: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_l1", "vocab_l2", "min_len", "max_len",
                     "n_translation", "n_entailment", "n_eval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.vocab_l1 != self.vocab_l2:
            raise ValueError("a token bijection needs vocab_l1 == vocab_l2")
        if self.min_len > self.max_len:
            raise ValueError("min_len > max_len")
        if not 0.0 < self.edit_rate < 1.0:
            raise ValueError("edit_rate must lie in (0, 1)")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthLanguagePair:
    """Two disjoint word lists and the seeded token bijection between them."""
    l1_words: list[str]
    l2_words: list[str]
    mapping: np.ndarray  # L1 index -> L2 index
    probs: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, cfg: SynthConfig) -> "SynthLanguagePair":
        rng = np.random.default_rng([cfg.seed, 0])
        width = len(str(cfg.vocab_l1 - 1))
        l1 = [f"en{i:0{width}d}" for i in range(cfg.vocab_l1)]
        l2 = [f"tr{i:0{width}d}" for i in range(cfg.vocab_l2)]
        weights = 1.0 / np.arange(1, cfg.vocab_l1 + 1) ** cfg.zipf_exponent
        return cls(l1, l2, rng.permutation(cfg.vocab_l2), weights / weights.sum())

    def translate(self, sentence: str) -> str:
        index = {w: i for i, w in enumerate(self.l1_words)}
        return " ".join(self.l2_words[self.mapping[index[w]]] for w in sentence.split())

    def back_translate(self, sentence: str) -> str:
        inverse = np.argsort(self.mapping)
        index = {w: i for i, w in enumerate(self.l2_words)}
        return " ".join(self.l1_words[inverse[index[w]]] for w in sentence.split())


def _source_sentence(lang: SynthLanguagePair, cfg: SynthConfig, rng) -> np.ndarray:
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    return rng.choice(len(lang.probs), size=length, p=lang.probs)


def paraphrase(tokens: Sequence[int], edit_rate: float, probs: np.ndarray, rng) -> list[int]:
    """Delete or replace ``floor(edit_rate * len)`` tokens, then swap within windows of 2."""
    toks = list(tokens)
    n_edit = int(math.floor(edit_rate * len(toks)))
    positions = set(rng.choice(len(toks), size=n_edit, replace=False).tolist())
    out = []
    for i, tok in enumerate(toks):
        if i not in positions:
            out.append(tok)
        elif rng.random() < 0.5:
            continue
        else:
            new = tok
            while new == tok:
                new = int(rng.choice(len(probs), p=probs))
            out.append(new)
    i = 0
    while i + 1 < len(out):
        if rng.random() < 0.5:
            out[i], out[i + 1] = out[i + 1], out[i]
            i += 2
        else:
            i += 1
    return out


def synth_bilingual(cfg: SynthConfig) -> tuple[PairDataset, PairDataset, PairDataset]:
    """Translation (L1 -> L2), entailment (L2 premise -> paraphrase) and caption eval corpora.

    Caption pairs are two independent paraphrases of one L2 source sentence.
    Each corpus draws from its own seeded stream, so resizing one leaves the
    others unchanged.
    """
    lang = SynthLanguagePair.build(cfg)

    def l1(idx):
        return " ".join(lang.l1_words[i] for i in idx)

    def l2(idx):
        return " ".join(lang.l2_words[lang.mapping[i]] for i in idx)

    rng = np.random.default_rng([cfg.seed, 1])
    translation = []
    for _ in range(cfg.n_translation):
        src = _source_sentence(lang, cfg, rng)
        translation.append((l1(src), l2(src)))

    rng = np.random.default_rng([cfg.seed, 2])
    entailment = []
    for _ in range(cfg.n_entailment):
        src = _source_sentence(lang, cfg, rng)
        entailment.append((l2(src), l2(paraphrase(src, cfg.edit_rate, lang.probs, rng))))

    rng = np.random.default_rng([cfg.seed, 3])
    captions = []
    for _ in range(cfg.n_eval):
        src = _source_sentence(lang, cfg, rng)
        captions.append((l2(paraphrase(src, cfg.edit_rate, lang.probs, rng)),
                         l2(paraphrase(src, cfg.edit_rate, lang.probs, rng))))

    tag = f"synth(seed={cfg.seed})"
    return (PairDataset(translation, "translation", tag + "/translation"),
            PairDataset(entailment, "entailment", tag + "/entailment"),
            PairDataset(captions, "caption", tag + "/eval"))
