"""Subword (BPE) and word-frequency vocabularies.

BPE merges are learned on plain character sequences within each word.  When a
word is segmented, every subword except the last carries a trailing ``@@``
marker, so ``"lowest"`` becomes ``["low@@", "e@@", "s@@", "t"]`` and joining
``"X@@ Y"`` back to ``"XY"`` restores the original text.
"""
from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

MARKER = "@@"
BPE_HEADER = "#attnvocab-bpe v1"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> Vocabulary:
        rest = [t for t in tokens if t not in SPECIALS]
        return cls(SPECIALS + tuple(rest))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise ValueError(f"token id {i} out of range")
            out.append(self.tokens[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def encode(vocab: Vocabulary, tokens: Iterable[str]) -> list[int]:
    return vocab.encode(tokens)


def decode(vocab: Vocabulary, ids: Iterable[int]) -> list[str]:
    return vocab.decode(ids)


def build_word_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """The ``max_size - 4`` most frequent words plus the specials; ties broken lexicographically."""
    if max_size <= 4:
        raise ValueError("max_size must exceed the 4 special tokens")
    counts = Counter(tok for line in corpus for tok in line.split())
    if not counts:
        raise ValueError("empty corpus")
    for special in SPECIALS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary.from_tokens(tok for tok, _ in ranked[: max_size - 4])


def oov_rate(vocab: Vocabulary, corpus: Iterable[str]) -> float:
    total = unknown = 0
    for line in corpus:
        for tok in line.split():
            total += 1
            unknown += tok not in vocab.index
    return unknown / total if total else 0.0


# ---------------------------------------------------------------------------
# BPE


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_ranks", {pair: i for i, pair in enumerate(self.merges)})
        object.__setattr__(self, "_segment", lru_cache(maxsize=1 << 16)(self._segment_word))

    def _segment_word(self, word: str) -> tuple[str, ...]:
        symbols = list(word)
        ranks = self._ranks
        while len(symbols) > 1:
            best = min(((ranks.get(p, len(ranks)), i) for i, p in enumerate(zip(symbols, symbols[1:]))))
            if best[0] == len(ranks):
                break
            left, right = self.merges[best[0]]
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(symbols)

    def segment(self, word: str) -> list[str]:
        parts = self._segment(word)
        return [p + MARKER for p in parts[:-1]] + [parts[-1]]

    def save(self, path: str | Path) -> None:
        lines = [BPE_HEADER] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> BpeModel:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != BPE_HEADER:
            raise ValueError(f"{path}: missing BPE header {BPE_HEADER!r}")
        merges = []
        for n, line in enumerate(lines[1:], start=2):
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"{path}:{n}: malformed merge line")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def bpe_learn(corpus: Iterable[str], num_merges: int) -> BpeModel:
    """Greedy pair merging; ties go to the lexicographically smallest pair.

    Stops early once no adjacent pair occurs at least twice.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq = Counter(tok for line in corpus for tok in line.split())
    if not word_freq:
        raise ValueError("empty corpus")
    words = [list(w) for w in word_freq]
    freqs = list(word_freq.values())

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg:
            continue  # stale entry
        if -neg < 2:
            break
        merges.append(pair)
        left, right = pair
        changed: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            symbols = words[wi]
            f = freqs[wi]
            for old in zip(symbols, symbols[1:]):
                pair_counts[old] -= f
                changed.add(old)
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            words[wi] = merged
            for new in zip(merged, merged[1:]):
                pair_counts[new] += f
                where[new].add(wi)
                changed.add(new)
        for p in changed:
            c = pair_counts[p]
            if c <= 0:
                pair_counts.pop(p, None)
                where.pop(p, None)
            elif p != pair:
                heapq.heappush(heap, (-c, p))
        pair_counts.pop(pair, None)
    return BpeModel(tuple(merges))


def bpe_apply(model: BpeModel, line: str) -> list[str]:
    out: list[str] = []
    for word in line.split():
        out.extend(model.segment(word))
    return out


def detokenize(tokens: Sequence[str]) -> str:
    """Join subwords: ``"X@@ Y"`` becomes ``"XY"``."""
    return " ".join(tokens).replace(MARKER + " ", "").removesuffix(MARKER)
