"""IBM Model 1 lexical translation table, trained with EM.

Used as the external-aligner baseline for candidate lists and as the
dictionary for replacing emitted UNK tokens.  Probabilities are
``t(target | source)`` with one NULL source token per sentence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accumulator import CandidateTable, rank_rows
from .tokenizer import SPECIALS, Vocabulary

NULL_ID = -1
NULL_TOKEN = "<null>"
PRUNE_BELOW = 1e-6


@dataclass
class LexicalTable:
    probs: dict[int, dict[int, float]]
    perplexities: list[float] = field(default_factory=list)

    def row_sums(self) -> dict[int, float]:
        return {s: math.fsum(row.values()) for s, row in self.probs.items()}

    def save_tsv(self, path: str | Path, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> None:
        def name(s: int) -> str:
            return NULL_TOKEN if s == NULL_ID else src_vocab.tokens[s]

        lines = []
        for s in sorted(self.probs, key=name):
            for t, p in sorted(self.probs[s].items(), key=lambda kv: (-kv[1], kv[0])):
                lines.append(f"{name(s)}\t{tgt_vocab.tokens[t]}\t{p!r}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load_tsv(cls, path: str | Path, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> LexicalTable:
        probs: dict[int, dict[int, float]] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected source, target, probability")
            src, tgt, p = parts
            s = NULL_ID if src == NULL_TOKEN else src_vocab.index.get(src)
            t = tgt_vocab.index.get(tgt)
            if s is None or t is None:
                continue
            probs.setdefault(s, {})[t] = float(p)
        return cls(probs)


def train_model1(corpus: Sequence[tuple[Sequence[int], Sequence[int]]], iterations: int = 5,
                 prune: float = PRUNE_BELOW) -> LexicalTable:
    """EM training from uniform ``t``.  ``perplexities[k]`` is the per-token training
    perplexity before iteration ``k + 1``; the last entry is after the final M-step."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    pairs = [(list(s), list(t)) for s, t in corpus if len(t) > 0]
    if not pairs:
        raise ValueError("empty corpus")

    # One entry per (target occurrence, source position incl. NULL); int32 keeps
    # the index arrays small on 100k-pair corpora.
    src_parts, tgt_parts, occ_parts, len_parts = [], [], [], []
    occ = 0
    for src, tgt in pairs:
        srcs = np.array([NULL_ID] + src, dtype=np.int32)
        tgts = np.asarray(tgt, dtype=np.int32)
        src_parts.append(np.tile(srcs, len(tgts)))
        tgt_parts.append(np.repeat(tgts, len(srcs)))
        occ_parts.append(np.repeat(np.arange(occ, occ + len(tgts), dtype=np.int32), len(srcs)))
        len_parts.append(np.full(len(tgts), len(srcs), dtype=np.float64))
        occ += len(tgts)
    entry_src = np.concatenate(src_parts)
    entry_tgt = np.concatenate(tgt_parts)
    entry_occ = np.concatenate(occ_parts)
    occ_len = np.concatenate(len_parts)
    del src_parts, tgt_parts, occ_parts

    width = int(entry_tgt.max()) + 1
    n_types = np.unique(entry_tgt).size
    keys = (entry_src.astype(np.int64) + 1) * width + entry_tgt
    del entry_src, entry_tgt
    cell_keys, entry_cell = np.unique(keys, return_inverse=True)
    del keys
    entry_cell = entry_cell.astype(np.int32)
    cell_src = cell_keys // width - 1
    cell_tgt = cell_keys % width
    _, cell_row = np.unique(cell_src, return_inverse=True)

    t_cell = np.full(cell_keys.size, 1.0 / n_types)
    perplexities = []
    for _ in range(iterations):
        num = t_cell[entry_cell]
        denom = np.bincount(entry_occ, weights=num, minlength=occ)
        perplexities.append(_perplexity(denom, occ_len))
        counts = np.bincount(entry_cell, weights=num / denom[entry_occ], minlength=cell_keys.size)
        totals = np.bincount(cell_row, weights=counts)
        t_cell = counts / totals[cell_row]
    denom = np.bincount(entry_occ, weights=t_cell[entry_cell], minlength=occ)
    perplexities.append(_perplexity(denom, occ_len))

    probs: dict[int, dict[int, float]] = {}
    for s, t, p in zip(cell_src.tolist(), cell_tgt.tolist(), t_cell.tolist()):
        if p >= prune:
            probs.setdefault(s, {})[t] = p
    for s, row in probs.items():
        z = math.fsum(row.values())
        probs[s] = {t: p / z for t, p in row.items()}
    return LexicalTable(probs, perplexities)


def _perplexity(denom: np.ndarray, occ_len: np.ndarray) -> float:
    log_lik = float(np.sum(np.log(denom / occ_len)))
    return math.exp(-log_lik / denom.size)


def candidates_from_model1(table: LexicalTable, n: int) -> CandidateTable:
    return rank_rows(table.probs, n, skip=(NULL_ID,))


def unk_dictionary(table: LexicalTable, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> dict[str, str]:
    """Best target word per source word.  The NULL row and rows whose best target is a
    special token are left out, so UNK replacement falls back to copying the source word."""
    out = {}
    for s, row in table.probs.items():
        if s == NULL_ID or not row:
            continue
        best = min(row.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if tgt_vocab.tokens[best] in SPECIALS or src_vocab.tokens[s] in SPECIALS:
            continue
        out[src_vocab.tokens[s]] = tgt_vocab.tokens[best]
    return out
