"""Corpus BLEU-4 and candidate-list coverage."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .accumulator import CandidateTable
from .decoder import select_vocabulary

CSV_FIELDS = ("bleu", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len")


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smoothed: bool = False

    def row(self) -> dict:
        p1, p2, p3, p4 = self.precisions
        return {"bleu": f"{self.bleu:.6f}", "p1": f"{p1:.6f}", "p2": f"{p2:.6f}", "p3": f"{p3:.6f}",
                "p4": f"{p4:.6f}", "bp": f"{self.brevity_penalty:.6f}",
                "hyp_len": self.hyp_len, "ref_len": self.ref_len}


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence], smooth: bool = False) -> BleuReport:
    """Corpus BLEU-4 with clipped counts, single reference.

    ``smooth`` adds one to every n-gram numerator and denominator for n > 1, which
    keeps tiny corpora from collapsing to zero; reports mark it.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = []
    for n in range(4):
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        precisions.append(m / t if t else 0.0)
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / 4.0)
    return BleuReport(score, tuple(precisions), bp, hyp_len, ref_len, smooth)


def candidate_coverage(table: CandidateTable, pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Fraction of reference target tokens inside their sentence's selected vocabulary."""
    hit = total = 0
    for src, ref in pairs:
        allowed = set(select_vocabulary(table, src).tolist())
        total += len(ref)
        hit += sum(t in allowed for t in ref)
    return hit / total if total else 1.0
