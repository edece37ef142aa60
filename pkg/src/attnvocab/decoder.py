"""Beam search with optional candidate-restricted softmax, UNK replacement, and timing."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .accumulator import CandidateTable
from .model import FlopCounter, ModelParams, StepContext, encode, initial_decoder_state, normalize_active
from .tokenizer import BOS_ID, EOS_ID, PAD, UNK_ID, Vocabulary

ALWAYS_ACTIVE = (UNK_ID, EOS_ID)


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    max_length: int = 50
    length_normalization: bool = False

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    state: np.ndarray = field(repr=False)
    attention: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    def output(self) -> list[int]:
        """Emitted ids without the closing EOS."""
        return list(self.tokens[:-1] if self.finished else self.tokens)

    def ranking_score(self, normalize: bool) -> float:
        return self.score / max(len(self.tokens), 1) if normalize else self.score


@dataclass
class BeamResult:
    best: Hypothesis
    finished: list[Hypothesis]


def select_vocabulary(table: CandidateTable, source_ids: Sequence[int]) -> np.ndarray:
    """Sorted union of the candidate lists of the distinct source tokens, plus UNK and EOS."""
    ids = set(ALWAYS_ACTIVE)
    for s in set(source_ids):
        ids.update(table.get(s))
    return np.array(sorted(ids), dtype=np.int64)


def _best(hyps: Sequence[Hypothesis], normalize: bool) -> Hypothesis:
    return min(hyps, key=lambda hyp: (-hyp.ranking_score(normalize), hyp.tokens))


def beam_search(params: ModelParams, source_ids: Sequence[int], beam: BeamConfig = BeamConfig(),
                vocab=None, counter: FlopCounter | None = None) -> BeamResult:
    """Beam search over the conditional-GRU decoder.

    Expansions are limited to ``vocab`` when given.  Candidates are ranked by
    cumulative log-probability, ties by the lexicographically smaller token
    sequence.  Without length normalization the search stops once no live
    hypothesis can still beat the best finished one (scores only decrease).
    """
    active = normalize_active(vocab, params.tgt_vocab)
    ids = (np.arange(params.tgt_vocab) if active is None else active).tolist()
    h = encode(params, source_ids)
    ctx = StepContext(params, h, active, counter)
    live = [Hypothesis((), 0.0, initial_decoder_state(params, h))]
    finished: list[Hypothesis] = []
    k = beam.beam_size
    norm = beam.length_normalization
    for _ in range(beam.max_length):
        prev = np.array([hyp.tokens[-1] if hyp.tokens else BOS_ID for hyp in live])
        states = np.stack([hyp.state for hyp in live])
        _, s, alpha, _, logp = ctx.step(prev, states)
        flat = (np.array([hyp.score for hyp in live])[:, None] + logp).ravel()
        if flat.size > k:
            kth = np.partition(flat, flat.size - k)[flat.size - k]
            picks = np.flatnonzero(flat >= kth)
        else:
            picks = np.arange(flat.size)
        width = len(ids)
        cands = []
        for p, score in zip(picks.tolist(), flat[picks].tolist()):
            row, col = divmod(p, width)
            cands.append((-score, live[row].tokens + (ids[col],), row))
        cands.sort(key=lambda c: (c[0], c[1]))
        next_live = []
        for neg, tokens, row in cands[:k]:
            hyp = Hypothesis(tokens, -neg, s[row], live[row].attention + (alpha[row],))
            (finished if tokens[-1] == EOS_ID else next_live).append(hyp)
        live = next_live
        if not live:
            break
        if not norm and finished and max(hyp.score for hyp in live) < max(f.score for f in finished):
            break
    best = _best(finished, norm) if finished else _best(live, norm)
    return BeamResult(best, finished)


def unk_replace(hypothesis: Hypothesis, source_tokens: Sequence[str], dictionary: Mapping[str, str],
                tgt_vocab: Vocabulary) -> list[str]:
    """Replace each emitted UNK by the translation of its most-attended source token,
    or by that source token itself when the dictionary has no entry."""
    out = []
    for t, tid in enumerate(hypothesis.output()):
        if tid != UNK_ID:
            out.append(tgt_vocab.tokens[tid])
            continue
        weights = np.array(hypothesis.attention[t][:len(source_tokens)], dtype=np.float64)
        for j, tok in enumerate(source_tokens):
            if tok == PAD:
                weights[j] = -np.inf
        word = source_tokens[int(np.argmax(weights))]
        out.append(dictionary.get(word, word))
    return out


@dataclass
class TimedDecode:
    translations: list[list[int]]
    mean_seconds: float
    std_seconds: float
    selection_seconds: float
    mean_active_vocab: float
    avg_cands_per_word: float
    flops_per_step: float
    hypotheses: list[Hypothesis] = field(default_factory=list, repr=False)


def avg_cands_per_word(table: CandidateTable, sources: Sequence[Sequence[int]]) -> float:
    """Mean over source token occurrences of the candidate-list length."""
    lengths = [len(table.get(s)) for sent in sources for s in sent]
    return sum(lengths) / len(lengths) if lengths else 0.0


def timed_decode(params: ModelParams, sources: Sequence[Sequence[int]], beam: BeamConfig,
                 table: CandidateTable | None = None, repetitions: int = 10) -> TimedDecode:
    """Decode the corpus ``repetitions`` times; wall time covers selection plus search."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    walls, selects = [], []
    translations: list[list[int]] | None = None
    hyps: list[Hypothesis] = []
    active_sizes: list[int] = []
    counter = FlopCounter()
    for rep in range(repetitions):
        sel_total = 0.0
        outs, rep_hyps = [], []
        start = time.perf_counter()
        for src in sources:
            vocab = None
            if table is not None:
                t0 = time.perf_counter()
                vocab = select_vocabulary(table, src)
                sel_total += time.perf_counter() - t0
                if rep == 0:
                    active_sizes.append(vocab.size)
            elif rep == 0:
                active_sizes.append(params.tgt_vocab)
            result = beam_search(params, src, beam, vocab, counter if rep == 0 else None)
            outs.append(result.best.output())
            rep_hyps.append(result.best)
        walls.append(time.perf_counter() - start)
        selects.append(sel_total)
        if translations is None:
            translations, hyps = outs, rep_hyps
        elif outs != translations:
            raise RuntimeError("non-deterministic decoding across repetitions")
    return TimedDecode(
        translations=translations,
        mean_seconds=statistics.fmean(walls),
        std_seconds=statistics.stdev(walls) if len(walls) > 1 else 0.0,
        selection_seconds=statistics.fmean(selects),
        mean_active_vocab=statistics.fmean(active_sizes) if active_sizes else 0.0,
        avg_cands_per_word=avg_cands_per_word(table, sources) if table is not None else float(params.tgt_vocab),
        flops_per_step=counter.per_step,
        hypotheses=hyps,
    )
