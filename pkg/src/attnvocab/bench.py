"""Benchmark sweeps producing the CSV artifacts: candidate-size sweep, threshold
sweep, and per-epoch snapshot curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import accumulator as acc
from .accumulator import CandidateTable, SparseAlignmentMatrix
from .decoder import BeamConfig, Hypothesis, avg_cands_per_word, beam_search, select_vocabulary, timed_decode
from .metrics import bleu
from .model import ModelParams

TIMING_FIELDS = ("policy", "n", "mean_seconds", "std_seconds", "selection_seconds", "speedup", "avg_cands_per_word",
                 "flops_per_step", "flop_reduction", "mean_active_vocab", "bleu")
THRESHOLD_FIELDS = ("alpha_thr", "density", "stored_bytes", "avg_cands_per_word", "mean_active_vocab", "bleu")
EPOCH_FIELDS = ("epoch", "n", "bleu", "avg_cands_per_word", "mean_active_vocab", "full_bleu")

DEFAULT_SIZES = (20, 50, 100, 200)
DEFAULT_THRESHOLDS = (0.05, 0.1, 0.2, 0.25)

# (hypothesis, source ids) -> output words
Postprocess = Callable[[Hypothesis, Sequence[int]], list[str]]


@dataclass
class EvalSet:
    sources: list[list[int]]
    references: list[list[str]]
    postprocess: Postprocess

    def score(self, hyps: Sequence[Hypothesis]) -> float:
        outs = [self.postprocess(h, s) for h, s in zip(hyps, self.sources)]
        return 100.0 * bleu(outs, self.references).bleu


def decode_all(params: ModelParams, sources: Sequence[Sequence[int]], beam: BeamConfig,
               table: CandidateTable | None = None) -> list[Hypothesis]:
    out = []
    for src in sources:
        vocab = select_vocabulary(table, src) if table is not None else None
        out.append(beam_search(params, src, beam, vocab).best)
    return out


def mean_active(table: CandidateTable, sources: Sequence[Sequence[int]]) -> float:
    return sum(select_vocabulary(table, s).size for s in sources) / len(sources)


def timing_sweep(params: ModelParams, data: EvalSet, beam: BeamConfig,
                 tables: Mapping[tuple[str, int], CandidateTable], repetitions: int = 10) -> list[dict]:
    """One row per policy; the first row is the full-vocabulary baseline.

    Cells run serially.  Speedup is baseline mean wall time over the cell's."""
    base = timed_decode(params, data.sources, beam, None, repetitions)
    rows = [_timing_row("full", params.tgt_vocab, base, base, data, params)]
    for (policy, n), table in tables.items():
        result = timed_decode(params, data.sources, beam, table, repetitions)
        rows.append(_timing_row(policy, n, result, base, data, params))
    return rows


def _timing_row(policy, n, result, base, data: EvalSet, params: ModelParams) -> dict:
    return {
        "policy": policy,
        "n": n,
        "mean_seconds": result.mean_seconds,
        "std_seconds": result.std_seconds,
        "selection_seconds": result.selection_seconds,
        "speedup": 1.0 if result is base else base.mean_seconds / result.mean_seconds,
        "avg_cands_per_word": result.avg_cands_per_word,
        "flops_per_step": result.flops_per_step,
        "flop_reduction": base.flops_per_step / result.flops_per_step if result.flops_per_step else 0.0,
        "mean_active_vocab": result.mean_active_vocab,
        "bleu": data.score(result.hypotheses),
    }


def threshold_sweep(params: ModelParams, data: EvalSet, beam: BeamConfig,
                    matrices: Mapping[float, SparseAlignmentMatrix], n: int = 100) -> list[dict]:
    rows = []
    for thr in sorted(matrices):
        matrix = matrices[thr]
        stats = acc.density_stats(matrix)
        table = acc.top_n(matrix, n)
        rows.append({
            "alpha_thr": thr,
            "density": stats.density,
            "stored_bytes": stats.stored_bytes,
            "avg_cands_per_word": avg_cands_per_word(table, data.sources),
            "mean_active_vocab": mean_active(table, data.sources),
            "bleu": data.score(decode_all(params, data.sources, beam, table)),
        })
    return rows


def epoch_curve(params: ModelParams, data: EvalSet, beam: BeamConfig,
                snapshots: Sequence[tuple[int, SparseAlignmentMatrix]], sizes: Iterable[int] = DEFAULT_SIZES) -> list[dict]:
    """Fixed model, one candidate table per (snapshot, n)."""
    if not snapshots:
        raise ValueError("no matrix snapshots")
    full = data.score(decode_all(params, data.sources, beam))
    rows = []
    for epoch, matrix in snapshots:
        for n in sizes:
            table = acc.top_n(matrix, n)
            rows.append({
                "epoch": epoch,
                "n": n,
                "bleu": data.score(decode_all(params, data.sources, beam, table)),
                "avg_cands_per_word": avg_cands_per_word(table, data.sources),
                "mean_active_vocab": mean_active(table, data.sources),
                "full_bleu": full,
            })
    return rows


def write_csv(rows: Sequence[dict], fields: Sequence[str], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fields})


def _fmt(value):
    return f"{value:.6f}" if isinstance(value, float) else value
