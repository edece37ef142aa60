"""Soft alignments accumulated from attention, and the candidate tables built from them.

Every attention weight that clears the threshold is added as a fractional count
to ``counts[source_token][target_token]``.  Increments are rounded to a fixed
grid of ``2**-32`` before they are added.  Sums of grid values stay exact while
a cell holds less than ``2**21``, so accumulation order (single pass, sharded
workers, any merge tree) never changes a stored count.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .tokenizer import PAD_ID, Vocabulary

QUANTUM_SCALE = float(2 ** 32)
MATRIX_MAGIC = b"ATTNVALN"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<IIIdII")  # version, |V_s|, |V_y|, alpha_thr, epochs, rows
_ROW = struct.Struct("<II")
ENTRY_BYTES = 12  # uint32 target id + float64 count
TRIM_EPS = 1e-8


def quantize(weight: float) -> float:
    return round(weight * QUANTUM_SCALE) / QUANTUM_SCALE


@dataclass(frozen=True)
class AccumulatorConfig:
    alpha_threshold: float = 0.1
    delay_epochs: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_threshold < 1.0:
            raise ValueError("alpha_threshold must lie in [0, 1)")
        if self.delay_epochs < 0:
            raise ValueError("delay_epochs must be >= 0")


@dataclass
class SparseAlignmentMatrix:
    src_size: int
    tgt_size: int
    alpha_threshold: float = 0.1
    epochs: int = 0
    rows: dict[int, dict[int, float]] = field(default_factory=dict)

    def add(self, src: int, tgt: int, weight: float) -> None:
        if not (0 <= src < self.src_size and 0 <= tgt < self.tgt_size):
            raise ValueError(f"cell ({src}, {tgt}) outside {self.src_size}x{self.tgt_size}")
        inc = quantize(weight)
        if inc <= 0.0:
            return
        row = self.rows.get(src)
        if row is None:
            row = self.rows[src] = {}
        row[tgt] = row.get(tgt, 0.0) + inc

    @property
    def nonzeros(self) -> int:
        return sum(len(r) for r in self.rows.values())

    def total_mass(self) -> float:
        return math.fsum(c for r in self.rows.values() for c in r.values())

    def copy(self) -> SparseAlignmentMatrix:
        return SparseAlignmentMatrix(self.src_size, self.tgt_size, self.alpha_threshold, self.epochs,
                                     {s: dict(r) for s, r in self.rows.items()})

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.src_size, self.tgt_size))
        for s, row in self.rows.items():
            for t, c in row.items():
                dense[s, t] = c
        return dense

    def same_cells(self, other: SparseAlignmentMatrix) -> bool:
        """Bit-exact comparison of dims and counts (ignores epoch metadata)."""
        return (self.src_size, self.tgt_size) == (other.src_size, other.tgt_size) and self.rows == other.rows


def record_step(matrix: SparseAlignmentMatrix, alpha, source_ids, target_id: int,
                config: AccumulatorConfig, current_epoch: int) -> SparseAlignmentMatrix:
    """Add one decoder step's attention row.  ``current_epoch`` is 1-based."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] != len(source_ids):
        raise ValueError("attention row and source length differ")
    if current_epoch <= config.delay_epochs:
        return matrix
    thr = config.alpha_threshold
    for j, (a, s) in enumerate(zip(alpha.tolist(), source_ids)):
        if a > thr and s != PAD_ID:
            matrix.add(int(s), int(target_id), a)
    return matrix


def record_batch(matrix: SparseAlignmentMatrix, alphas: np.ndarray, src: np.ndarray, src_mask: np.ndarray,
                 tgt: np.ndarray, tgt_mask: np.ndarray, config: AccumulatorConfig,
                 current_epoch: int) -> SparseAlignmentMatrix:
    """Same as calling :func:`record_step` for every sentence and real target step in order.

    ``alphas`` is (B, T, L); masks mark real positions.
    """
    if current_epoch <= config.delay_epochs:
        return matrix
    keep = (alphas > config.alpha_threshold) & (src_mask[:, None, :] > 0) & (tgt_mask[:, :, None] > 0)
    keep &= (src != PAD_ID)[:, None, :]
    b, t, j = np.nonzero(keep)
    weights = alphas[b, t, j].tolist()
    srcs = src[b, j].tolist()
    tgts = tgt[b, t].tolist()
    for s, y, w in zip(srcs, tgts, weights):
        matrix.add(s, y, w)
    return matrix


def merge(a: SparseAlignmentMatrix, b: SparseAlignmentMatrix) -> SparseAlignmentMatrix:
    if (a.src_size, a.tgt_size) != (b.src_size, b.tgt_size):
        raise ValueError("cannot merge matrices with different dimensions")
    if a.alpha_threshold != b.alpha_threshold:
        raise ValueError("cannot merge matrices accumulated with different thresholds")
    out = a.copy()
    out.epochs = max(a.epochs, b.epochs)
    for s in sorted(b.rows):
        row = out.rows.setdefault(s, {})
        for t, c in sorted(b.rows[s].items()):
            row[t] = row.get(t, 0.0) + c
    return out


def trim(matrix: SparseAlignmentMatrix, eps: float = TRIM_EPS) -> SparseAlignmentMatrix:
    """Drop cells with count below ``eps`` (and rows left empty)."""
    out = SparseAlignmentMatrix(matrix.src_size, matrix.tgt_size, matrix.alpha_threshold, matrix.epochs)
    for s, row in matrix.rows.items():
        kept = {t: c for t, c in row.items() if c >= eps}
        if kept:
            out.rows[s] = kept
    return out


def normalize(matrix: SparseAlignmentMatrix) -> SparseAlignmentMatrix:
    """Per-source-row conditional distribution over target tokens."""
    out = SparseAlignmentMatrix(matrix.src_size, matrix.tgt_size, matrix.alpha_threshold, matrix.epochs)
    for s, row in matrix.rows.items():
        if not row:
            continue
        z = math.fsum(row.values())
        out.rows[s] = {t: c / z for t, c in row.items()}
    return out


@dataclass
class CandidateTable:
    n: int
    entries: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def get(self, src: int) -> tuple[int, ...]:
        return self.entries.get(src, ())

    def truncate(self, n: int) -> CandidateTable:
        return CandidateTable(n, {s: c[:n] for s, c in self.entries.items()})

    def save_tsv(self, path: str | Path, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> None:
        lines = []
        for s in sorted(self.entries):
            fields = [src_vocab.tokens[s]] + [tgt_vocab.tokens[t] for t in self.entries[s]]
            lines.append("\t".join(fields))
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load_tsv(cls, path: str | Path, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 n: int | None = None) -> CandidateTable:
        entries = {}
        longest = 0
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line:
                continue
            fields = line.split("\t")
            if fields[0] not in src_vocab.index:
                continue
            tgts = tuple(tgt_vocab.index[t] for t in fields[1:] if t in tgt_vocab.index)
            if n is not None:
                tgts = tgts[:n]
            entries[src_vocab.index[fields[0]]] = tgts
            longest = max(longest, len(tgts))
        return cls(n if n is not None else max(longest, 1), entries)


def rank_rows(rows: Mapping[int, Mapping[int, float]], n: int, skip: Iterable[int] = ()) -> CandidateTable:
    """Top-n targets per row by descending score, ties by ascending target id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    skip = set(skip)
    entries = {}
    for s, row in rows.items():
        if s in skip or not row:
            continue
        ranked = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
        entries[s] = tuple(t for t, _ in ranked)
    return CandidateTable(n, entries)


def top_n(matrix: SparseAlignmentMatrix, n: int) -> CandidateTable:
    return rank_rows(normalize(matrix).rows, n)


@dataclass(frozen=True)
class DensityStats:
    density: float
    stored_bytes: int
    avg_targets_per_source: float


def density_stats(matrix: SparseAlignmentMatrix) -> DensityStats:
    nnz = matrix.nonzeros
    nonempty = [len(r) for r in matrix.rows.values() if r]
    cells = matrix.src_size * matrix.tgt_size
    return DensityStats(
        density=nnz / cells if cells else 0.0,
        stored_bytes=serialized_size(matrix),
        avg_targets_per_source=sum(nonempty) / len(nonempty) if nonempty else 0.0,
    )


def avg_candidates(matrix: SparseAlignmentMatrix, n: int) -> float:
    """Mean list length over non-empty rows once capped at ``n``."""
    lengths = [min(len(r), n) for r in matrix.rows.values() if r]
    return sum(lengths) / len(lengths) if lengths else 0.0


def serialized_size(matrix: SparseAlignmentMatrix) -> int:
    rows = [r for r in matrix.rows.values() if r]
    return len(MATRIX_MAGIC) + _HEADER.size + len(rows) * _ROW.size + ENTRY_BYTES * sum(len(r) for r in rows)


def save(matrix: SparseAlignmentMatrix, path: str | Path) -> None:
    rows = [(s, matrix.rows[s]) for s in sorted(matrix.rows) if matrix.rows[s]]
    parts = [MATRIX_MAGIC, _HEADER.pack(MATRIX_VERSION, matrix.src_size, matrix.tgt_size,
                                        matrix.alpha_threshold, matrix.epochs, len(rows))]
    for s, row in rows:
        parts.append(_ROW.pack(s, len(row)))
        tids = np.array(sorted(row), dtype="<u4")
        cells = np.empty(len(row), dtype=[("t", "<u4"), ("c", "<f8")])
        cells["t"] = tids
        cells["c"] = [row[t] for t in tids.tolist()]
        parts.append(cells.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path: str | Path) -> SparseAlignmentMatrix:
    data = Path(path).read_bytes()
    head = len(MATRIX_MAGIC)
    if data[:head] != MATRIX_MAGIC:
        raise ValueError(f"{path}: not an alignment matrix file")
    if len(data) < head + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    version, n_src, n_tgt, thr, epochs, n_rows = _HEADER.unpack_from(data, head)
    if version != MATRIX_VERSION:
        raise ValueError(f"{path}: unsupported matrix version {version}")
    matrix = SparseAlignmentMatrix(n_src, n_tgt, thr, epochs)
    rows = {}
    offset = head + _HEADER.size
    cell_dtype = np.dtype([("t", "<u4"), ("c", "<f8")])
    for _ in range(n_rows):
        if offset + _ROW.size > len(data):
            raise ValueError(f"{path}: truncated matrix file")
        s, count = _ROW.unpack_from(data, offset)
        offset += _ROW.size
        if offset + count * ENTRY_BYTES > len(data):
            raise ValueError(f"{path}: truncated matrix file")
        cells = np.frombuffer(data, dtype=cell_dtype, count=count, offset=offset)
        offset += count * ENTRY_BYTES
        if s >= n_src or (count and int(cells["t"].max()) >= n_tgt):
            raise ValueError(f"{path}: cell outside declared dimensions")
        rows[s] = dict(zip(cells["t"].tolist(), cells["c"].tolist()))
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after matrix data")
    matrix.rows = rows
    return matrix
