"""Mini-batch Adam training with alignment accumulation and dynamic vocabulary selection."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import accumulator as acc
from .accumulator import AccumulatorConfig, CandidateTable, SparseAlignmentMatrix
from .model import PARAM_ORDER, ModelParams, batch_loss_and_grads, load_checkpoint, pad_batch
from .tokenizer import EOS_ID, SPECIALS

logger = logging.getLogger(__name__)

MODES = ("full", "scratch", "continue", "dynamic")
LOG_FIELDS = ("epoch", "mean_loss", "wall_seconds", "matrix_nonzeros", "matrix_density",
              "avg_cands_at_20", "avg_cands_at_50", "avg_cands_at_100", "avg_cands_at_200")

Pair = tuple[Sequence[int], Sequence[int]]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 1
    mode: str = "scratch"
    accumulator: AccumulatorConfig = AccumulatorConfig()
    dynamic_n: int = 100
    max_len: int = 80
    clip_norm: float = 5.0
    # Extra matrices recorded side by side with the main one (same attention
    # stream, different thresholds).  Training itself is unaffected.
    shadow_thresholds: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.dynamic_n < 1:
            raise ValueError("dynamic_n must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like())


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam step, in place on ``params`` and ``state``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m, v, p = state.m[name], state.v[name], params[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    wall_seconds: float
    matrix_nonzeros: int
    matrix_density: float
    avg_cands: dict[int, float]

    def row(self) -> dict:
        out = {"epoch": self.epoch, "mean_loss": f"{self.mean_loss:.6f}",
               "wall_seconds": f"{self.wall_seconds:.3f}", "matrix_nonzeros": self.matrix_nonzeros,
               "matrix_density": f"{self.matrix_density:.8f}"}
        for n in (20, 50, 100, 200):
            out[f"avg_cands_at_{n}"] = f"{self.avg_cands[n]:.4f}"
        return out


def write_log(log: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for entry in log:
            writer.writerow(entry.row())


@dataclass
class TrainResult:
    params: ModelParams
    matrix: SparseAlignmentMatrix
    log: list[EpochLog]
    snapshots: list[SparseAlignmentMatrix] = field(default_factory=list)
    shadows: dict[float, SparseAlignmentMatrix] = field(default_factory=dict)
    skipped: int = 0
    pruned_errors: int = 0
    # gold target tokens outside their batch's candidate union (dynamic mode)
    gold_forced: int = 0
    # sha256 of all parameters after each epoch, for reproducibility checks
    digests: list[str] = field(default_factory=list)


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name in PARAM_ORDER:
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def make_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, sort windows of 20 batches by length, cut, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    lengths = np.asarray(lengths)
    window = batch_size * 20
    batches = []
    for start in range(0, len(order), window):
        chunk = order[start:start + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def dynamic_vocab_batch(table: CandidateTable, batch_sources: Sequence[Sequence[int]], dynamic_n: int,
                        batch_targets: Sequence[Sequence[int]] = ()) -> np.ndarray:
    """Union of the top ``dynamic_n`` candidates of every batch source token, plus the
    special tokens and every gold target id.  Returned sorted."""
    ids = set(range(len(SPECIALS)))
    for sent in batch_sources:
        for s in set(sent):
            ids.update(table.get(s)[:dynamic_n])
    for sent in batch_targets:
        ids.update(sent)
    return np.array(sorted(ids), dtype=np.int64)


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(grads[k], grads[k])) for k in PARAM_ORDER))


def train(config: TrainConfig, corpus: Sequence[Pair], params: ModelParams | str | Path,
          matrix: SparseAlignmentMatrix | None = None) -> TrainResult:
    """Train on ``(source ids, target ids)`` pairs; targets get EOS appended.

    Modes: ``full`` never accumulates; ``scratch`` accumulates after the configured
    delay; ``continue`` accumulates from the first step; ``dynamic`` accumulates
    from the first step and, from epoch 2 on, restricts each batch's softmax to
    the candidates of its source tokens.
    """
    if not isinstance(params, ModelParams):
        params = load_checkpoint(params)
    else:
        params = params.copy()
    rng = np.random.default_rng(config.seed)
    acc_cfg = config.accumulator
    if config.mode in ("continue", "dynamic") and acc_cfg.delay_epochs:
        if config.mode == "dynamic":
            logger.info("dynamic mode: accumulation starts in epoch 1 (delay %d ignored)", acc_cfg.delay_epochs)
        acc_cfg = replace(acc_cfg, delay_epochs=0)
    accumulate = config.mode != "full"

    if matrix is None:
        matrix = SparseAlignmentMatrix(params.src_vocab, params.tgt_vocab, acc_cfg.alpha_threshold)
    shadows = {thr: SparseAlignmentMatrix(params.src_vocab, params.tgt_vocab, thr)
               for thr in config.shadow_thresholds}
    shadow_cfgs = {thr: replace(acc_cfg, alpha_threshold=thr) for thr in shadows}

    pairs = []
    skipped = 0
    for src, tgt in corpus:
        if len(src) == 0 or len(src) > config.max_len or len(tgt) + 1 > config.max_len:
            skipped += 1
            continue
        pairs.append((list(src), list(tgt) + [EOS_ID]))
    if skipped:
        logger.warning("skipped %d sentence pairs that are empty or longer than %d tokens", skipped, config.max_len)
    if not pairs:
        raise ValueError("no trainable sentence pairs")

    state = AdamState.zeros(params)
    log: list[EpochLog] = []
    snapshots: list[SparseAlignmentMatrix] = []
    digests: list[str] = []
    pruned_errors = gold_forced = 0
    table: CandidateTable | None = None
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        if config.mode == "dynamic" and epoch >= 2:
            table = acc.top_n(acc.trim(matrix), config.dynamic_n)
        total_loss = 0.0
        total_tokens = 0
        for idx in make_batches([len(t) for _, t in pairs], config.batch_size, rng):
            srcs = [pairs[i][0] for i in idx]
            tgts = [pairs[i][1] for i in idx]
            S, Sm = pad_batch(srcs)
            T, Tm = pad_batch(tgts)
            active = None
            if table is not None:
                active = dynamic_vocab_batch(table, srcs, config.dynamic_n, tgts)
                from_lists = dynamic_vocab_batch(table, srcs, config.dynamic_n)
                gold_forced += int(np.count_nonzero(~np.isin(T[Tm > 0], from_lists)))
            try:
                loss, grads, alphas = batch_loss_and_grads(params, S, Sm, T, Tm, active)
            except ValueError as exc:
                if "gold token pruned" not in str(exc):
                    raise
                pruned_errors += 1
                loss, grads, alphas = batch_loss_and_grads(params, S, Sm, T, Tm, None)
            total_loss += loss
            total_tokens += int(Tm.sum())
            scale = 1.0 / len(idx)
            norm = _global_norm(grads) * scale
            if norm > config.clip_norm:
                scale *= config.clip_norm / norm
            for g in grads.values():
                g *= scale
            adam_update(params.tensors, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            if accumulate:
                acc.record_batch(matrix, alphas, S, Sm, T, Tm, acc_cfg, epoch)
                for thr, shadow in shadows.items():
                    acc.record_batch(shadow, alphas, S, Sm, T, Tm, shadow_cfgs[thr], epoch)
        if accumulate and epoch > acc_cfg.delay_epochs:
            matrix.epochs += 1
            for shadow in shadows.values():
                shadow.epochs += 1
        stats = acc.density_stats(matrix)
        entry = EpochLog(epoch, total_loss / max(total_tokens, 1), time.perf_counter() - start,
                         matrix.nonzeros, stats.density,
                         {n: acc.avg_candidates(matrix, n) for n in (20, 50, 100, 200)})
        log.append(entry)
        snapshots.append(matrix.copy())
        digests.append(params_digest(params))
        logger.info("epoch %d loss %.4f nnz %d (%.1fs)", epoch, entry.mean_loss, entry.matrix_nonzeros,
                    entry.wall_seconds)
    return TrainResult(params, matrix, log, snapshots, shadows, skipped, pruned_errors, gold_forced, digests)


def continue_train(checkpoint: ModelParams | str | Path, corpus: Sequence[Pair], config: TrainConfig) -> TrainResult:
    """One extra epoch on a trained model with accumulation active from the first step."""
    cfg = replace(config, epochs=1, mode="continue")
    return train(cfg, corpus, checkpoint)
