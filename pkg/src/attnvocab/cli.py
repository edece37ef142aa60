"""Command-line entry point: ``attnvocab <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.  CSV goes to
files; human-readable summaries go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

log = logging.getLogger("attnvocab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _limit_threads() -> None:
    # must run before numpy is first imported
    threads = os.environ.get("ATTNVOCAB_THREADS", "1")
    for var in THREAD_VARS:
        os.environ.setdefault(var, threads)


# ---------------------------------------------------------------------------
# option plumbing: defaults < JSON config < explicit flags

TRAIN_DEFAULTS = {
    "mode": "scratch", "epochs": 10, "batch_size": 32, "lr": 0.001, "alpha_thr": 0.1, "delay_epochs": 1,
    "dynamic_n": 100, "seed": 1, "d_emb": 64, "d_h": 128, "max_len": 80, "clip_norm": 5.0,
    "dtype": "float32", "shadow_thr": [],
}
BEAM_DEFAULTS = {"beam_size": 5, "max_length": 50, "length_norm": False}


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    merged = dict(defaults)
    merged.update({k: v for k, v in config.items() if k in defaults})
    merged.update({k: v for k, v in vars(args).items() if v is not None or k not in merged})
    return argparse.Namespace(**merged)


def _opt(p, *names, **kw):
    # options default to None so the JSON config can fill them in
    p.add_argument(*names, default=None, **kw)


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_lines(path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")


# ---------------------------------------------------------------------------
# tokenizer plumbing


def cmd_bpe_learn(args):
    from .tokenizer import bpe_learn
    _require(args.input)
    model = bpe_learn(_read_lines(args.input), args.merges)
    model.save(args.output)
    print(f"learned {len(model.merges)} merges", file=sys.stderr)


def cmd_bpe_apply(args):
    from .tokenizer import BpeModel, bpe_apply
    _require(args.input, args.model)
    model = BpeModel.load(args.model)
    _write_lines(args.output, (" ".join(bpe_apply(model, line)) for line in _read_lines(args.input)))


def cmd_detok(args):
    from .tokenizer import detokenize
    _require(args.input)
    _write_lines(args.output, (detokenize(line.split()) for line in _read_lines(args.input)))


def cmd_build_vocab(args):
    from .tokenizer import build_word_vocab
    _require(args.input)
    vocab = build_word_vocab(_read_lines(args.input), args.vocab_size)
    vocab.save(args.output)
    print(f"vocabulary of {len(vocab)} tokens", file=sys.stderr)


def cmd_make_toy(args):
    from .toy import ToyConfig, make_corpus
    corpus = make_corpus(ToyConfig(n_pairs=args.n_pairs, n_test=args.n_test, seed=args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, pairs in (("train", corpus.train), ("test", corpus.test)):
        _write_lines(out / f"{name}.src", (s for s, _ in pairs))
        _write_lines(out / f"{name}.tgt", (t for _, t in pairs))


# ---------------------------------------------------------------------------
# training


def _load_pairs(src_path, tgt_path, src_vocab, tgt_vocab):
    _require(src_path, tgt_path)
    src, tgt = _read_lines(src_path), _read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} and {tgt_path} have different line counts")
    return [(src_vocab.encode(s.split()), tgt_vocab.encode(t.split())) for s, t in zip(src, tgt)]


def _train_config(a):
    from .accumulator import AccumulatorConfig
    from .trainer import TrainConfig
    return TrainConfig(
        epochs=int(a.epochs), batch_size=int(a.batch_size), lr=float(a.lr), seed=int(a.seed), mode=a.mode,
        accumulator=AccumulatorConfig(float(a.alpha_thr), int(a.delay_epochs)), dynamic_n=int(a.dynamic_n),
        max_len=int(a.max_len), clip_norm=float(a.clip_norm),
        shadow_thresholds=tuple(float(t) for t in a.shadow_thr),
    )


def _write_training_outputs(result, out_dir: Path, first_epoch: int = 1) -> None:
    from . import accumulator as acc
    from .model import save_checkpoint
    from .trainer import write_log
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out_dir / "model.ckpt")
    acc.save(result.matrix, out_dir / "matrix.bin")
    for i, snap in enumerate(result.snapshots):
        acc.save(snap, out_dir / f"matrix.epoch{first_epoch + i}.bin")
    for thr, shadow in result.shadows.items():
        acc.save(shadow, out_dir / f"matrix.thr{thr:g}.bin")
    write_log(result.log, out_dir / "train_log.csv")


def cmd_train(args):
    import numpy as np
    from .model import init_params, load_checkpoint
    from .tokenizer import Vocabulary
    from .trainer import train
    a = _resolve(args, TRAIN_DEFAULTS)
    _require(a.src, a.tgt, a.src_vocab, a.tgt_vocab, getattr(a, "init", None))
    sv, tv = Vocabulary.load(a.src_vocab), Vocabulary.load(a.tgt_vocab)
    config = _train_config(a)
    dtype = {"float32": np.float32, "float64": np.float64}[a.dtype]
    if getattr(a, "init", None):
        params = load_checkpoint(a.init).astype(dtype)
    else:
        params = init_params(int(a.d_emb), int(a.d_h), len(sv), len(tv), seed=int(a.seed), dtype=dtype)
    if (params.src_vocab, params.tgt_vocab) != (len(sv), len(tv)):
        raise ValueError("checkpoint vocabulary sizes do not match the vocabulary files")
    result = train(config, _load_pairs(a.src, a.tgt, sv, tv), params)
    _write_training_outputs(result, Path(a.out_dir))
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs, final loss {last.mean_loss:.4f}, matrix nnz {last.matrix_nonzeros}",
          file=sys.stderr)


def cmd_continue_train(args):
    import numpy as np
    from .model import load_checkpoint
    from .tokenizer import Vocabulary
    from .trainer import continue_train
    a = _resolve(args, TRAIN_DEFAULTS)
    _require(a.src, a.tgt, a.src_vocab, a.tgt_vocab, a.checkpoint)
    if int(a.epochs) != 1 and args.epochs is not None:
        raise ValueError("continue-train runs exactly one epoch")
    sv, tv = Vocabulary.load(a.src_vocab), Vocabulary.load(a.tgt_vocab)
    dtype = {"float32": np.float32, "float64": np.float64}[a.dtype]
    params = load_checkpoint(a.checkpoint).astype(dtype)
    result = continue_train(params, _load_pairs(a.src, a.tgt, sv, tv), _train_config(a))
    _write_training_outputs(result, Path(a.out_dir))
    print(f"continue epoch done, matrix nnz {result.matrix.nonzeros}", file=sys.stderr)


# ---------------------------------------------------------------------------
# candidates, decoding, benchmarks


def cmd_build_candidates(args):
    from . import accumulator as acc
    from .model1 import candidates_from_model1, train_model1
    from .tokenizer import Vocabulary
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    _require(args.src_vocab, args.tgt_vocab)
    sv, tv = Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab)
    if args.from_model1:
        if not (args.src and args.tgt):
            raise UsageError("--from-model1 needs --src and --tgt training corpora")
        lex = train_model1(_load_pairs(args.src, args.tgt, sv, tv), iterations=args.iterations)
        if args.lex_output:
            lex.save_tsv(args.lex_output, sv, tv)
        table = candidates_from_model1(lex, args.n)
    else:
        if not args.input:
            raise UsageError("--input matrix or --from-model1 is required")
        _require(args.input)
        table = acc.top_n(acc.load(args.input), args.n)
    table.save_tsv(args.output, sv, tv)
    print(f"{len(table.entries)} candidate lists (n={args.n})", file=sys.stderr)


def _beam(a):
    from .decoder import BeamConfig
    return BeamConfig(int(a.beam_size), int(a.max_length), bool(a.length_norm))


def _postprocess(tv, src_tokens_of, unk_dict):
    from .decoder import unk_replace
    from .tokenizer import detokenize

    def run(hyp, src_ids):
        if unk_dict is not None:
            words = unk_replace(hyp, src_tokens_of(src_ids), unk_dict, tv)
        else:
            words = tv.decode(hyp.output())
        return detokenize(words).split()
    return run


def _decoding_setup(a):
    from .model import load_checkpoint
    from .model1 import LexicalTable, unk_dictionary
    from .tokenizer import Vocabulary
    _require(a.model, a.src_vocab, a.tgt_vocab, getattr(a, "unk_dict", None))
    params = load_checkpoint(a.model)
    sv, tv = Vocabulary.load(a.src_vocab), Vocabulary.load(a.tgt_vocab)
    if (params.src_vocab, params.tgt_vocab) != (len(sv), len(tv)):
        raise ValueError("checkpoint vocabulary sizes do not match the vocabulary files")
    unk = None
    if getattr(a, "unk_dict", None):
        unk = unk_dictionary(LexicalTable.load_tsv(a.unk_dict, sv, tv), sv, tv)
    return params, sv, tv, unk


def _eval_set(a, sv, tv, unk):
    from .bench import EvalSet
    from .tokenizer import detokenize
    _require(a.src_test, a.tgt_test)
    src_lines, tgt_lines = _read_lines(a.src_test), _read_lines(a.tgt_test)
    if len(src_lines) != len(tgt_lines):
        raise ValueError("test source and reference line counts differ")
    if a.limit:
        src_lines, tgt_lines = src_lines[:a.limit], tgt_lines[:a.limit]
    sources = [sv.encode(line.split()) for line in src_lines]
    token_of = {tuple(ids): line.split() for ids, line in zip(sources, src_lines)}
    refs = [detokenize(line.split()).split() for line in tgt_lines]
    return EvalSet(sources, refs, _postprocess(tv, lambda ids: token_of[tuple(ids)], unk))


def cmd_decode(args):
    from .accumulator import CandidateTable
    from .bench import decode_all
    from .decoder import unk_replace
    from .tokenizer import detokenize
    a = _resolve(args, BEAM_DEFAULTS)
    params, sv, tv, unk = _decoding_setup(a)
    _require(a.input, a.candidates)
    lines = _read_lines(a.input)
    table = CandidateTable.load_tsv(a.candidates, sv, tv, a.n) if a.candidates else None
    sources = [sv.encode(line.split()) for line in lines]
    if any(len(s) == 0 for s in sources):
        raise ValueError("empty source sentence in input")
    out = []
    for line, hyp in zip(lines, decode_all(params, sources, _beam(a), table)):
        words = unk_replace(hyp, line.split(), unk, tv) if unk is not None else tv.decode(hyp.output())
        out.append(detokenize(words))
    _write_lines(a.output, out)


def cmd_bench(args):
    from . import accumulator as acc
    from . import bench
    from .model1 import LexicalTable, candidates_from_model1
    a = _resolve(args, BEAM_DEFAULTS)
    params, sv, tv, unk = _decoding_setup(a)
    data = _eval_set(a, sv, tv, unk)
    beam = _beam(a)
    tables = {}
    if a.matrix:
        _require(a.matrix)
        matrix = acc.load(a.matrix)
        for n in a.sizes:
            tables[("attention", n)] = acc.top_n(matrix, n)
    if a.model1_lex:
        _require(a.model1_lex)
        lex = LexicalTable.load_tsv(a.model1_lex, sv, tv)
        for n in a.sizes:
            tables[("model1", n)] = candidates_from_model1(lex, n)
    rows = bench.timing_sweep(params, data, beam, tables, a.reps)
    bench.write_csv(rows, bench.TIMING_FIELDS, a.output)
    for row in rows:
        print(f"{row['policy']:>9} n={row['n']:<5} speedup={row['speedup']:.2f} "
              f"cands={row['avg_cands_per_word']:.1f} bleu={row['bleu']:.2f}", file=sys.stderr)
    if a.alpha_matrices:
        if not a.table2_output:
            raise UsageError("--alpha-matrices needs --table2-output")
        _require(*a.alpha_matrices)
        matrices = {}
        for path in a.alpha_matrices:
            m = acc.load(path)
            matrices[m.alpha_threshold] = m
        rows2 = bench.threshold_sweep(params, data, beam, matrices, a.table2_n)
        bench.write_csv(rows2, bench.THRESHOLD_FIELDS, a.table2_output)


def cmd_epoch_curve(args):
    import re
    from . import accumulator as acc
    from . import bench
    a = _resolve(args, BEAM_DEFAULTS)
    if not a.snapshots:
        raise ValueError("no matrix snapshots given")
    _require(*a.snapshots)
    params, sv, tv, unk = _decoding_setup(a)
    data = _eval_set(a, sv, tv, unk)
    snaps = []
    for i, path in enumerate(a.snapshots, start=1):
        m = re.search(r"epoch(\d+)", Path(path).name)
        snaps.append((int(m.group(1)) if m else i, acc.load(path)))
    rows = bench.epoch_curve(params, data, _beam(a), snaps, a.sizes)
    bench.write_csv(rows, bench.EPOCH_FIELDS, a.output)


# ---------------------------------------------------------------------------


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive and non-empty")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnvocab", description="Attention-derived vocabulary selection for NMT.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bpe-learn", help="learn BPE merges")
    p.add_argument("--input", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment text with a BPE model")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("detok", help="undo BPE segmentation")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_detok)

    p = sub.add_parser("build-vocab", help="frequency-ranked vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("make-toy", help="write the synthetic toy corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-pairs", type=int, default=80000)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_make_toy)

    for name, func in (("train", cmd_train), ("continue-train", cmd_continue_train)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} and accumulate alignments")
        p.add_argument("--src", required=True)
        p.add_argument("--tgt", required=True)
        p.add_argument("--src-vocab", required=True)
        p.add_argument("--tgt-vocab", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--config")
        if name == "train":
            p.add_argument("--init", help="start from this checkpoint")
            _opt(p, "--mode", choices=("full", "scratch", "continue", "dynamic"))
        else:
            p.add_argument("--checkpoint", required=True)
        _opt(p, "--epochs", type=int)
        _opt(p, "--batch-size", type=int)
        _opt(p, "--lr", type=float)
        _opt(p, "--alpha-thr", type=float)
        _opt(p, "--delay-epochs", type=int)
        _opt(p, "--dynamic-n", type=int)
        _opt(p, "--seed", type=int)
        _opt(p, "--d-emb", type=int)
        _opt(p, "--d-h", type=int)
        _opt(p, "--max-len", type=int)
        _opt(p, "--clip-norm", type=float)
        _opt(p, "--dtype", choices=("float32", "float64"))
        _opt(p, "--shadow-thr", type=float, nargs="*", help="extra thresholds recorded alongside")
        p.set_defaults(func=func)

    p = sub.add_parser("build-candidates", help="top-n candidate lists per source token")
    p.add_argument("--input", help="alignment matrix file")
    p.add_argument("--from-model1", action="store_true")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--lex-output", help="also write the Model-1 lexical table")
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_candidates)

    def decoding_opts(p):
        p.add_argument("--model", required=True)
        p.add_argument("--src-vocab", required=True)
        p.add_argument("--tgt-vocab", required=True)
        p.add_argument("--unk-dict", help="Model-1 lexical table for UNK replacement")
        p.add_argument("--config")
        _opt(p, "--beam-size", type=int)
        _opt(p, "--max-length", type=int)
        _opt(p, "--length-norm", action="store_const", const=True)

    p = sub.add_parser("decode", help="translate a source file")
    decoding_opts(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--candidates", help="candidate TSV restricting the softmax")
    p.add_argument("--n", type=int, help="truncate candidate lists to n")
    p.set_defaults(func=cmd_decode)

    def eval_opts(p):
        p.add_argument("--src-test", required=True)
        p.add_argument("--tgt-test", required=True)
        p.add_argument("--limit", type=int, default=0, help="use only the first N test sentences")
        p.add_argument("--sizes", type=_sizes, default=[20, 50, 100, 200])

    p = sub.add_parser("bench", help="candidate-size and threshold sweeps")
    decoding_opts(p)
    eval_opts(p)
    p.add_argument("--matrix", help="attention alignment matrix")
    p.add_argument("--model1-lex", help="Model-1 lexical table")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--output", required=True)
    p.add_argument("--alpha-matrices", nargs="*")
    p.add_argument("--table2-output")
    p.add_argument("--table2-n", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("epoch-curve", help="fixed model, per-epoch matrix snapshots")
    decoding_opts(p)
    eval_opts(p)
    p.add_argument("--snapshots", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_epoch_curve)
    return parser


def main(argv=None) -> int:
    _limit_threads()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"attnvocab: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"attnvocab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
