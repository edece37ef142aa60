import csv

import numpy as np
import pytest

from attnvocab.accumulator import AccumulatorConfig, CandidateTable
from attnvocab.model import init_params
from attnvocab.tokenizer import EOS_ID, PAD_ID, UNK_ID
from attnvocab.trainer import (
    AdamState, TrainConfig, adam_update, continue_train, dynamic_vocab_batch, make_batches, train, write_log,
)

CORPUS = [([4, 5, 6], [7, 8]), ([5, 6], [8, 9]), ([6, 4], [9, 7]), ([4], [7]), ([5, 4, 6, 7], [8, 7, 9, 10])] * 3


def tiny(seed=0):
    return init_params(6, 5, 9, 12, seed=seed)


def test_adam_scalar_first_step():
    p = {"w": np.array([0.5])}
    state = AdamState({"w": np.zeros(1)}, {"w": np.zeros(1)})
    adam_update(p, {"w": np.array([2.0])}, state, lr=0.001)
    # bias-corrected first step moves by lr * g / (|g| + eps)
    assert p["w"][0] == pytest.approx(0.5 - 0.001 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    adam_update(p, {"w": np.array([-1.0])}, state, lr=0.001)
    m = (0.9 * 0.1 * 2.0 + 0.1 * -1.0) / (1 - 0.9 ** 2)
    v = (0.999 * 0.001 * 4.0 + 0.001 * 1.0) / (1 - 0.999 ** 2)
    assert p["w"][0] == pytest.approx(0.5 - 0.001 * 2.0 / (2.0 + 1e-8) - 0.001 * m / (np.sqrt(v) + 1e-8), abs=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="bogus")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(dynamic_n=0)


def test_make_batches_partition_and_determinism():
    lengths = list(np.random.default_rng(0).integers(1, 30, size=203))
    a = make_batches(lengths, 8, np.random.default_rng(5))
    b = make_batches(lengths, 8, np.random.default_rng(5))
    assert [x.tolist() for x in a] == [x.tolist() for x in b]
    assert sorted(np.concatenate(a).tolist()) == list(range(203))
    assert all(len(x) <= 8 for x in a)


def test_full_mode_leaves_matrix_empty():
    res = train(TrainConfig(epochs=2, batch_size=4, mode="full"), CORPUS, tiny())
    assert res.matrix.nonzeros == 0
    assert len(res.log) == 2 and len(res.snapshots) == 2


def test_delay_keeps_epoch_one_empty():
    cfg = TrainConfig(epochs=2, batch_size=4, mode="scratch", accumulator=AccumulatorConfig(0.1, 1))
    res = train(cfg, CORPUS, tiny())
    assert res.snapshots[0].nonzeros == 0
    assert res.snapshots[1].nonzeros > 0
    assert res.matrix.epochs == 1


def test_snapshots_only_grow():
    cfg = TrainConfig(epochs=3, batch_size=4, mode="scratch", accumulator=AccumulatorConfig(0.1, 0))
    res = train(cfg, CORPUS, tiny())
    for early, late in zip(res.snapshots, res.snapshots[1:]):
        for s, row in early.rows.items():
            for t, c in row.items():
                assert late.rows[s][t] >= c


def test_loss_decreases():
    res = train(TrainConfig(epochs=8, batch_size=4, lr=0.01, mode="full"), CORPUS, tiny())
    assert res.log[-1].mean_loss < res.log[0].mean_loss


def test_training_is_bit_reproducible():
    cfg = TrainConfig(epochs=2, batch_size=4, mode="scratch", accumulator=AccumulatorConfig(0.1, 0))
    a = train(cfg, CORPUS, tiny())
    b = train(cfg, CORPUS, tiny())
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params.tensors)
    assert a.matrix.rows == b.matrix.rows


def test_input_params_not_mutated():
    p = tiny()
    before = p["proj_W"].copy()
    train(TrainConfig(epochs=1, batch_size=4, mode="full"), CORPUS, p)
    assert np.array_equal(p["proj_W"], before)


def test_continue_train_fills_matrix_from_first_step():
    base = train(TrainConfig(epochs=2, batch_size=4, mode="full"), CORPUS, tiny())
    res = continue_train(base.params, CORPUS, TrainConfig(batch_size=4))
    assert len(res.log) == 1
    assert res.matrix.nonzeros > 0 and res.matrix.epochs == 1
    assert {s for s in res.matrix.rows} <= {4, 5, 6, 7}


def test_dynamic_vocab_contains_gold_and_specials():
    table = CandidateTable(2, {4: (7, 8), 5: (9, 10)})
    ids = dynamic_vocab_batch(table, [[4], [5, 6]], 1, [[11, EOS_ID]])
    assert ids.tolist() == [PAD_ID, UNK_ID, 2, EOS_ID, 7, 9, 11]


def test_dynamic_mode_runs_without_pruning():
    cfg = TrainConfig(epochs=3, batch_size=4, mode="dynamic", dynamic_n=2)
    res = train(cfg, CORPUS, tiny())
    assert res.pruned_errors == 0
    assert res.snapshots[0].nonzeros > 0


def test_shadow_thresholds_match_separate_runs():
    cfg = TrainConfig(epochs=2, batch_size=4, mode="scratch", accumulator=AccumulatorConfig(0.1, 0),
                      shadow_thresholds=(0.2, 0.05))
    res = train(cfg, CORPUS, tiny())
    for thr in (0.2, 0.05):
        solo = train(TrainConfig(epochs=2, batch_size=4, mode="scratch", accumulator=AccumulatorConfig(thr, 0)),
                     CORPUS, tiny())
        assert res.shadows[thr].rows == solo.matrix.rows


def test_overlong_and_empty_pairs_skipped():
    corpus = CORPUS + [([], [7]), ([4] * 50, [7])]
    res = train(TrainConfig(epochs=1, batch_size=4, mode="full", max_len=20), corpus, tiny())
    assert res.skipped == 2
    with pytest.raises(ValueError):
        train(TrainConfig(epochs=1, mode="full"), [([], [7])], tiny())


def test_log_csv(tmp_path):
    res = train(TrainConfig(epochs=2, batch_size=4, mode="scratch"), CORPUS, tiny())
    path = tmp_path / "log.csv"
    write_log(res.log, path)
    rows = list(csv.DictReader(open(path)))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert rows[0]["matrix_nonzeros"] == "0"
