import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from attnvocab import model
from attnvocab.model import (
    FlopCounter, StepContext, attention, batch_loss, batch_loss_and_grads, decoder_step, encode,
    gru_cell, gru_weights, init_params, initial_decoder_state, load_checkpoint, pad_batch,
    save_checkpoint, sentence_loss_and_grads,
)

E, H, VS, VT = 5, 4, 9, 11


@pytest.fixture
def params():
    return init_params(E, H, VS, VT, seed=3, scale=0.5)


def finite_difference_errors(params, src, tgt, active=None, coords_per_tensor=6, eps=1e-5, seed=0):
    """Max relative error between analytic and central-difference gradients."""
    _, grads = sentence_loss_and_grads(params, src, tgt, active)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        for idx in rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            up = sentence_loss_and_grads(params, src, tgt, active)[0]
            flat[idx] = old - eps
            down = sentence_loss_and_grads(params, src, tgt, active)[0]
            flat[idx] = old
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].reshape(-1)[idx]
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, rel)
    return worst


def test_gru_cell_matches_scalar_loop(params):
    rng = np.random.default_rng(0)
    w = gru_weights(params, "enc_f")
    x, h = rng.normal(size=E), rng.normal(size=H)
    expect = oracles.gru_scalar(*(a.tolist() for a in w), x.tolist(), h.tolist())
    np.testing.assert_allclose(gru_cell(w, x, h), expect, rtol=0, atol=1e-13)


def test_gru_dimension_mismatch(params):
    with pytest.raises(ValueError):
        gru_cell(gru_weights(params, "enc_f"), np.zeros(E + 1), np.zeros(H))


def test_gru_saturation_stays_finite(params):
    w = gru_weights(params, "enc_f")
    big = gru_cell(w, np.full(E, 1e4), np.zeros(H))
    assert np.all(np.isfinite(big)) and np.all(np.abs(big) <= 1.0)


def test_encoder_matches_chained_cells(params):
    src = [4, 7, 5]
    ann = encode(params, src)
    expect = oracles.encode_loop(params.tensors, H, src)
    np.testing.assert_allclose(ann, np.stack(expect), atol=1e-13)
    fw, bw = gru_weights(params, "enc_f"), gru_weights(params, "enc_b")
    emb = params["src_emb"]
    f1 = gru_cell(fw, emb[4], np.zeros(H))
    f2 = gru_cell(fw, emb[7], f1)
    b3 = gru_cell(bw, emb[5], np.zeros(H))
    np.testing.assert_allclose(ann[1, H:], f2, atol=1e-15)
    np.testing.assert_allclose(ann[2, :H], b3, atol=1e-15)


def test_single_token_source(params):
    ann = encode(params, [6])
    assert ann.shape == (1, 2 * H)
    np.testing.assert_allclose(ann[0, :H], gru_cell(gru_weights(params, "enc_b"), params["src_emb"][6], np.zeros(H)))


def test_empty_source_rejected(params):
    with pytest.raises(ValueError):
        encode(params, [])


def test_initial_state_and_attention_match_loops(params):
    src = [4, 5, 6, 7]
    ann = encode(params, src)
    np.testing.assert_allclose(initial_decoder_state(params, ann),
                               oracles.init_state_loop(params.tensors, H, ann), atol=1e-14)
    s_prime = np.random.default_rng(1).normal(size=H)
    alpha, ctx = attention(params, s_prime, ann)
    a_ref, c_ref = oracles.attention_loop(params.tensors, s_prime, ann)
    np.testing.assert_allclose(alpha, a_ref, atol=1e-14)
    np.testing.assert_allclose(ctx, c_ref, atol=1e-14)
    assert abs(alpha.sum() - 1.0) < 1e-12 and np.all(alpha >= 0)


def test_attention_single_position_is_one(params):
    ann = encode(params, [5])
    alpha, ctx = attention(params, np.zeros(H), ann)
    assert alpha.tolist() == [1.0]
    np.testing.assert_allclose(ctx, ann[0])


def test_attention_equal_annotations_uniform(params):
    ann = np.tile(np.random.default_rng(2).normal(size=2 * H), (3, 1))
    alpha, _ = attention(params, np.ones(H), ann)
    np.testing.assert_allclose(alpha, [1 / 3] * 3, atol=1e-15)


def test_attention_dimension_mismatch(params):
    with pytest.raises(ValueError):
        attention(params, np.zeros(H + 1), np.zeros((2, 2 * H)))


def test_decoder_step_matches_loop(params):
    ann = encode(params, [4, 8])
    s0 = initial_decoder_state(params, ann)
    out = decoder_step(params, 2, s0, ann)
    s_ref, a_ref, p_ref = oracles.step_loop(params.tensors, H, ann, 2, s0)
    np.testing.assert_allclose(out.s, s_ref, atol=1e-13)
    np.testing.assert_allclose(out.alpha, a_ref, atol=1e-13)
    np.testing.assert_allclose(out.dist, [p_ref[t] for t in range(VT)], atol=1e-13)
    assert abs(out.dist.sum() - 1.0) < 1e-12


def test_restricted_softmax_is_renormalized_full(params):
    ann = encode(params, [4, 8, 5])
    s0 = initial_decoder_state(params, ann)
    full = decoder_step(params, 2, s0, ann).dist
    active = [3, 1, 9, 5]
    restricted = decoder_step(params, 2, s0, ann, active)
    assert restricted.active_ids.tolist() == [1, 3, 5, 9]
    expect = full[restricted.active_ids] / full[restricted.active_ids].sum()
    np.testing.assert_allclose(restricted.dist, expect, rtol=0, atol=1e-12)


def test_full_vocab_as_active_set_is_identity(params):
    ann = encode(params, [4, 8])
    s0 = initial_decoder_state(params, ann)
    a = decoder_step(params, 2, s0, ann)
    b = decoder_step(params, 2, s0, ann, range(VT))
    np.testing.assert_allclose(a.dist, b.dist, atol=1e-15)


def test_singleton_active_set(params):
    ann = encode(params, [4])
    out = decoder_step(params, 2, initial_decoder_state(params, ann), ann, [7])
    assert out.dist.tolist() == [1.0]


def test_empty_or_invalid_active_set(params):
    ann = encode(params, [4])
    s0 = initial_decoder_state(params, ann)
    with pytest.raises(ValueError, match="empty candidate vocabulary"):
        decoder_step(params, 2, s0, ann, [])
    with pytest.raises(ValueError):
        decoder_step(params, 2, s0, ann, [VT])


def test_flop_counter_proportional_to_active_size(params):
    ann = encode(params, [4, 5])
    s0 = np.stack([initial_decoder_state(params, ann)] * 2)
    for size in (2, 5, VT):
        counter = FlopCounter()
        ctx = StepContext(params, ann, np.arange(size) if size < VT else None, counter)
        ctx.step(np.array([2, 2]), s0)
        assert counter.per_step == size * E


def test_loss_matches_oracle_log_probability(params):
    src, tgt = [4, 6, 5], [7, 8, 3]
    loss, _ = sentence_loss_and_grads(params, src, tgt)
    oracle = oracles.FastOracle(params.tensors, H)
    assert loss == pytest.approx(-oracle.sentence_logprob(src, tgt), abs=1e-12)
    active = [1, 3, 7, 8, 10]
    rloss, _ = sentence_loss_and_grads(params, src, tgt, active)
    assert rloss == pytest.approx(-oracle.sentence_logprob(src, tgt, active), abs=1e-12)
    assert rloss <= loss


def test_gold_token_pruned(params):
    with pytest.raises(ValueError, match="gold token pruned"):
        sentence_loss_and_grads(params, [4], [7, 3], active_vocab=[3, 8])


def test_gradient_check_full_and_restricted(params):
    assert finite_difference_errors(params, [4, 6, 5, 8], [7, 9, 3]) < 1e-4
    assert finite_difference_errors(params, [4, 6], [7, 3], active=[1, 3, 7, 10], seed=1) < 1e-4


def test_restricted_grads_zero_outside_active(params):
    _, grads = sentence_loss_and_grads(params, [4, 6], [7, 3], active_vocab=[1, 3, 7])
    outside = [t for t in range(VT) if t not in (1, 3, 7)]
    assert not grads["proj_W"][outside].any()
    assert not grads["proj_b"][outside].any()


def test_padded_batch_equals_per_sentence_sum(params):
    pairs = [([4, 5, 6, 7], [8, 9, 3]), ([5], [3]), ([6, 8], [10, 4, 7, 3])]
    src, src_mask = pad_batch([s for s, _ in pairs])
    tgt, tgt_mask = pad_batch([t for _, t in pairs])
    loss, grads, alphas = batch_loss_and_grads(params, src, src_mask, tgt, tgt_mask)
    total = 0.0
    summed = params.zeros_like()
    for s, t in pairs:
        l, g = sentence_loss_and_grads(params, s, t)
        total += l
        for k in summed:
            summed[k] += g[k]
    assert loss == pytest.approx(total, abs=1e-12)
    for k in summed:
        np.testing.assert_allclose(grads[k], summed[k], atol=1e-12)
    assert np.all(alphas[1, 0, 1:] == 0.0)
    np.testing.assert_allclose(alphas.sum(axis=2), 1.0, atol=1e-12)
    assert batch_loss(params, src, src_mask, tgt, tgt_mask) == loss


def test_init_is_seeded_and_bounded():
    a = init_params(E, H, VS, VT, seed=11)
    b = init_params(E, H, VS, VT, seed=11)
    c = init_params(E, H, VS, VT, seed=12)
    assert all(np.array_equal(a[k], b[k]) for k in model.PARAM_ORDER)
    assert not np.array_equal(a["proj_W"], c["proj_W"])
    assert all(np.abs(a[k]).max() <= 0.08 for k in model.PARAM_ORDER)


def test_checkpoint_round_trip(tmp_path, params):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    back = load_checkpoint(path)
    assert (back.d_emb, back.d_h, back.src_vocab, back.tgt_vocab) == (E, H, VS, VT)
    assert all(np.array_equal(back[k], params[k]) for k in model.PARAM_ORDER)


def test_checkpoint_corruption(tmp_path, params):
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    data = path.read_bytes()
    (tmp_path / "short").write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"X" + data[1:])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "magic")


def test_param_shape_validation(params):
    bad = dict(params.tensors)
    bad["proj_b"] = np.zeros(VT + 1)
    with pytest.raises(ValueError):
        model.ModelParams(E, H, VS, VT, bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sets(st.integers(0, VT - 1), min_size=1, max_size=VT))
def test_restricted_distribution_property(seed, active):
    p = init_params(E, H, VS, VT, seed=seed, scale=1.0)
    rng = np.random.default_rng(seed)
    ann = encode(p, rng.integers(0, VS, size=rng.integers(1, 5)).tolist())
    s0 = initial_decoder_state(p, ann)
    prev = int(rng.integers(0, VT))
    full = decoder_step(p, prev, s0, ann).dist
    res = decoder_step(p, prev, s0, ann, sorted(active))
    ids = sorted(active)
    np.testing.assert_allclose(res.dist, full[ids] / full[ids].sum(), rtol=0, atol=1e-12)
