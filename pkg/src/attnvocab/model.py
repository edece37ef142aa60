"""Attention encoder-decoder with a conditional GRU decoder and analytic gradients.

Layout of the network:

* bi-directional GRU encoder; each annotation is ``[backward_i; forward_i]``
* decoder state ``s_t`` produced by two GRU transitions around the attention:
  ``s'_t = u(s_{t-1}, emb(y_{t-1}))``, attention over the annotations given
  ``s'_t``, then ``s_t = q(s'_t, context_t)``
* output network ``o_t = tanh(W_o [s_t; emb(y_{t-1}); context_t] + b_o)``
  followed by a projection to the (possibly restricted) target vocabulary.

All functions operate on plain numpy arrays.  Batched internals use padded
``(batch, length)`` id matrices plus float masks; the public single-sentence
functions are thin wrappers around them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .tokenizer import BOS_ID, PAD_ID

CHECKPOINT_MAGIC = b"ATTNVCKP"
CHECKPOINT_VERSION = 1

# Fixed tensor order; checkpoints and gradient-norm reductions follow it.
PARAM_ORDER = (
    "src_emb", "tgt_emb",
    "enc_f_W", "enc_f_U", "enc_f_Uh", "enc_f_b",
    "enc_b_W", "enc_b_U", "enc_b_Uh", "enc_b_b",
    "init_W", "init_b",
    "dec_u_W", "dec_u_U", "dec_u_Uh", "dec_u_b",
    "att_W", "att_U", "att_v",
    "dec_q_W", "dec_q_U", "dec_q_Uh", "dec_q_b",
    "out_W", "out_b",
    "proj_W", "proj_b",
)


def param_shapes(d_emb: int, d_h: int, src_vocab: int, tgt_vocab: int) -> dict[str, tuple[int, ...]]:
    """Shapes of every tensor.  Attention width is ``d_h``, output width ``d_emb``."""
    e, h, c = d_emb, d_h, 2 * d_h
    shapes = {"src_emb": (src_vocab, e), "tgt_emb": (tgt_vocab, e)}
    for name, d_in in (("enc_f", e), ("enc_b", e), ("dec_u", e), ("dec_q", c)):
        shapes[f"{name}_W"] = (d_in, 3 * h)
        shapes[f"{name}_U"] = (h, 2 * h)
        shapes[f"{name}_Uh"] = (h, h)
        shapes[f"{name}_b"] = (3 * h,)
    shapes.update(
        init_W=(h, h), init_b=(h,),
        att_W=(h, h), att_U=(c, h), att_v=(h,),
        out_W=(h + e + c, e), out_b=(e,),
        proj_W=(tgt_vocab, e), proj_b=(tgt_vocab,),
    )
    return {name: shapes[name] for name in PARAM_ORDER}


@dataclass
class ModelParams:
    d_emb: int
    d_h: int
    src_vocab: int
    tgt_vocab: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        expected = param_shapes(self.d_emb, self.d_h, self.src_vocab, self.tgt_vocab)
        if set(self.tensors) != set(expected):
            raise ValueError("parameter set does not match the model layout")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.tensors[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["proj_W"].dtype

    def copy(self) -> ModelParams:
        return ModelParams(self.d_emb, self.d_h, self.src_vocab, self.tgt_vocab,
                           {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def astype(self, dtype) -> ModelParams:
        return ModelParams(self.d_emb, self.d_h, self.src_vocab, self.tgt_vocab,
                           {k: v.astype(dtype) for k, v in self.tensors.items()})


def init_params(d_emb: int, d_h: int, src_vocab: int, tgt_vocab: int,
                seed: int = 0, scale: float = 0.08, dtype=np.float64) -> ModelParams:
    """Uniform(-scale, scale) initialization, drawn in ``PARAM_ORDER``."""
    rng = np.random.default_rng(seed)
    tensors = {
        name: rng.uniform(-scale, scale, size=shape).astype(dtype)
        for name, shape in param_shapes(d_emb, d_h, src_vocab, tgt_vocab).items()
    }
    return ModelParams(d_emb, d_h, src_vocab, tgt_vocab, tensors)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Binary checkpoint: magic, version, (d_emb, d_h, |V_s|, |V_y|), then tensors as <f8."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I4I", CHECKPOINT_VERSION, params.d_emb, params.d_h,
                            params.src_vocab, params.tgt_vocab))
        for name in PARAM_ORDER:
            f.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC)
    if data[:head] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if len(data) < head + 20:
        raise ValueError(f"{path}: truncated checkpoint header")
    version, d_emb, d_h, n_src, n_tgt = struct.unpack_from("<I4I", data, head)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    shapes = param_shapes(d_emb, d_h, n_src, n_tgt)
    offset = head + 20
    total = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(data) != offset + total:
        raise ValueError(f"{path}: checkpoint size mismatch (truncated or corrupt)")
    tensors = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += n * 8
    return ModelParams(d_emb, d_h, n_src, n_tgt, tensors)


# ---------------------------------------------------------------------------
# GRU


class GruWeights(NamedTuple):
    """``W``: (d_in, 3h) input weights for [update, reset, candidate]; ``U``: (h, 2h)
    recurrent weights for [update, reset]; ``Uh``: (h, h) candidate recurrence; ``b``: (3h,)."""
    W: np.ndarray
    U: np.ndarray
    Uh: np.ndarray
    b: np.ndarray


def gru_weights(params: ModelParams, prefix: str) -> GruWeights:
    return GruWeights(params[f"{prefix}_W"], params[f"{prefix}_U"], params[f"{prefix}_Uh"], params[f"{prefix}_b"])


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(weights: GruWeights, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU transition.  Works on single vectors or on row-batches."""
    W, U, Uh, b = weights
    hidden = Uh.shape[0]
    if W.shape != (x.shape[-1], 3 * hidden) or h.shape[-1] != hidden \
            or U.shape != (hidden, 2 * hidden) or b.shape != (3 * hidden,):
        raise ValueError("GRU dimension mismatch")
    gx = x @ W + b
    return _gru_step(gx, h, U, Uh)[0]


def _gru_step(gx, h, U, Uh):
    n = h.shape[-1]
    gh = h @ U
    z = sigmoid(gx[..., :n] + gh[..., :n])
    r = sigmoid(gx[..., n:2 * n] + gh[..., n:])
    rh = r * h
    cand = np.tanh(gx[..., 2 * n:] + rh @ Uh)
    return h + z * (cand - h), (h, z, r, rh, cand)


def _gru_step_back(dh_new, cache, U, Uh, gU, gUh):
    """Returns (d gx, d h_prev); accumulates recurrent weight gradients in place."""
    h, z, r, rh, cand = cache
    n = h.shape[-1]
    da_c = dh_new * z * (1.0 - cand * cand)
    dz = dh_new * (cand - h)
    dh = dh_new * (1.0 - z)
    gUh += rh.T @ da_c
    drh = da_c @ Uh.T
    dh += drh * r
    da_r = drh * h * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    da_zr = np.concatenate([da_z, da_r], axis=-1)
    gU += h.T @ da_zr
    dh += da_zr @ U.T
    return np.concatenate([da_zr, da_c], axis=-1), dh


# ---------------------------------------------------------------------------
# Encoder


def _encode_batch(params: ModelParams, src: np.ndarray, mask: np.ndarray, keep_cache: bool = False):
    """src, mask: (B, L).  Returns annotations (B, L, 2h) and an optional cache."""
    B, L = src.shape
    n = params.d_h
    X = params["src_emb"][src]
    gxf = X @ params["enc_f_W"] + params["enc_f_b"]
    gxb = X @ params["enc_b_W"] + params["enc_b_b"]
    m = mask[:, :, None]
    hf = np.zeros((B, L, n), dtype=params.dtype)
    hb = np.zeros((B, L, n), dtype=params.dtype)
    caches_f, caches_b = [None] * L, [None] * L
    state = np.zeros((B, n), dtype=params.dtype)
    for t in range(L):
        new, cache = _gru_step(gxf[:, t], state, params["enc_f_U"], params["enc_f_Uh"])
        state = m[:, t] * new + (1.0 - m[:, t]) * state
        hf[:, t] = state
        caches_f[t] = cache
    state = np.zeros((B, n), dtype=params.dtype)
    for t in range(L - 1, -1, -1):
        new, cache = _gru_step(gxb[:, t], state, params["enc_b_U"], params["enc_b_Uh"])
        state = m[:, t] * new + (1.0 - m[:, t]) * state
        hb[:, t] = state
        caches_b[t] = cache
    h = np.concatenate([hb, hf], axis=-1)
    if not keep_cache:
        return h, None
    return h, (X, caches_f, caches_b)


def _encode_batch_back(params, grads, src, mask, dh, cache):
    X, caches_f, caches_b = cache
    B, L = src.shape
    n = params.d_h
    m = mask[:, :, None]
    dhb, dhf = dh[..., :n], dh[..., n:]
    dgxf = np.zeros((B, L, 3 * n), dtype=dh.dtype)
    dgxb = np.zeros((B, L, 3 * n), dtype=dh.dtype)
    carry = np.zeros((B, n), dtype=dh.dtype)
    for t in range(L - 1, -1, -1):
        cur = dhf[:, t] + carry
        dgx, dprev = _gru_step_back(m[:, t] * cur, caches_f[t], params["enc_f_U"], params["enc_f_Uh"],
                                    grads["enc_f_U"], grads["enc_f_Uh"])
        dgxf[:, t] = dgx
        carry = (1.0 - m[:, t]) * cur + dprev
    carry = np.zeros((B, n), dtype=dh.dtype)
    for t in range(L):
        cur = dhb[:, t] + carry
        dgx, dprev = _gru_step_back(m[:, t] * cur, caches_b[t], params["enc_b_U"], params["enc_b_Uh"],
                                    grads["enc_b_U"], grads["enc_b_Uh"])
        dgxb[:, t] = dgx
        carry = (1.0 - m[:, t]) * cur + dprev
    e = params.d_emb
    Xf = X.reshape(-1, e)
    for tag, dgx in (("enc_f", dgxf), ("enc_b", dgxb)):
        flat = dgx.reshape(-1, 3 * n)
        grads[f"{tag}_W"] += Xf.T @ flat
        grads[f"{tag}_b"] += flat.sum(axis=0)
    dX = dgxf @ params["enc_f_W"].T + dgxb @ params["enc_b_W"].T
    np.add.at(grads["src_emb"], src.ravel(), dX.reshape(-1, e))


def encode(params: ModelParams, source_ids) -> np.ndarray:
    """Annotations ``(l, 2*d_h)`` for one source sentence; row i is [backward_i; forward_i]."""
    src = np.asarray(source_ids, dtype=np.int64)
    if src.ndim != 1 or src.size == 0:
        raise ValueError("empty source sentence")
    h, _ = _encode_batch(params, src[None, :], np.ones((1, src.size), dtype=params.dtype))
    return h[0]


def initial_decoder_state(params: ModelParams, h: np.ndarray) -> np.ndarray:
    """``tanh(W_init . backward_1 + b_init)``; accepts (l, 2h) or batched (B, l, 2h)."""
    if h.shape[-2] == 0:
        raise ValueError("empty encoder states")
    first_backward = h[..., 0, :params.d_h]
    return np.tanh(first_backward @ params["init_W"] + params["init_b"])


# ---------------------------------------------------------------------------
# Attention and decoder step


def _attention_batch(params, s_prime, h, hU, mask):
    """s_prime (B, h); h (B, L, 2h); hU = h @ att_U; mask (B, L) or None."""
    pre = np.tanh(hU + (s_prime @ params["att_W"])[:, None, :])
    e = pre @ params["att_v"]
    if mask is not None:
        e = np.where(mask > 0, e, -np.inf)
    e = e - e.max(axis=1, keepdims=True)
    w = np.exp(e)
    alpha = w / w.sum(axis=1, keepdims=True)
    context = np.einsum("bl,blc->bc", alpha, h)
    return alpha, context, pre


def attention(params: ModelParams, s_prime: np.ndarray, h: np.ndarray):
    """Attention weights over source positions and the weighted context for one state."""
    if s_prime.shape != (params.d_h,) or h.ndim != 2 or h.shape[1] != 2 * params.d_h:
        raise ValueError("attention dimension mismatch")
    hb = h[None]
    alpha, context, _ = _attention_batch(params, s_prime[None], hb, hb @ params["att_U"], None)
    return alpha[0], context[0]


@dataclass
class DecoderStepOutput:
    s_prime: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    context: np.ndarray
    dist: np.ndarray
    active_ids: np.ndarray


class FlopCounter:
    """Counts output-projection multiply-accumulates."""

    def __init__(self) -> None:
        self.macs = 0
        self.steps = 0

    def add(self, rows: int, vocab: int, width: int) -> None:
        self.macs += rows * vocab * width
        self.steps += rows

    @property
    def per_step(self) -> float:
        return self.macs / self.steps if self.steps else 0.0


def normalize_active(active_vocab, tgt_vocab: int) -> np.ndarray | None:
    """Sorted unique id array, or None for the full vocabulary."""
    if active_vocab is None:
        return None
    ids = np.unique(np.asarray(list(active_vocab) if not isinstance(active_vocab, np.ndarray) else active_vocab,
                               dtype=np.int64))
    if ids.size == 0:
        raise ValueError("empty candidate vocabulary")
    if ids[0] < 0 or ids[-1] >= tgt_vocab:
        raise ValueError("candidate id outside the target vocabulary")
    return ids


class StepContext:
    """Per-sentence decoding cache: annotations, their attention projection, and the
    output projection rows for the active vocabulary (gathered once)."""

    def __init__(self, params: ModelParams, h: np.ndarray, active_ids: np.ndarray | None = None,
                 counter: FlopCounter | None = None) -> None:
        self.params = params
        self.h = h
        self.hU = h @ params["att_U"]
        self.active_ids = active_ids
        if active_ids is None:
            self.proj_W, self.proj_b = params["proj_W"], params["proj_b"]
        else:
            self.proj_W, self.proj_b = params["proj_W"][active_ids], params["proj_b"][active_ids]
        self.counter = counter

    def step(self, prev_ids: np.ndarray, prev_state: np.ndarray):
        """Advance K hypotheses.  Returns (s_prime, s, alpha, context, log-probs over active ids)."""
        p = self.params
        k = prev_ids.shape[0]
        x = p["tgt_emb"][prev_ids]
        s_prime = _gru_step(x @ p["dec_u_W"] + p["dec_u_b"], prev_state, p["dec_u_U"], p["dec_u_Uh"])[0]
        h = np.broadcast_to(self.h, (k,) + self.h.shape)
        hU = np.broadcast_to(self.hU, (k,) + self.hU.shape)
        alpha, context, _ = _attention_batch(p, s_prime, h, hU, None)
        s = _gru_step(context @ p["dec_q_W"] + p["dec_q_b"], s_prime, p["dec_q_U"], p["dec_q_Uh"])[0]
        o = np.tanh(np.concatenate([s, x, context], axis=1) @ p["out_W"] + p["out_b"])
        logits = o @ self.proj_W.T + self.proj_b
        if self.counter is not None:
            self.counter.add(k, self.proj_W.shape[0], self.proj_W.shape[1])
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return s_prime, s, alpha, context, logp


def decoder_step(params: ModelParams, prev_target_id: int, prev_state: np.ndarray, h: np.ndarray,
                 active_vocab=None) -> DecoderStepOutput:
    """One conditional-GRU step; ``dist`` is over ``active_ids`` (sorted) or the full vocabulary."""
    active = normalize_active(active_vocab, params.tgt_vocab)
    ctx = StepContext(params, h, active)
    s_prime, s, alpha, context, logp = ctx.step(np.array([prev_target_id]), prev_state[None])
    ids = np.arange(params.tgt_vocab) if active is None else active
    return DecoderStepOutput(s_prime[0], s[0], alpha[0], context[0], np.exp(logp[0]), ids)


# ---------------------------------------------------------------------------
# Teacher-forced loss and gradients


def pad_batch(seqs, pad: int = PAD_ID):
    """Right-pad id sequences into a (B, L) matrix plus float mask."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def batch_loss_and_grads(params: ModelParams, src: np.ndarray, src_mask: np.ndarray,
                         tgt: np.ndarray, tgt_mask: np.ndarray, active_vocab=None,
                         need_grads: bool = True):
    """Summed negative log-likelihood of a padded batch under teacher forcing.

    Returns ``(loss, grads, alpha)`` where ``alpha`` is (B, T, L) attention and
    ``grads`` a dict keyed like the parameters (None when ``need_grads`` is False).
    With ``active_vocab`` the softmax runs over that id subset only and projection
    rows outside it get no gradient.
    """
    dtype = params.dtype
    src_mask = src_mask.astype(dtype)
    tgt_mask = tgt_mask.astype(dtype)
    B, T = tgt.shape
    n, e = params.d_h, params.d_emb
    active = normalize_active(active_vocab, params.tgt_vocab)
    if active is None:
        gold = tgt
        proj_W, proj_b = params["proj_W"], params["proj_b"]
    else:
        gold = np.searchsorted(active, tgt)
        gold = np.minimum(gold, active.size - 1)
        pruned = (active[gold] != tgt) & (tgt_mask > 0)
        if pruned.any():
            raise ValueError("gold token pruned")
        proj_W, proj_b = params["proj_W"][active], params["proj_b"][active]

    h, enc_cache = _encode_batch(params, src, src_mask, keep_cache=need_grads)
    s = initial_decoder_state(params, h)
    s0 = s
    y_in = np.empty_like(tgt)
    y_in[:, 0] = BOS_ID
    y_in[:, 1:] = tgt[:, :-1]
    Xt = params["tgt_emb"][y_in]
    gxu = Xt @ params["dec_u_W"] + params["dec_u_b"]
    hU = h @ params["att_U"]

    alphas = np.empty((B, T, src.shape[1]), dtype=dtype)
    states = np.empty((B, T, n), dtype=dtype)
    contexts = np.empty((B, T, 2 * n), dtype=dtype)
    steps = []
    for t in range(T):
        s_prime, cu = _gru_step(gxu[:, t], s, params["dec_u_U"], params["dec_u_Uh"])
        alpha, context, pre = _attention_batch(params, s_prime, h, hU, src_mask)
        s, cq = _gru_step(context @ params["dec_q_W"] + params["dec_q_b"], s_prime,
                          params["dec_q_U"], params["dec_q_Uh"])
        alphas[:, t] = alpha
        states[:, t] = s
        contexts[:, t] = context
        steps.append((s_prime, cu, cq, pre))

    Z = np.concatenate([states, Xt, contexts], axis=-1).reshape(B * T, -1)
    O = np.tanh(Z @ params["out_W"] + params["out_b"])
    logits = O @ proj_W.T + proj_b
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    rows = np.arange(B * T)
    flat_gold = gold.ravel()
    flat_mask = tgt_mask.ravel()
    gold_p = probs[rows, flat_gold]
    loss = float(-(np.log(gold_p) * flat_mask).sum())
    if not need_grads:
        return loss, None, alphas

    grads = params.zeros_like()
    dlogits = probs
    dlogits[rows, flat_gold] -= 1.0
    dlogits *= flat_mask[:, None]
    if active is None:
        grads["proj_W"] += dlogits.T @ O
        grads["proj_b"] += dlogits.sum(axis=0)
    else:
        grads["proj_W"][active] += dlogits.T @ O
        grads["proj_b"][active] += dlogits.sum(axis=0)
    dpre_o = (dlogits @ proj_W) * (1.0 - O * O)
    grads["out_W"] += Z.T @ dpre_o
    grads["out_b"] += dpre_o.sum(axis=0)
    dZ = (dpre_o @ params["out_W"].T).reshape(B, T, -1)
    ds_out, dXt, dctx_out = dZ[..., :n], dZ[..., n:n + e].copy(), dZ[..., n + e:]

    dh = np.zeros_like(h)
    dhU = np.zeros_like(hU)
    dgxu = np.empty_like(gxu)
    carry = np.zeros((B, n), dtype=dtype)
    att_W, att_v = params["att_W"], params["att_v"]
    for t in range(T - 1, -1, -1):
        s_prime, cu, cq, pre = steps[t]
        alpha = alphas[:, t]
        dgxq, dsp = _gru_step_back(ds_out[:, t] + carry, cq, params["dec_q_U"], params["dec_q_Uh"],
                                   grads["dec_q_U"], grads["dec_q_Uh"])
        context = contexts[:, t]
        grads["dec_q_W"] += context.T @ dgxq
        grads["dec_q_b"] += dgxq.sum(axis=0)
        dctx = dctx_out[:, t] + dgxq @ params["dec_q_W"].T
        dalpha = np.einsum("bc,blc->bl", dctx, h)
        dh += alpha[:, :, None] * dctx[:, None, :]
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        grads["att_v"] += np.einsum("bla,bl->a", pre, de)
        dtanh = de[:, :, None] * att_v * (1.0 - pre * pre)
        dhU += dtanh
        dsw = dtanh.sum(axis=1)
        grads["att_W"] += s_prime.T @ dsw
        dsp += dsw @ att_W.T
        dgxu[:, t], carry = _gru_step_back(dsp, cu, params["dec_u_U"], params["dec_u_Uh"],
                                           grads["dec_u_U"], grads["dec_u_Uh"])

    flat = dgxu.reshape(-1, 3 * n)
    grads["dec_u_W"] += Xt.reshape(-1, e).T @ flat
    grads["dec_u_b"] += flat.sum(axis=0)
    dXt += dgxu @ params["dec_u_W"].T
    np.add.at(grads["tgt_emb"], y_in.ravel(), dXt.reshape(-1, e))

    dinit = carry * (1.0 - s0 * s0)
    first_backward = h[:, 0, :n]
    grads["init_W"] += first_backward.T @ dinit
    grads["init_b"] += dinit.sum(axis=0)
    dh[:, 0, :n] += dinit @ params["init_W"].T

    grads["att_U"] += h.reshape(-1, 2 * n).T @ dhU.reshape(-1, n)
    dh += dhU @ params["att_U"].T
    _encode_batch_back(params, grads, src, src_mask, dh, enc_cache)
    return loss, grads, alphas


def batch_loss(params: ModelParams, src, src_mask, tgt, tgt_mask, active_vocab=None) -> float:
    return batch_loss_and_grads(params, src, src_mask, tgt, tgt_mask, active_vocab, need_grads=False)[0]


def sentence_loss_and_grads(params: ModelParams, source_ids, target_ids, active_vocab=None):
    """Teacher-forced ``-sum log p(y*_t)`` for one pair and its exact gradients."""
    src = np.asarray(source_ids, dtype=np.int64)[None, :]
    tgt = np.asarray(target_ids, dtype=np.int64)[None, :]
    if src.size == 0 or tgt.size == 0:
        raise ValueError("empty sentence")
    loss, grads, _ = batch_loss_and_grads(params, src, np.ones(src.shape), tgt, np.ones(tgt.shape), active_vocab)
    return loss, grads
