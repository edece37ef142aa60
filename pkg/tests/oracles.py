"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's numerics: GRU, attention, the decoder and
Model 1 are re-derived with plain loops so that agreement is meaningful.
"""
import itertools
import math

import numpy as np

BOS, EOS = 2, 3


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru_scalar(W, U, Uh, b, x, h):
    """Element-by-element GRU: z, r gates then the reset-gated candidate."""
    n = len(h)
    d = len(x)

    def inp(col):
        return sum(x[i] * W[i][col] for i in range(d)) + b[col]

    z = [sig(inp(k) + sum(h[i] * U[i][k] for i in range(n))) for k in range(n)]
    r = [sig(inp(n + k) + sum(h[i] * U[i][n + k] for i in range(n))) for k in range(n)]
    rh = [r[i] * h[i] for i in range(n)]
    cand = [math.tanh(inp(2 * n + k) + sum(rh[i] * Uh[i][k] for i in range(n))) for k in range(n)]
    return [(1 - z[k]) * h[k] + z[k] * cand[k] for k in range(n)]


def _gru(P, prefix, x, h):
    out = gru_scalar(P[f"{prefix}_W"].tolist(), P[f"{prefix}_U"].tolist(), P[f"{prefix}_Uh"].tolist(),
                     P[f"{prefix}_b"].tolist(), list(x), list(h))
    return np.array(out)


def encode_loop(P, d_h, src):
    emb = P["src_emb"]
    fwd, h = [], np.zeros(d_h)
    for tok in src:
        h = _gru(P, "enc_f", emb[tok], h)
        fwd.append(h)
    bwd, h = [None] * len(src), np.zeros(d_h)
    for i in range(len(src) - 1, -1, -1):
        h = _gru(P, "enc_b", emb[src[i]], h)
        bwd[i] = h
    return [np.concatenate([bwd[i], fwd[i]]) for i in range(len(src))]


def attention_loop(P, s_prime, ann):
    scores = []
    for hj in ann:
        pre = [math.tanh(sum(s_prime[i] * P["att_W"][i][k] for i in range(len(s_prime)))
                         + sum(hj[i] * P["att_U"][i][k] for i in range(len(hj))))
               for k in range(P["att_v"].shape[0])]
        scores.append(sum(p * v for p, v in zip(pre, P["att_v"])))
    top = max(scores)
    ex = [math.exp(s - top) for s in scores]
    z = sum(ex)
    alpha = [e / z for e in ex]
    ctx = sum(a * hj for a, hj in zip(alpha, ann))
    return np.array(alpha), ctx


def init_state_loop(P, d_h, ann):
    back = ann[0][:d_h]
    return np.array([math.tanh(sum(back[i] * P["init_W"][i][k] for i in range(d_h)) + P["init_b"][k])
                     for k in range(d_h)])


def step_loop(P, d_h, ann, prev, state, active=None):
    """One decoder step; returns (new state, alpha, probability dict over active ids)."""
    x = P["tgt_emb"][prev]
    s_prime = _gru(P, "dec_u", x, state)
    alpha, ctx = attention_loop(P, s_prime, ann)
    s = _gru(P, "dec_q", ctx, s_prime)
    z = np.concatenate([s, x, ctx])
    o = np.array([math.tanh(sum(z[i] * P["out_W"][i][k] for i in range(len(z))) + P["out_b"][k])
                  for k in range(P["out_b"].shape[0])])
    ids = range(P["proj_b"].shape[0]) if active is None else sorted(active)
    logits = {t: float(np.dot(P["proj_W"][t], o) + P["proj_b"][t]) for t in ids}
    top = max(logits.values())
    z = sum(math.exp(v - top) for v in logits.values())
    return s, alpha, {t: math.exp(v - top) / z for t, v in logits.items()}


class FastOracle:
    """Same recurrences with vectorised per-vector numpy, for exhaustive search."""

    def __init__(self, P, d_h):
        self.P = {k: np.asarray(v, dtype=np.float64) for k, v in P.items()}
        self.n = d_h

    def gru(self, prefix, x, h):
        P, n = self.P, self.n
        a = x @ P[f"{prefix}_W"] + P[f"{prefix}_b"]
        g = h @ P[f"{prefix}_U"]
        z = 1.0 / (1.0 + np.exp(-(a[:n] + g[:n])))
        r = 1.0 / (1.0 + np.exp(-(a[n:2 * n] + g[n:])))
        c = np.tanh(a[2 * n:] + (r * h) @ P[f"{prefix}_Uh"])
        return (1 - z) * h + z * c

    def encode(self, src):
        P, n = self.P, self.n
        f, h = [], np.zeros(n)
        for t in src:
            h = self.gru("enc_f", P["src_emb"][t], h)
            f.append(h)
        b, h = [None] * len(src), np.zeros(n)
        for i in range(len(src) - 1, -1, -1):
            h = self.gru("enc_b", P["src_emb"][src[i]], h)
            b[i] = h
        ann = np.stack([np.concatenate([b[i], f[i]]) for i in range(len(src))])
        s0 = np.tanh(ann[0, :n] @ P["init_W"] + P["init_b"])
        return ann, s0

    def step(self, ann, prev, state, active=None):
        P = self.P
        x = P["tgt_emb"][prev]
        sp = self.gru("dec_u", x, state)
        e = np.tanh(sp @ P["att_W"] + ann @ P["att_U"]) @ P["att_v"]
        a = np.exp(e - e.max())
        a /= a.sum()
        ctx = a @ ann
        s = self.gru("dec_q", ctx, sp)
        o = np.tanh(np.concatenate([s, x, ctx]) @ P["out_W"] + P["out_b"])
        ids = np.arange(P["proj_b"].shape[0]) if active is None else np.asarray(sorted(active))
        logits = P["proj_W"][ids] @ o + P["proj_b"][ids]
        logits -= logits.max()
        logp = logits - math.log(np.exp(logits).sum())
        return s, dict(zip(ids.tolist(), logp.tolist()))

    def sentence_logprob(self, src, tgt, active=None):
        ann, s = self.encode(src)
        prev, total = BOS, 0.0
        for t in tgt:
            s, logp = self.step(ann, prev, s, active)
            total += logp[t]
            prev = t
        return total


def exhaustive_best(oracle, src, vocab_size, max_length, active=None):
    """Highest-scoring EOS-terminated sequence of length <= max_length, ties broken by
    the smaller token tuple.  Returns (tokens, log-probability)."""
    ann, s0 = oracle.encode(src)
    ids = list(range(vocab_size)) if active is None else sorted(active)
    best = None

    def consider(tokens, score):
        nonlocal best
        key = (-score, tokens)
        if best is None or key < best:
            best = key

    def expand(prefix, score, state, prev):
        state, logp = oracle.step(ann, prev, state, active)
        for t in ids:
            tokens = prefix + (t,)
            sc = score + logp[t]
            if t == EOS:
                consider(tokens, sc)
            elif len(tokens) < max_length:
                expand(tokens, sc, state, t)

    expand((), 0.0, s0, BOS)
    return best[1], -best[0]


def model1_loop(corpus, iterations):
    """Textbook IBM Model 1 EM with a NULL source word (key None)."""
    tgt_types = sorted({t for _, tgt in corpus for t in tgt})
    t_prob = {}
    for src, tgt in corpus:
        for f in [None] + list(src):
            for e in tgt:
                t_prob[(f, e)] = 1.0 / len(tgt_types)
    for _ in range(iterations):
        count, total = {}, {}
        for src, tgt in corpus:
            srcs = [None] + list(src)
            for e in tgt:
                z = sum(t_prob[(f, e)] for f in srcs)
                for f in srcs:
                    c = t_prob[(f, e)] / z
                    count[(f, e)] = count.get((f, e), 0.0) + c
                    total[f] = total.get(f, 0.0) + c
        t_prob = {k: v / total[k[0]] for k, v in count.items()}
    return t_prob


def bleu_brute(hyps, refs):
    """Corpus BLEU-4 written directly from the definition."""
    m = [0] * 4
    tot = [0] * 4
    c = r = 0
    for h, ref in zip(hyps, refs):
        c += len(h)
        r += len(ref)
        for n in range(1, 5):
            hg = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
            for g in set(hg):
                m[n - 1] += min(hg.count(g), rg.count(g))
            tot[n - 1] += len(hg)
    if min(m) == 0:
        return 0.0
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(sum(math.log(m[i] / tot[i]) for i in range(4)) / 4)


def all_sequences(vocab, length):
    return itertools.product(vocab, repeat=length)
