"""Straight-line single-example forward passes used as test oracles.

Everything here loops over tokens and heads explicitly and never calls the
batched kernels, so it is an independent check of the encoders and fusion head.
"""
import math

import numpy as np

LN_EPS = 1e-5


def layer_norm(x, g, b):
    mu = sum(x) / len(x)
    var = sum((xi - mu) ** 2 for xi in x) / len(x)
    return np.array([(xi - mu) / math.sqrt(var + LN_EPS) for xi in x]) * g + b


def attend(queries, keys, values, heads):
    """Per-head softmax attention over lists of already projected vectors."""
    width = len(queries[0]) // heads
    out = []
    for q in queries:
        row = np.zeros(len(q))
        for h in range(heads):
            cols = slice(h * width, (h + 1) * width)
            scores = [float(np.dot(q[cols], k[cols])) / math.sqrt(width) for k in keys]
            top = max(scores)
            ex = [math.exp(s - top) for s in scores]
            total = sum(ex)
            for e, v in zip(ex, values):
                row[cols] += e / total * v[cols]
        out.append(row)
    return out


def mha(store, prefix, queries, keys, heads):
    p = lambda n: store[f"{prefix}.{n}"]
    q = [x @ p("wq") + p("bq") for x in queries]
    k = [x @ p("wk") + p("bk") for x in keys]
    v = [x @ p("wv") + p("bv") for x in keys]
    return [o @ p("wo") + p("bo") for o in attend(q, k, v, heads)]


def encoder_stack(store, prefix, xs, layers, heads):
    xs = [np.array(x, dtype=float) for x in xs]
    for i in range(layers):
        p = lambda n: store[f"{prefix}.layer{i}.{n}"]
        hs = [layer_norm(x, p("ln1.g"), p("ln1.b")) for x in xs]
        att = mha(store, f"{prefix}.layer{i}.attn", hs, hs, heads)
        xs = [x + a for x, a in zip(xs, att)]
        new = []
        for x in xs:
            h = layer_norm(x, p("ln2.g"), p("ln2.b"))
            f = np.maximum(h @ p("ff1.w") + p("ff1.b"), 0.0) @ p("ff2.w") + p("ff2.b")
            new.append(x + f)
        xs = new
    return layer_norm(xs[0], store[f"{prefix}.ln_f.g"], store[f"{prefix}.ln_f.b"])


def text_cls(store, ids, segments, layers, heads, prefix="text"):
    xs = [
        store[f"{prefix}.tok_emb"][t] + store[f"{prefix}.seg_emb"][s] + store[f"{prefix}.pos_emb"][i]
        for i, (t, s) in enumerate(zip(ids, segments))
    ]
    return encoder_stack(store, f"{prefix}.enc", xs, layers, heads)


def table_cls(store, seq, layers, heads, prefix="table"):
    xs = [
        store[f"{prefix}.tok_emb"][t]
        + store[f"{prefix}.row_emb"][r]
        + store[f"{prefix}.col_emb"][c]
        + store[f"{prefix}.seg_emb"][s]
        for t, r, c, s in zip(seq.ids, seq.row_ids, seq.col_ids, seq.segment_ids)
    ]
    return encoder_stack(store, f"{prefix}.enc", xs, layers, heads)


def fusion_probs(store, claim_vec, evidence_rows, heads, prefix="fusion", final_relu=False):
    """Claim-query attention over the real evidence rows, MLP, softmax."""
    z = mha(store, f"{prefix}.attn", [claim_vec], evidence_rows, heads)[0]
    h = z
    for i in range(3):
        h = h @ store[f"{prefix}.mlp{i}.w"] + store[f"{prefix}.mlp{i}.b"]
        if i < 2 or final_relu:
            h = np.maximum(h, 0.0)
    top = max(h)
    ex = np.array([math.exp(v - top) for v in h])
    return z, ex / ex.sum()
