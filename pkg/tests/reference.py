"""Independent numpy references for encoder math.

These recompute forward passes with plain loops and dense per-pair
relation handling, mirroring the model equations but not the package's
gather/scatter implementation, so tests compare two routes.
"""

from __future__ import annotations

import numpy as np


def np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_layer_norm(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return centered * inv * gain + bias


def np_ffn(x, p, prefix):
    hidden = np.maximum(x @ p[f"{prefix}.w_in"] + p[f"{prefix}.b_in"], 0.0)
    return hidden @ p[f"{prefix}.w_out"] + p[f"{prefix}.b_out"]


def np_attention(x, memory, p, prefix, heads, rel_ids=None, rel_table=None,
                 causal=False, project=True):
    """Dense multi-head attention; relation terms are looked up per pair."""
    d = x.shape[1]
    dh = d // heads
    q_all = x @ p[f"{prefix}.w_query"]
    k_all = memory @ p[f"{prefix}.w_key"]
    v_all = memory @ p[f"{prefix}.w_value"]
    n, m = x.shape[0], memory.shape[0]
    rel_vec = None
    if rel_ids is not None:
        rel_vec = rel_table[rel_ids] @ p[f"{prefix}.w_rel"]  # [n, m, d]
    heads_out = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        q, k, v = q_all[:, lo:hi], k_all[:, lo:hi], v_all[:, lo:hi]
        scores = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                key = k[j].copy()
                if rel_vec is not None:
                    key = key + rel_vec[i, j, lo:hi]
                scores[i, j] = q[i] @ key / np.sqrt(dh)
        if causal:
            scores = scores + np.triu(np.full((n, n), -1e9), k=1)
        weights = np_softmax(scores)
        ctx = np.zeros((n, dh))
        for i in range(n):
            for j in range(m):
                val = v[j].copy()
                if rel_vec is not None:
                    val = val + rel_vec[i, j, lo:hi]
                ctx[i] += weights[i, j] * val
        heads_out.append(ctx)
    out = np.concatenate(heads_out, axis=-1)
    if project:
        out = out @ p[f"{prefix}.w_out"]
    return out


def np_plain_attention(x, p, prefix, heads):
    """Position-free self-attention with no relation terms, written to
    follow the same operation order as the package implementation so
    exact float64 comparison is meaningful."""
    d = x.shape[1]
    dh = d // heads
    q_all = x @ p[f"{prefix}.w_query"]
    k_all = x @ p[f"{prefix}.w_key"]
    v_all = x @ p[f"{prefix}.w_value"]
    heads_out = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        q, k, v = q_all[:, lo:hi], k_all[:, lo:hi], v_all[:, lo:hi]
        scores = (q @ k.T) * (1.0 / np.sqrt(dh))
        weights = np_softmax(scores)
        heads_out.append(weights @ v)
    return np.concatenate(heads_out, axis=-1) @ p[f"{prefix}.w_out"]


def np_transformer_layer(x, p, prefix, heads, rel_ids=None, rel_table=None,
                         plain=False):
    if plain:
        attn = np_plain_attention(x, p, f"{prefix}.attn", heads)
    else:
        attn = np_attention(x, x, p, f"{prefix}.attn", heads,
                            rel_ids=rel_ids, rel_table=rel_table)
    x = np_layer_norm(
        x + attn, p[f"{prefix}.norm_attn.gain"], p[f"{prefix}.norm_attn.bias"]
    )
    ffn = np_ffn(x, p, f"{prefix}.ffn")
    return np_layer_norm(
        x + ffn, p[f"{prefix}.norm_ffn.gain"], p[f"{prefix}.norm_ffn.bias"]
    )


def np_plain_layers(states, p, prefix, n_layers, heads):
    x = states
    for i in range(n_layers):
        x = np_transformer_layer(x, p, f"{prefix}.layer{i}", heads, plain=True)
    return x


def np_seq_encoder(token_ids, p, prefix, n_layers, heads, position_ids=None):
    if position_ids is None:
        position_ids = np.arange(len(token_ids))
    x = p[f"{prefix}.word_emb"][np.asarray(token_ids)] + \
        p[f"{prefix}.pos_emb"][np.asarray(position_ids)]
    for i in range(n_layers):
        x = np_transformer_layer(x, p, f"{prefix}.layer{i}", heads)
    return x
