"""Encoder stacks: sequence Transformer, relation-aware graph Transformer,
the hierarchical (sequence + graph adapter) encoder, and the dual-memory
fusion and attention blocks.

The graph attention augments keys and values with a learned embedding of
the relation between each node pair; one shared transform maps relation
embeddings into key/value space, split across heads like the other
projections.  Pairs without a relation use the reserved NONE id, the
diagonal uses SELF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .penman import Alignment

# incremented by graph-touching forward passes; the harness uses this to
# assert text-only runs never enter graph code
GRAPH_CALLS = {"count": 0}


def reset_graph_calls() -> None:
    GRAPH_CALLS["count"] = 0


def graph_calls() -> int:
    return GRAPH_CALLS["count"]


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    word_vocab: int
    concept_vocab: int
    relation_vocab: int
    d_model: int = 64
    layers: int = 2
    graph_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    d_ff: int = 256
    d_rel: int = 16
    dropout: float = 0.1
    max_len: int = 512

    def __post_init__(self):
        sizes = (
            self.word_vocab, self.concept_vocab, self.relation_vocab,
            self.d_model, self.layers, self.graph_layers, self.decoder_layers,
            self.heads, self.d_ff, self.d_rel, self.max_len,
        )
        if any(s <= 0 for s in sizes):
            raise EncoderError(f"all sizes must be positive: {self}")
        if self.d_model % self.heads != 0:
            raise EncoderError(
                f"hidden size {self.d_model} not divisible by {self.heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise EncoderError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


class ParamSet:
    """Named parameter registry; initialization order is fixed by the
    order of registration, so a seed fully determines all weights."""

    def __init__(self, rng: Rng):
        self._rng = rng
        self._counter = 0
        self.params: dict[str, Tensor] = {}

    def _next_rng(self) -> Rng:
        rng = self._rng.split(self._counter)
        self._counter += 1
        return rng

    def matrix(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        t = ad.init_param(self._next_rng(), shape, fan_in)
        self.params[name] = t
        return t

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        t = ad.zeros_param(shape)
        self.params[name] = t
        return t

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        t = ad.ones_param(shape)
        self.params[name] = t
        return t


def dropout(x: Tensor, rate: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise EncoderError("dropout in training mode needs an rng")
    keep = (rng.uniform(0.0, 1.0, x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, Tensor(keep))


class LayerNormPair:
    def __init__(self, ps: ParamSet, prefix: str, d: int):
        self.gain = ps.ones(f"{prefix}.gain", (d,))
        self.bias = ps.zeros(f"{prefix}.bias", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class FeedForward:
    """Two linear transformations with a ReLU in between."""

    def __init__(self, ps: ParamSet, prefix: str, d: int, d_ff: int):
        self.w_in = ps.matrix(f"{prefix}.w_in", (d, d_ff))
        self.b_in = ps.zeros(f"{prefix}.b_in", (d_ff,))
        self.w_out = ps.matrix(f"{prefix}.w_out", (d_ff, d))
        self.b_out = ps.zeros(f"{prefix}.b_out", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        hidden = ad.relu(ad.add(ad.matmul(x, self.w_in), self.b_in))
        return ad.add(ad.matmul(hidden, self.w_out), self.b_out)


def graph_attention_scores(
    h_query: Tensor, h_key: Tensor, rel: Tensor | None,
    w_query: Tensor, w_key: Tensor, w_rel: Tensor | None,
) -> Tensor:
    """Scaled dot-product score between two states, with the key side
    optionally augmented by a transformed relation embedding.

    Inputs are row vectors [1, d]; the score is a scalar tensor.  With a
    zero relation (or no relation) this is the standard attention score.
    """
    q = ad.matmul(h_query, w_query)
    k = ad.matmul(h_key, w_key)
    if rel is not None and w_rel is not None:
        k = ad.add(k, ad.matmul(rel, w_rel))
    d = q.shape[-1]
    return ad.scale(ad.reduce_sum(ad.mul(q, k)), 1.0 / np.sqrt(d))


class MultiHeadAttention:
    """Multi-head attention over a memory, optionally relation-aware.

    With relation inputs, scores become q_i . (k_j + W r_ij) / sqrt(d_h)
    and values become v_j + W r_ij, computed per head via a
    relation-id gather so the cost stays O(N * M + N * |R|).
    """

    def __init__(self, ps: ParamSet, prefix: str, d: int, heads: int,
                 d_rel: int | None = None, project_output: bool = True):
        self.d = d
        self.heads = heads
        self.d_head = d // heads
        self.w_query = ps.matrix(f"{prefix}.w_query", (d, d))
        self.w_key = ps.matrix(f"{prefix}.w_key", (d, d))
        self.w_value = ps.matrix(f"{prefix}.w_value", (d, d))
        self.project_output = project_output
        if project_output:
            self.w_out = ps.matrix(f"{prefix}.w_out", (d, d))
        self.w_rel = (
            ps.matrix(f"{prefix}.w_rel", (d_rel, d), fan_in=d_rel)
            if d_rel is not None
            else None
        )

    def __call__(
        self,
        query_states: Tensor,
        memory_states: Tensor,
        rel_ids: np.ndarray | None = None,
        rel_table: Tensor | None = None,
        causal: bool = False,
    ) -> Tensor:
        q_all = ad.matmul(query_states, self.w_query)
        k_all = ad.matmul(memory_states, self.w_key)
        v_all = ad.matmul(memory_states, self.w_value)
        rel_keys = None
        if rel_ids is not None:
            if rel_table is None or self.w_rel is None:
                raise EncoderError("relation ids given but no relation parameters")
            rel_keys = ad.matmul(rel_table, self.w_rel)  # [|R|, d]
        mask = None
        if causal:
            n = query_states.shape[0]
            mask = Tensor(np.triu(np.full((n, n), -1e9), k=1))
        contexts = []
        inv_scale = 1.0 / np.sqrt(self.d_head)
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            q = ad.slice_axis(q_all, 1, lo, hi)
            k = ad.slice_axis(k_all, 1, lo, hi)
            v = ad.slice_axis(v_all, 1, lo, hi)
            scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_scale)
            if rel_keys is not None:
                u = ad.slice_axis(rel_keys, 1, lo, hi)  # [|R|, d_head]
                per_rel = ad.scale(ad.matmul(q, ad.transpose(u)), inv_scale)
                scores = ad.add(scores, ad.row_gather(per_rel, rel_ids))
            if mask is not None:
                scores = ad.add(scores, mask)
            weights = ad.softmax(scores)
            ctx = ad.matmul(weights, v)
            if rel_keys is not None:
                u = ad.slice_axis(rel_keys, 1, lo, hi)
                pooled = ad.row_scatter_add(weights, rel_ids, rel_table.shape[0])
                ctx = ad.add(ctx, ad.matmul(pooled, u))
            contexts.append(ctx)
        out = ad.concat(contexts) if len(contexts) > 1 else contexts[0]
        if self.project_output:
            out = ad.matmul(out, self.w_out)
        return out


class TransformerLayer:
    """Self-attention and feed-forward sublayers, each with residual
    connection and layer normalization."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig,
                 relational: bool = False):
        self.attn = MultiHeadAttention(
            ps, f"{prefix}.attn", cfg.d_model, cfg.heads,
            d_rel=cfg.d_rel if relational else None,
        )
        self.norm_attn = LayerNormPair(ps, f"{prefix}.norm_attn", cfg.d_model)
        self.ffn = FeedForward(ps, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
        self.norm_ffn = LayerNormPair(ps, f"{prefix}.norm_ffn", cfg.d_model)
        self.rate = cfg.dropout

    def __call__(self, x: Tensor, rel_ids=None, rel_table=None,
                 training=False, rng: Rng | None = None) -> Tensor:
        attn_out = self.attn(x, x, rel_ids=rel_ids, rel_table=rel_table)
        x = self.norm_attn(ad.add(x, dropout(attn_out, self.rate, rng, training)))
        ffn_out = self.ffn(x)
        return self.norm_ffn(ad.add(x, dropout(ffn_out, self.rate, rng, training)))


class SeqEncoder:
    """Token embeddings plus learned positions, through L layers."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig):
        self.cfg = cfg
        d = cfg.d_model
        self.word_emb = ps.matrix(f"{prefix}.word_emb", (cfg.word_vocab, d), fan_in=d)
        self.pos_emb = ps.matrix(f"{prefix}.pos_emb", (cfg.max_len, d), fan_in=d)
        self.layers = [
            TransformerLayer(ps, f"{prefix}.layer{i}", cfg) for i in range(cfg.layers)
        ]

    def __call__(self, token_ids, position_ids=None, training=False,
                 rng: Rng | None = None) -> Tensor:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        n = token_ids.shape[0]
        if n < 1 or n > self.cfg.max_len:
            raise EncoderError(f"sequence length {n} outside [1, {self.cfg.max_len}]")
        if position_ids is None:
            position_ids = np.arange(n)
        x = ad.add(
            ad.embedding_lookup(self.word_emb, token_ids),
            ad.embedding_lookup(self.pos_emb, position_ids),
        )
        x = dropout(x, self.cfg.dropout, rng, training)
        for layer in self.layers:
            x = layer(x, training=training, rng=rng)
        return x


class GraphEncoder:
    """Relation-aware Transformer over graph nodes (no positions)."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig,
                 n_layers: int | None = None, with_node_embeddings: bool = True):
        self.cfg = cfg
        d = cfg.d_model
        self.concept_emb = (
            ps.matrix(f"{prefix}.concept_emb", (cfg.concept_vocab, d), fan_in=d)
            if with_node_embeddings
            else None
        )
        self.rel_emb = ps.matrix(
            f"{prefix}.rel_emb", (cfg.relation_vocab, cfg.d_rel), fan_in=cfg.d_rel
        )
        count = cfg.graph_layers if n_layers is None else n_layers
        self.layers = [
            TransformerLayer(ps, f"{prefix}.layer{i}", cfg, relational=True)
            for i in range(count)
        ]

    def __call__(self, node_ids, rel_ids: np.ndarray, training=False,
                 rng: Rng | None = None) -> Tensor:
        if self.concept_emb is None:
            raise EncoderError("this graph encoder takes precomputed states")
        x = ad.embedding_lookup(self.concept_emb, np.asarray(node_ids, dtype=np.int64))
        x = dropout(x, self.cfg.dropout, rng, training)
        return self.encode_states(x, rel_ids, training=training, rng=rng)

    def encode_states(self, states: Tensor, rel_ids: np.ndarray,
                      training=False, rng: Rng | None = None) -> Tensor:
        GRAPH_CALLS["count"] += 1
        rel_ids = np.asarray(rel_ids, dtype=np.int64)
        m = states.shape[0]
        if rel_ids.shape != (m, m):
            raise EncoderError(
                f"relation matrix {rel_ids.shape} does not match {m} nodes"
            )
        x = states
        for layer in self.layers:
            x = layer(x, rel_ids=rel_ids, rel_table=self.rel_emb,
                      training=training, rng=rng)
        return x


class HierEncoder:
    """Sequence encoder refined by a graph adapter over projected
    word-to-word relations, fused through a residual layer norm."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig):
        self.seq = SeqEncoder(ps, f"{prefix}.seq", cfg)
        self.adapter = GraphEncoder(
            ps, f"{prefix}.adapter", cfg, with_node_embeddings=False
        )
        self.norm_fuse = LayerNormPair(ps, f"{prefix}.norm_fuse", cfg.d_model)

    def __call__(self, token_ids, rel_ids: np.ndarray, training=False,
                 rng: Rng | None = None) -> Tensor:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if rel_ids.shape[0] != token_ids.shape[0]:
            raise EncoderError(
                f"projected matrix {rel_ids.shape} does not match "
                f"{token_ids.shape[0]} tokens"
            )
        h_seq = self.seq(token_ids, training=training, rng=rng)
        h_refined = self.adapter.encode_states(
            h_seq, rel_ids, training=training, rng=rng
        )
        return self.norm_fuse(ad.add(h_seq, h_refined))


def word_node_map(alignment: Alignment, node_rows: dict[str, int],
                  n_tokens: int, dummy_row: int = 0) -> np.ndarray:
    """Per-token graph-node row for fusion; unaligned tokens use the
    dummy row.  When several nodes align to a token, the earliest-declared
    node wins."""
    mapping = np.full(n_tokens, dummy_row, dtype=np.int64)
    assigned = np.zeros(n_tokens, dtype=bool)
    for node_id, row in sorted(node_rows.items(), key=lambda kv: kv[1]):
        for t in alignment.tokens_for(node_id):
            if not assigned[t]:
                mapping[t] = row
                assigned[t] = True
    return mapping


class DualFusion:
    """Merge word states with aligned graph-node states (dummy state for
    unaligned words) through a shared layer norm."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig):
        self.norm = LayerNormPair(ps, f"{prefix}.norm", cfg.d_model)

    def __call__(self, h_text: Tensor, h_graph: Tensor,
                 token_node_rows: np.ndarray) -> Tensor:
        GRAPH_CALLS["count"] += 1
        rows = np.asarray(token_node_rows, dtype=np.int64)
        if rows.shape[0] != h_text.shape[0]:
            raise EncoderError(
                f"node map length {rows.shape[0]} vs {h_text.shape[0]} tokens"
            )
        gathered = ad.embedding_lookup(h_graph, rows)
        return self.norm(ad.add(h_text, gathered))


class DualAttention:
    """Two attention reads, one over text memory and one over graph
    memory; the concatenated contexts pass through a linear map."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig):
        d = cfg.d_model
        self.text_attn = MultiHeadAttention(
            ps, f"{prefix}.text", d, cfg.heads, project_output=False
        )
        self.graph_attn = MultiHeadAttention(
            ps, f"{prefix}.graph", d, cfg.heads, project_output=False
        )
        self.w_merge = ps.matrix(f"{prefix}.w_merge", (2 * d, d), fan_in=2 * d)
        self.b_merge = ps.zeros(f"{prefix}.b_merge", (d,))

    def __call__(self, states: Tensor, h_text: Tensor, h_graph: Tensor) -> Tensor:
        GRAPH_CALLS["count"] += 1
        ctx_text = self.text_attn(states, h_text)
        ctx_graph = self.graph_attn(states, h_graph)
        both = ad.concat([ctx_text, ctx_graph])
        return ad.add(ad.matmul(both, self.w_merge), self.b_merge)
