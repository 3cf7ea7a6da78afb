"""Task heads and decoding: relation classification over span-pooled
states, and autoregressive generation with single- or dual-memory
cross-attention, greedy search, and length-normalized beam search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import encoders as enc
from .autodiff import Rng, Tensor
from .encoders import (
    DualAttention,
    DualFusion,
    EncoderConfig,
    FeedForward,
    GraphEncoder,
    HierEncoder,
    LayerNormPair,
    MultiHeadAttention,
    ParamSet,
    SeqEncoder,
    dropout,
)

MODEL_KINDS = ("text", "utter-amr", "hier", "dual")


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class RelationInstance:
    dialogue_id: str
    a1_span: tuple[int, int]  # half-open token ranges in the encoded input
    a2_span: tuple[int, int]
    gold: int


@dataclass(frozen=True)
class GenerationInstance:
    dialogue_id: str
    target: tuple[int, ...]  # token ids, ending with the end-of-sequence id


@dataclass
class UnderstandingFeatures:
    """Arrays one relation instance needs, prepared by the harness."""

    instance: RelationInstance
    token_ids: np.ndarray
    node_ids: np.ndarray | None = None
    node_rel_ids: np.ndarray | None = None
    token_rel_ids: np.ndarray | None = None
    token_node_rows: np.ndarray | None = None


@dataclass
class GenerationFeatures:
    instance: GenerationInstance
    token_ids: np.ndarray
    node_ids: np.ndarray | None = None
    node_rel_ids: np.ndarray | None = None
    token_rel_ids: np.ndarray | None = None


def span_mean(states: Tensor, span: tuple[int, int]) -> Tensor:
    """Mean of the hidden states over a half-open token range, as [1, d]."""
    start, stop = span
    if stop <= start or start < 0 or stop > states.shape[0]:
        raise TaskError(f"empty or out-of-range span {span}")
    rows = ad.slice_axis(states, 0, start, stop)
    weights = Tensor(np.full((1, stop - start), 1.0 / (stop - start)))
    return ad.matmul(weights, rows)


class RelationHead:
    """Softmax over a linear map of the two pooled argument states."""

    def __init__(self, ps: ParamSet, prefix: str, d: int, n_classes: int):
        self.w_cls = ps.matrix(f"{prefix}.w_cls", (2 * d, n_classes), fan_in=2 * d)
        self.b_cls = ps.zeros(f"{prefix}.b_cls", (n_classes,))

    def logits(self, states: Tensor, a1_span, a2_span) -> Tensor:
        pooled = ad.concat([span_mean(states, a1_span), span_mean(states, a2_span)])
        return ad.add(ad.matmul(pooled, self.w_cls), self.b_cls)

    def __call__(self, states: Tensor, a1_span, a2_span) -> Tensor:
        return ad.softmax(self.logits(states, a1_span, a2_span))


def re_loss(p_rel: Tensor, gold: int) -> Tensor:
    """Negative log-probability of the gold relation."""
    n = p_rel.shape[-1]
    if not 0 <= gold < n:
        raise TaskError(f"gold relation {gold} out of range [0, {n})")
    picked = ad.slice_axis(p_rel, p_rel.data.ndim - 1, gold, gold + 1)
    return ad.scale(ad.reduce_sum(ad.log(picked)), -1.0)


def mean_loss(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for item in losses[1:]:
        total = ad.add(total, item)
    return ad.scale(total, 1.0 / len(losses))


class DecoderLayer:
    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig, dual: bool):
        d = cfg.d_model
        self.self_attn = MultiHeadAttention(ps, f"{prefix}.self", d, cfg.heads)
        self.norm_self = LayerNormPair(ps, f"{prefix}.norm_self", d)
        self.dual = dual
        if dual:
            self.cross = DualAttention(ps, f"{prefix}.cross", cfg)
        else:
            self.cross = MultiHeadAttention(ps, f"{prefix}.cross", d, cfg.heads)
        self.norm_cross = LayerNormPair(ps, f"{prefix}.norm_cross", d)
        self.ffn = FeedForward(ps, f"{prefix}.ffn", d, cfg.d_ff)
        self.norm_ffn = LayerNormPair(ps, f"{prefix}.norm_ffn", d)
        self.rate = cfg.dropout

    def __call__(self, x: Tensor, h_text: Tensor, h_graph: Tensor | None,
                 training=False, rng: Rng | None = None) -> Tensor:
        attn = self.self_attn(x, x, causal=True)
        x = self.norm_self(ad.add(x, dropout(attn, self.rate, rng, training)))
        if self.dual:
            if h_graph is None:
                raise TaskError("dual decoder needs a graph memory")
            ctx = self.cross(x, h_text, h_graph)
        else:
            ctx = self.cross(x, h_text)
        x = self.norm_cross(ad.add(x, dropout(ctx, self.rate, rng, training)))
        ffn = self.ffn(x)
        return self.norm_ffn(ad.add(x, dropout(ffn, self.rate, rng, training)))


class Decoder:
    """Autoregressive Transformer decoder over a text memory, optionally
    reading a second graph memory through dual attention."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig, dual: bool):
        self.cfg = cfg
        d = cfg.d_model
        self.word_emb = ps.matrix(f"{prefix}.word_emb", (cfg.word_vocab, d), fan_in=d)
        self.pos_emb = ps.matrix(f"{prefix}.pos_emb", (cfg.max_len, d), fan_in=d)
        self.layers = [
            DecoderLayer(ps, f"{prefix}.layer{i}", cfg, dual)
            for i in range(cfg.decoder_layers)
        ]
        self.w_vocab = ps.matrix(f"{prefix}.w_vocab", (d, cfg.word_vocab))
        self.b_vocab = ps.zeros(f"{prefix}.b_vocab", (cfg.word_vocab,))

    def states(self, prev_ids, h_text: Tensor, h_graph: Tensor | None,
               training=False, rng: Rng | None = None) -> Tensor:
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        if prev_ids.shape[0] > self.cfg.max_len:
            raise TaskError(f"decoder input longer than {self.cfg.max_len}")
        x = ad.add(
            ad.embedding_lookup(self.word_emb, prev_ids),
            ad.embedding_lookup(self.pos_emb, np.arange(prev_ids.shape[0])),
        )
        x = dropout(x, self.cfg.dropout, rng, training)
        for layer in self.layers:
            x = layer(x, h_text, h_graph, training=training, rng=rng)
        return x

    def logits(self, prev_ids, h_text, h_graph=None, training=False, rng=None) -> Tensor:
        states = self.states(prev_ids, h_text, h_graph, training=training, rng=rng)
        return ad.add(ad.matmul(states, self.w_vocab), self.b_vocab)


def decode_step(decoder: Decoder, prev_ids, h_text: Tensor,
                h_graph: Tensor | None = None) -> Tensor:
    """Distribution over the next token given the prefix (which must
    start with the start-of-sequence id)."""
    logits = decoder.logits(prev_ids, h_text, h_graph)
    last = ad.slice_axis(logits, 0, logits.shape[0] - 1, logits.shape[0])
    return ad.softmax(last)


def gen_loss(decoder: Decoder, target_ids, h_text: Tensor,
             h_graph: Tensor | None = None, sos_id: int = 0,
             training=False, rng=None) -> Tensor:
    """Teacher-forced sum of per-step negative log-likelihoods."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.size == 0:
        raise TaskError("empty generation target")
    prev = np.concatenate([[sos_id], target_ids[:-1]])
    logits = decoder.logits(prev, h_text, h_graph, training=training, rng=rng)
    return ad.cross_entropy(logits, target_ids)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # includes the end-of-sequence id if finished
    logprob: float
    finished_at: int  # step index of termination (max_len if forced)

    @property
    def score(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


def beam_search_steps(step_fn, vocab_size: int, beam: int, max_len: int,
                      sos_id: int, eos_id: int) -> Hypothesis:
    """Generic length-normalized beam search over a prefix-scoring
    function; step_fn(prefix including sos) returns log-probs [V].

    Ties break toward the earlier finish, then lexicographic token ids.
    """
    if beam < 1:
        raise TaskError("beam size must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        candidates: list[tuple[float, tuple[int, ...], float]] = []
        for tokens, logprob in live:
            logprobs = step_fn((sos_id,) + tokens)
            for v in range(vocab_size):
                total = logprob + float(logprobs[v])
                candidates.append((-total, tokens + (v,), total))
        candidates.sort(key=lambda c: (c[0], c[1]))
        live = []
        for _, tokens, total in candidates[:beam]:
            if tokens[-1] == eos_id:
                finished.append(Hypothesis(tokens, total, step + 1))
            else:
                live.append((tokens, total))
        if not live:
            break
    for tokens, total in live:
        finished.append(Hypothesis(tokens, total, max_len))
    return max(finished, key=lambda h: (h.score, -h.finished_at,
                                        tuple(-t for t in h.tokens)))


def greedy_steps(step_fn, beam_unused_vocab: int, max_len: int,
                 sos_id: int, eos_id: int) -> Hypothesis:
    """Argmax decoding; ties resolve to the smallest token id."""
    tokens: tuple[int, ...] = ()
    logprob = 0.0
    for step in range(max_len):
        logprobs = step_fn((sos_id,) + tokens)
        v = int(np.argmax(logprobs))
        tokens = tokens + (v,)
        logprob += float(logprobs[v])
        if v == eos_id:
            return Hypothesis(tokens, logprob, step + 1)
    return Hypothesis(tokens, logprob, max_len)


def _model_step_fn(decoder: Decoder, h_text, h_graph):
    def step(prefix):
        dist = decode_step(decoder, list(prefix), h_text, h_graph)
        return np.log(np.maximum(dist.data[0], 1e-300))

    return step


def strip_eos(tokens: tuple[int, ...], eos_id: int) -> tuple[int, ...]:
    return tokens[:-1] if tokens and tokens[-1] == eos_id else tokens


class RelationModel:
    """Relation classifier over one of the encoder configurations."""

    def __init__(self, cfg: EncoderConfig, kind: str, n_classes: int, rng: Rng):
        if kind not in MODEL_KINDS:
            raise TaskError(f"unknown model kind {kind!r}")
        self.cfg = cfg
        self.kind = kind
        self.n_classes = n_classes
        ps = ParamSet(rng)
        if kind == "hier":
            self.encoder = HierEncoder(ps, "encoder", cfg)
        else:
            self.encoder = SeqEncoder(ps, "encoder", cfg)
        if kind in ("dual", "utter-amr"):
            self.graph_encoder = GraphEncoder(ps, "graph", cfg)
            self.fusion = DualFusion(ps, "fusion", cfg)
        else:
            self.graph_encoder = None
            self.fusion = None
        self.head = RelationHead(ps, "head", cfg.d_model, n_classes)
        self.params = ps.params

    def states(self, feats: UnderstandingFeatures, training=False, rng=None) -> Tensor:
        if self.kind == "hier":
            return self.encoder(feats.token_ids, feats.token_rel_ids,
                                training=training, rng=rng)
        h_text = self.encoder(feats.token_ids, training=training, rng=rng)
        if self.graph_encoder is None:
            return h_text
        h_graph = self.graph_encoder(feats.node_ids, feats.node_rel_ids,
                                     training=training, rng=rng)
        return self.fusion(h_text, h_graph, feats.token_node_rows)

    def logits(self, feats: UnderstandingFeatures, training=False, rng=None) -> Tensor:
        states = self.states(feats, training=training, rng=rng)
        return self.head.logits(states, feats.instance.a1_span, feats.instance.a2_span)

    def probabilities(self, feats: UnderstandingFeatures) -> np.ndarray:
        return ad.softmax(self.logits(feats)).data[0]

    def predict(self, feats: UnderstandingFeatures) -> int:
        return int(np.argmax(self.probabilities(feats)))

    def loss(self, feats: UnderstandingFeatures, training=False, rng=None) -> Tensor:
        return ad.cross_entropy(self.logits(feats, training=training, rng=rng),
                                [feats.instance.gold])


class GenerationModel:
    """Encoder-decoder generator; the dual kind reads text and graph
    memories through dual attention."""

    def __init__(self, cfg: EncoderConfig, kind: str, rng: Rng,
                 sos_id: int, eos_id: int):
        if kind not in MODEL_KINDS:
            raise TaskError(f"unknown model kind {kind!r}")
        self.cfg = cfg
        self.kind = kind
        self.sos_id = sos_id
        self.eos_id = eos_id
        ps = ParamSet(rng)
        if kind == "hier":
            self.encoder = HierEncoder(ps, "encoder", cfg)
        else:
            self.encoder = SeqEncoder(ps, "encoder", cfg)
        dual = kind in ("dual", "utter-amr")
        if dual:
            self.graph_encoder = GraphEncoder(ps, "graph", cfg)
        else:
            self.graph_encoder = None
        self.decoder = Decoder(ps, "decoder", cfg, dual=dual)
        self.params = ps.params

    def memories(self, feats: GenerationFeatures, training=False, rng=None):
        if self.kind == "hier":
            h_text = self.encoder(feats.token_ids, feats.token_rel_ids,
                                  training=training, rng=rng)
            return h_text, None
        h_text = self.encoder(feats.token_ids, training=training, rng=rng)
        if self.graph_encoder is None:
            return h_text, None
        h_graph = self.graph_encoder(feats.node_ids, feats.node_rel_ids,
                                     training=training, rng=rng)
        return h_text, h_graph

    def loss(self, feats: GenerationFeatures, training=False, rng=None) -> Tensor:
        h_text, h_graph = self.memories(feats, training=training, rng=rng)
        return gen_loss(self.decoder, feats.instance.target, h_text, h_graph,
                        sos_id=self.sos_id, training=training, rng=rng)

    def decode(self, feats: GenerationFeatures, beam: int = 5,
               max_len: int = 24) -> tuple[int, ...]:
        h_text, h_graph = self.memories(feats)
        step = _model_step_fn(self.decoder, h_text, h_graph)
        if beam == 1:
            hyp = greedy_steps(step, self.cfg.word_vocab, max_len,
                               self.sos_id, self.eos_id)
        else:
            hyp = beam_search_steps(step, self.cfg.word_vocab, beam, max_len,
                                    self.sos_id, self.eos_id)
        return strip_eos(hyp.tokens, self.eos_id)
