"""Project dialogue-graph edges onto token pairs via node-to-token alignments.

The result is an N x N matrix of relation-label ids with SELF on the
diagonal and NONE everywhere no edge projects.  When two edges project
different labels onto one cell, the winner is chosen by a fixed priority
(original AMR labels, then COREF, then SAME, then SPEAKER tags; ties go
to the lexicographically smaller label) so the output does not depend on
edge iteration order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .dialogue_graph import DialogueGraph, Utterance
from .penman import Alignment, AmrGraph

SELF_LABEL = "SELF"
NONE_LABEL = "NONE"
SEP_TOKEN = "<sep>"

_SPEAKER_RE = re.compile(r"SPEAKER\d+\Z")


class ProjectionError(ValueError):
    pass


def label_kind(label: str) -> str:
    if _SPEAKER_RE.match(label):
        return "speaker"
    if label == "SAME":
        return "same"
    if label == "COREF":
        return "coref"
    return "amr"


_KIND_RANK = {"amr": 0, "coref": 1, "same": 2, "speaker": 3}


def _priority(label: str) -> tuple[int, str]:
    return (_KIND_RANK[label_kind(label)], label)


@dataclass(frozen=True)
class RelationVocab:
    """Label <-> id mapping with SELF=0 and NONE=1 reserved."""

    id_to_label: tuple[str, ...]

    @staticmethod
    def from_labels(labels) -> "RelationVocab":
        extra = sorted(set(labels) - {SELF_LABEL, NONE_LABEL})
        return RelationVocab((SELF_LABEL, NONE_LABEL, *extra))

    @property
    def label_to_id(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.id_to_label)}

    def __len__(self) -> int:
        return len(self.id_to_label)

    def id(self, label: str) -> int:
        try:
            return self.label_to_id[label]
        except KeyError:
            raise ProjectionError(f"label {label!r} not in relation vocabulary")


SELF_ID = 0
NONE_ID = 1


@dataclass(frozen=True)
class RelationMatrix:
    n: int
    labels: np.ndarray  # int array [n, n] of vocab ids
    vocab: RelationVocab

    def label_at(self, i: int, j: int) -> str:
        return self.vocab.id_to_label[int(self.labels[i, j])]

    def reindexed(self, vocab: RelationVocab) -> "RelationMatrix":
        """Same matrix under a merged vocabulary."""
        mapping = np.array(
            [vocab.id(label) for label in self.vocab.id_to_label], dtype=np.int64
        )
        return RelationMatrix(self.n, mapping[self.labels], vocab)


def normalize_inverse_edges(g: AmrGraph) -> AmrGraph:
    """Flip '<role>-of' edges and strip the suffix."""
    edges = []
    for src, label, tgt in g.edges:
        if label.endswith("-of") and len(label) > 3:
            edges.append((tgt, label[:-3], src))
        else:
            edges.append((src, label, tgt))
    return AmrGraph(g.nodes, tuple(edges), g.root)


def project_edges(
    g: DialogueGraph | AmrGraph,
    alignment: Alignment,
    n: int,
    normalize_inverse: bool = False,
) -> RelationMatrix:
    """Build the token-pair relation matrix for one graph and alignment."""
    graph = g.graph if isinstance(g, DialogueGraph) else g
    if normalize_inverse:
        graph = normalize_inverse_edges(graph)
    known = set(graph.node_ids)
    for node_id in alignment.entries:
        if node_id not in known:
            raise ProjectionError(f"alignment refers to unknown node {node_id!r}")
    if alignment.n_tokens > n:
        raise ProjectionError(
            f"alignment covers {alignment.n_tokens} tokens but matrix has {n}"
        )
    vocab = RelationVocab.from_labels(label for _, label, _ in graph.edges)
    ids = np.full((n, n), NONE_ID, dtype=np.int64)
    # (rank, label) of the current winner per cell; None-rank cells are free
    best: dict[tuple[int, int], tuple[int, str]] = {}
    for src, label, tgt in graph.edges:
        prio = _priority(label)
        for wi in alignment.tokens_for(src):
            for wj in alignment.tokens_for(tgt):
                if wi == wj:
                    continue
                cell = (wi, wj)
                if cell not in best or prio < best[cell]:
                    best[cell] = prio
                    ids[wi, wj] = vocab.id(label)
    np.fill_diagonal(ids, SELF_ID)
    return RelationMatrix(n, ids, vocab)


def relation_vocab(matrices) -> RelationVocab:
    """Deterministic merged vocabulary over a collection of matrices."""
    labels: set[str] = set()
    for m in matrices:
        labels.update(m.vocab.id_to_label)
    return RelationVocab.from_labels(labels)


def reverse_label(label: str) -> str:
    return label[:-3] if label.endswith("-of") and len(label) > 3 else label + "-of"


def node_relation_matrix(
    g: DialogueGraph | AmrGraph,
    vocab: RelationVocab,
    add_reverse: bool = False,
) -> RelationMatrix:
    """Node-pair relation ids for the graph encoder: SELF diagonal,
    edge labels on (source, target) cells, NONE elsewhere.  With
    add_reverse, (target, source) cells carry the '-of' form so labeled
    information can flow against edge direction."""
    graph = g.graph if isinstance(g, DialogueGraph) else g
    index = {nid: i for i, nid in enumerate(graph.node_ids)}
    m = len(index)
    ids = np.full((m, m), NONE_ID, dtype=np.int64)
    best: dict[tuple[int, int], tuple[int, str]] = {}

    def put(i, j, label):
        prio = _priority(label)
        if (i, j) not in best or prio < best[(i, j)]:
            best[(i, j)] = prio
            ids[i, j] = vocab.id(label)

    for src, label, tgt in graph.edges:
        si, ti = index[src], index[tgt]
        if si == ti:
            continue
        put(si, ti, label)
        if add_reverse:
            put(ti, si, reverse_label(label))
    np.fill_diagonal(ids, SELF_ID)
    return RelationMatrix(m, ids, vocab)


def concat_tokens(utterances: list[Utterance]) -> tuple[list[str], list[int]]:
    """Flatten utterance tokens with one separator after each utterance.

    Returns the token list and the global start offset of each utterance.
    """
    tokens: list[str] = []
    offsets: list[int] = []
    for utt in utterances:
        offsets.append(len(tokens))
        tokens.extend(utt.tokens)
        tokens.append(SEP_TOKEN)
    return tokens, offsets


def global_alignment(
    dg: DialogueGraph, utterances: list[Utterance], n_tokens: int | None = None
) -> Alignment:
    """Lift per-utterance alignments to dialogue-global token positions."""
    _, offsets = concat_tokens(utterances)
    if n_tokens is None:
        n_tokens = sum(len(u.tokens) + 1 for u in utterances)
    by_index = {u.index: u for u in utterances}
    entries: dict[str, tuple[int, ...]] = {}
    for merged_id, (utt_idx, graph_idx, orig_id) in dg.provenance.items():
        utt = by_index[utt_idx]
        local = utt.alignments[graph_idx].tokens_for(orig_id)
        if local:
            entries[merged_id] = tuple(i + offsets[utt_idx] for i in local)
    return Alignment(entries, n_tokens)


def dump_matrix(m: RelationMatrix) -> str:
    """TSV with an ``n`` header line and one (i, j, label) row per
    non-NONE cell."""
    lines = [f"n\t{m.n}"]
    for i in range(m.n):
        for j in range(m.n):
            ident = int(m.labels[i, j])
            if ident != NONE_ID:
                lines.append(f"{i}\t{j}\t{m.vocab.id_to_label[ident]}")
    return "\n".join(lines) + "\n"


def load_matrix(text: str) -> RelationMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n\t"):
        raise ProjectionError("missing 'n' header line")
    n = int(lines[0].split("\t")[1])
    cells = []
    labels = set()
    for ln in lines[1:]:
        i, j, label = ln.split("\t")
        cells.append((int(i), int(j), label))
        labels.add(label)
    vocab = RelationVocab.from_labels(labels)
    ids = np.full((n, n), NONE_ID, dtype=np.int64)
    for i, j, label in cells:
        ids[i, j] = vocab.id(label)
    return RelationMatrix(n, ids, vocab)
