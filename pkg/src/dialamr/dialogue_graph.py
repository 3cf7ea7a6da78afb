"""Merge utterance-level AMRs into a single dialogue-level graph.

Three kinds of edges connect the per-sentence graphs:

* a dummy root node with one SPEAKER<k> edge per sentence root,
* SAME edges between identical non-pronoun concepts in different
  utterances, directed from the later mention to the nearest earlier one,
* COREF edges within externally supplied coreference clusters, likewise
  later-to-earlier.

Merged node ids are ``u<utterance>_s<sentence>_<original id>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .penman import Alignment, AmrGraph, parse_penman, read_alignment

SPEAKER_PREFIX = "SPEAKER"
SAME_LABEL = "SAME"
COREF_LABEL = "COREF"
DUMMY_ID = "dummy"
DUMMY_CONCEPT = "dummy"

# AMR lowercases pronoun concepts; identical-concept linking skips these.
PRONOUN_CONCEPTS = frozenset(
    {
        "i", "you", "he", "she", "it", "we", "they",
        "this", "that", "these", "those", "one",
        "someone", "something", "anyone", "anything",
        "everyone", "everything",
    }
)


class DialogueDataError(ValueError):
    """Inconsistent dialogue input (bad references, bad shapes)."""


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: int
    tokens: tuple[str, ...]
    graphs: tuple[AmrGraph, ...]
    alignments: tuple[Alignment, ...]

    def __post_init__(self):
        if not self.graphs:
            raise DialogueDataError(f"utterance {self.index} has no graphs")
        if len(self.graphs) != len(self.alignments):
            raise DialogueDataError(
                f"utterance {self.index}: {len(self.graphs)} graphs but "
                f"{len(self.alignments)} alignments"
            )


NodeRef = tuple[int, int, str]  # (utterance index, graph index, node id)


@dataclass(frozen=True)
class GraphOptions:
    speaker: bool = True
    same: bool = True
    coref: bool = True
    same_linking: str = "chain"  # 'chain' or 'all-pairs'
    dedupe_coref: bool = False  # skip COREF where a SAME edge already exists

    def __post_init__(self):
        if self.same_linking not in ("chain", "all-pairs"):
            raise ValueError(f"unknown same_linking {self.same_linking!r}")


@dataclass(frozen=True)
class DialogueGraph:
    graph: AmrGraph
    dummy_root: str
    # merged node id -> (utterance index, graph index, original node id)
    provenance: dict[str, NodeRef]

    def edge_kind(self, label: str) -> str:
        if label.startswith(SPEAKER_PREFIX) and label[len(SPEAKER_PREFIX):].isdigit():
            return "speaker"
        if label == SAME_LABEL:
            return "same"
        if label == COREF_LABEL:
            return "coref"
        return "amr"

    def added_edges(self, kind: str) -> list[tuple[str, str, str]]:
        return [e for e in self.graph.edges if self.edge_kind(e[1]) == kind]


def merged_node_id(utt: int, sent: int, node_id: str) -> str:
    return f"u{utt}_s{sent}_{node_id}"


def _merge(utterances: list[Utterance]):
    nodes: list[tuple[str, str]] = [(DUMMY_ID, DUMMY_CONCEPT)]
    edges: list[tuple[str, str, str]] = []
    provenance: dict[str, NodeRef] = {}
    roots: list[tuple[int, int, str]] = []  # (utt, sent, merged root id)
    for utt in utterances:
        for j, g in enumerate(utt.graphs):
            rename = {nid: merged_node_id(utt.index, j, nid) for nid in g.node_ids}
            for nid, concept in g.nodes:
                nodes.append((rename[nid], concept))
                provenance[rename[nid]] = (utt.index, j, nid)
            for src, label, tgt in g.edges:
                edges.append((rename[src], label, rename[tgt]))
            roots.append((utt.index, j, rename[g.root]))
    return nodes, edges, provenance, roots


def speaker_edges(utterances: list[Utterance]) -> list[tuple[str, str, str]]:
    """One edge from the dummy node to every sentence root, tagged by speaker."""
    edges = []
    for utt in utterances:
        for j, g in enumerate(utt.graphs):
            root = merged_node_id(utt.index, j, g.root)
            edges.append((DUMMY_ID, f"{SPEAKER_PREFIX}{utt.speaker}", root))
    return edges


def same_edges(
    nodes: list[tuple[str, str]],
    provenance: dict[str, NodeRef],
    linking: str = "chain",
) -> list[tuple[str, str, str]]:
    """Link identical non-pronoun concepts across utterances.

    Occurrences are ordered by (utterance, graph, declaration); each later
    occurrence links to its nearest earlier occurrence in a strictly
    earlier utterance ('chain'), or to all of them ('all-pairs').
    """
    by_concept: dict[str, list[tuple[NodeRef, str]]] = {}
    for merged_id, concept in nodes:
        if merged_id == DUMMY_ID or concept in PRONOUN_CONCEPTS:
            continue
        ref = provenance[merged_id]
        by_concept.setdefault(concept, []).append((ref, merged_id))
    edges = []
    for concept in by_concept:
        occurrences = by_concept[concept]  # already in declaration order
        for k, ((utt_k, _, _), merged_k) in enumerate(occurrences):
            earlier = [
                merged_e
                for (utt_e, _, _), merged_e in occurrences[:k]
                if utt_e < utt_k
            ]
            if not earlier:
                continue
            if linking == "chain":
                edges.append((merged_k, SAME_LABEL, earlier[-1]))
            else:
                for merged_e in earlier:
                    edges.append((merged_k, SAME_LABEL, merged_e))
    return edges


def coref_edges(
    clusters: list[list[NodeRef]],
    provenance: dict[str, NodeRef],
    node_order: dict[str, int],
) -> list[tuple[str, str, str]]:
    """Within each cluster, link every node to the nearest member in an
    earlier utterance; within-utterance pairs never produce edges."""
    by_ref = {ref: merged_id for merged_id, ref in provenance.items()}
    edges = []
    for cluster in clusters:
        members = []
        for ref in cluster:
            merged_id = by_ref.get(tuple(ref))
            if merged_id is None:
                raise DialogueDataError(f"coref cluster references unknown node {ref}")
            members.append(merged_id)
        members.sort(key=lambda mid: node_order[mid])
        for k, merged_k in enumerate(members):
            utt_k = provenance[merged_k][0]
            earlier = [m for m in members[:k] if provenance[m][0] < utt_k]
            if earlier:
                edges.append((merged_k, COREF_LABEL, earlier[-1]))
    return edges


def build_dialogue_graph(
    utterances: list[Utterance],
    clusters: list[list[NodeRef]] | None = None,
    options: GraphOptions = GraphOptions(),
) -> DialogueGraph:
    """Merge utterance AMRs and add the configured connecting edges."""
    if not utterances:
        raise DialogueDataError("dialogue has no utterances")
    clusters = clusters or []
    nodes, edges, provenance, _ = _merge(utterances)
    node_order = {nid: i for i, (nid, _) in enumerate(nodes)}
    if options.speaker:
        edges.extend(speaker_edges(utterances))
    same = same_edges(nodes, provenance, options.same_linking) if options.same else []
    edges.extend(same)
    if options.coref:
        added = coref_edges(clusters, provenance, node_order)
        if options.dedupe_coref:
            same_pairs = {(s, t) for s, _, t in same} | {(t, s) for s, _, t in same}
            added = [e for e in added if (e[0], e[2]) not in same_pairs]
        edges.extend(added)
    graph = AmrGraph(tuple(nodes), tuple(edges), DUMMY_ID)
    if options.speaker:
        graph.validate()
    return DialogueGraph(graph, DUMMY_ID, provenance)


def utterance_from_json(index: int, obj: dict) -> Utterance:
    graphs = tuple(parse_penman(p) for p in obj["penman"])
    tokens = tuple(obj["tokens"])
    alignments = tuple(
        read_alignment(text, g, len(tokens))
        for text, g in zip(obj["alignments"], graphs)
    )
    return Utterance(
        index=index,
        speaker=int(obj["speaker"]),
        tokens=tokens,
        graphs=graphs,
        alignments=alignments,
    )


@dataclass(frozen=True)
class Dialogue:
    """One dialogue as read from the JSON-lines corpus format."""

    id: str
    utterances: tuple[Utterance, ...]
    coref: tuple[tuple[NodeRef, ...], ...]
    extra: dict = field(default_factory=dict, compare=False)

    def truncated(self, last_turn: int) -> "Dialogue":
        """Keep turns 0..last_turn; drop coref refs into removed turns."""
        kept = self.utterances[: last_turn + 1]
        clusters = []
        for cluster in self.coref:
            refs = tuple(r for r in cluster if r[0] <= last_turn)
            if len(refs) >= 2:
                clusters.append(refs)
        return Dialogue(self.id, kept, tuple(clusters), dict(self.extra))


def dialogue_from_json(obj: dict) -> Dialogue:
    utterances = tuple(
        utterance_from_json(i, u) for i, u in enumerate(obj["utterances"])
    )
    coref = tuple(
        tuple((int(u), int(g), str(n)) for u, g, n in cluster)
        for cluster in obj.get("coref", [])
    )
    extra = {
        k: v for k, v in obj.items() if k not in ("id", "utterances", "coref")
    }
    return Dialogue(str(obj.get("id", "")), utterances, coref, extra)


def read_dialogues(text: str) -> list[Dialogue]:
    """Parse a JSON-lines dialogue corpus."""
    dialogues = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            dialogues.append(dialogue_from_json(obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise DialogueDataError(f"line {lineno}: {exc}") from exc
    return dialogues


_DOT_COLORS = {"speaker": "blue", "same": "forestgreen", "coref": "red"}


def to_dot(dg: DialogueGraph) -> str:
    """Graphviz rendering; added edges are colored by kind."""
    concepts = dict(dg.graph.nodes)
    lines = [
        "digraph dialogue {",
        '  rankdir="TB";',
        '  node [shape=ellipse, fontname="Helvetica"];',
    ]
    for nid, concept in dg.graph.nodes:
        label = f"{nid}/{concept}" if not nid.startswith("_") else concept
        lines.append(f'  "{nid}" [label="{_dot_escape(label)}"];')
    for src, label, tgt in dg.graph.edges:
        kind = dg.edge_kind(label)
        attrs = [f'label="{_dot_escape(label)}"']
        if kind in _DOT_COLORS:
            color = _DOT_COLORS[kind]
            attrs.append(f'color="{color}"')
            attrs.append(f'fontcolor="{color}"')
        lines.append(f'  "{src}" -> "{tgt}" [{", ".join(attrs)}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')
