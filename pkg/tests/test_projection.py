import numpy as np
import pytest

from dialamr.autodiff import Rng
from dialamr.dialogue_graph import GraphOptions, Utterance, build_dialogue_graph
from dialamr.penman import Alignment, AmrGraph, parse_penman
from dialamr.projection import (
    NONE_ID,
    NONE_LABEL,
    ProjectionError,
    RelationVocab,
    SELF_ID,
    SELF_LABEL,
    concat_tokens,
    dump_matrix,
    global_alignment,
    load_matrix,
    normalize_inverse_edges,
    project_edges,
    relation_vocab,
)

from .util import random_amr_graph


def brute_force_project(graph: AmrGraph, alignment: Alignment, n: int):
    """Independent cell-by-cell oracle for the projection rule."""
    rank = {"amr": 0, "coref": 1, "same": 2, "speaker": 3}

    def kind(label):
        if label == "SAME":
            return "same"
        if label == "COREF":
            return "coref"
        if label.startswith("SPEAKER") and label[7:].isdigit():
            return "speaker"
        return "amr"

    cells = [[NONE_LABEL] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                cells[i][j] = SELF_LABEL
                continue
            candidates = [
                label
                for src, label, tgt in graph.edges
                if i in alignment.tokens_for(src) and j in alignment.tokens_for(tgt)
            ]
            if candidates:
                cells[i][j] = min(candidates, key=lambda l: (rank[kind(l)], l))
    return cells


def test_diagonal_is_self():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    m = project_edges(g, Alignment({}, 4), 4)
    assert all(m.label_at(k, k) == SELF_LABEL for k in range(4))


def test_single_edge_hand_case():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    a = Alignment({"m": (0,), "i": (2,)}, 4)
    m = project_edges(g, a, 4)
    assert m.label_at(0, 2) == "ARG0"
    none_count = sum(
        1 for i in range(4) for j in range(4) if i != j and m.label_at(i, j) == NONE_LABEL
    )
    assert none_count == 11
    oracle = brute_force_project(g, a, 4)
    for i in range(4):
        for j in range(4):
            assert m.label_at(i, j) == oracle[i][j]


def test_unaligned_endpoint_projects_nothing():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    m = project_edges(g, Alignment({"m": (0,)}, 4), 4)
    assert all(
        m.label_at(i, j) == (SELF_LABEL if i == j else NONE_LABEL)
        for i in range(4)
        for j in range(4)
    )


def test_one_to_k_cartesian_product():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    a = Alignment({"m": (0, 1), "i": (2, 3)}, 5)
    m = project_edges(g, a, 5)
    for wi in (0, 1):
        for wj in (2, 3):
            assert m.label_at(wi, wj) == "ARG0"


def test_same_word_pair_skipped():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    a = Alignment({"m": (1,), "i": (1,)}, 3)
    m = project_edges(g, a, 3)
    assert m.label_at(1, 1) == SELF_LABEL


def test_conflict_priority_and_order_independence():
    # two edges project onto the same cell: original AMR label must win
    nodes = (("d", "dummy"), ("a", "ask-01"), ("b", "boy"))
    amr_first = AmrGraph(
        nodes, (("a", "ARG0", "b"), ("a", "SAME", "b"), ("d", "SPEAKER1", "a")), "d"
    )
    amr_last = AmrGraph(
        nodes, (("d", "SPEAKER1", "a"), ("a", "SAME", "b"), ("a", "ARG0", "b")), "d"
    )
    a = Alignment({"a": (0,), "b": (1,)}, 2)
    m1 = project_edges(amr_first, a, 2)
    m2 = project_edges(amr_last, a, 2)
    assert m1.label_at(0, 1) == "ARG0"
    assert m2.label_at(0, 1) == "ARG0"


def test_conflict_tie_lexicographic():
    nodes = (("a", "ask-01"), ("b", "boy"))
    g = AmrGraph(nodes, (("a", "mod", "b"), ("a", "ARG1", "b")), "a")
    m = project_edges(g, Alignment({"a": (0,), "b": (1,)}, 2), 2)
    assert m.label_at(0, 1) == "ARG1"


def test_random_pairs_match_oracle():
    rng = Rng(23)
    for trial in range(30):
        g = random_amr_graph(rng, max_nodes=8)
        n = 5 + rng.choice_index(8)
        entries = {}
        for nid in g.node_ids:
            k = rng.choice_index(3)
            if k:
                entries[nid] = tuple(
                    sorted({rng.choice_index(n) for _ in range(k)})
                )
        a = Alignment(entries, n)
        m = project_edges(g, a, n)
        oracle = brute_force_project(g, a, n)
        for i in range(n):
            for j in range(n):
                assert m.label_at(i, j) == oracle[i][j], (trial, i, j)


def test_alignment_unknown_node_rejected():
    g = parse_penman("(m / mistake-02)")
    with pytest.raises(ProjectionError, match="unknown node"):
        project_edges(g, Alignment({"zz": (0,)}, 3), 3)


def test_relation_vocab_ordering():
    assert RelationVocab.from_labels([]).id_to_label == (SELF_LABEL, NONE_LABEL)
    v = RelationVocab.from_labels(["ARG1", "ARG0"])
    assert v.label_to_id == {"SELF": 0, "NONE": 1, "ARG0": 2, "ARG1": 3}


def test_relation_vocab_merge_deterministic():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i) :mod (b / bad))")
    m = project_edges(g, Alignment({}, 3), 3)
    v1 = relation_vocab([m, m])
    v2 = relation_vocab([m])
    assert v1 == v2


def test_reindex_preserves_labels():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    a = Alignment({"m": (0,), "i": (1,)}, 2)
    m = project_edges(g, a, 2)
    merged = RelationVocab.from_labels(["ARG0", "ARG1", "mod"])
    r = m.reindexed(merged)
    assert r.label_at(0, 1) == "ARG0"
    assert r.label_at(1, 0) == NONE_LABEL


def test_normalize_inverse_edges():
    g = parse_penman("(b / boy :ARG0-of (s / sleep-01))")
    flipped = normalize_inverse_edges(g)
    assert ("s", "ARG0", "b") in flipped.edges
    m = project_edges(g, Alignment({"b": (0,), "s": (1,)}, 2), 2, normalize_inverse=True)
    assert m.label_at(1, 0) == "ARG0"
    assert m.label_at(0, 1) == NONE_LABEL


def test_dump_and_load_matrix():
    g = parse_penman("(m / mistake-02 :ARG0 (i / i))")
    m = project_edges(g, Alignment({"m": (0,), "i": (1,)}, 3), 3)
    text = dump_matrix(m)
    assert text.splitlines()[0] == "n\t3"
    loaded = load_matrix(text)
    assert loaded.n == 3
    for i in range(3):
        for j in range(3):
            assert loaded.label_at(i, j) == m.label_at(i, j)


def test_concat_tokens_offsets():
    utts = [
        Utterance(0, 1, ("a", "b"), (parse_penman("(x / ask-01)"),), (Alignment({}, 2),)),
        Utterance(1, 2, ("c",), (parse_penman("(y / beg-01)"),), (Alignment({}, 1),)),
    ]
    tokens, offsets = concat_tokens(utts)
    assert tokens == ["a", "b", "<sep>", "c", "<sep>"]
    assert offsets == [0, 3]


def test_global_alignment_offsets():
    u0 = Utterance(
        0, 1, ("i", "erred"),
        (parse_penman("(m / mistake-02 :ARG0 (i / i))"),),
        (Alignment({"m": (1,), "i": (0,)}, 2),),
    )
    u1 = Utterance(
        1, 2, ("quite", "possible"),
        (parse_penman("(p / possible-01)"),),
        (Alignment({"p": (1,)}, 2),),
    )
    dg = build_dialogue_graph([u0, u1])
    ga = global_alignment(dg, [u0, u1])
    assert ga.tokens_for("u0_s0_m") == (1,)
    assert ga.tokens_for("u1_s0_p") == (4,)
    assert ga.n_tokens == 6
    m = project_edges(dg, ga, 6)
    assert m.label_at(1, 0) == "ARG0"
