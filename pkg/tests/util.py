"""Shared test helpers: random-graph generation and small fixtures."""

from __future__ import annotations

from dialamr.autodiff import Rng
from dialamr.penman import AmrGraph

CONCEPTS = [
    "possible-01", "mistake-02", "want-01", "go-02", "boy", "girl", "city",
    "name", "sleep-01", "i", "you", "book", "read-01", "afraid-01", "dog",
    "run-02", "house", "see-01", "thing", "person",
]
ROLES = ["ARG0", "ARG1", "ARG2", "mod", "time", "quant", "poss", "ARG0-of"]
CONSTANT_POOL = ['"Bob"', "5", "-", "3.5", '"New York"']


def _var_name(i: int) -> str:
    # a..z, then a2, b2, ...
    letters = "abcdefghijklmnopqrstuvwxyz"
    if i < 26:
        return letters[i]
    return f"{letters[i % 26]}{i // 26 + 1}"


def random_amr_graph(rng: Rng, max_nodes: int = 30) -> AmrGraph:
    """Random DAG reachable from its root: a spanning tree over declared
    variables plus forward re-entrant edges and a few constants."""
    n = 1 + rng.choice_index(max_nodes)
    nodes = []
    edges = []
    for i in range(n):
        nodes.append((_var_name(i), CONCEPTS[rng.choice_index(len(CONCEPTS))]))
        if i > 0:
            parent = rng.choice_index(i)
            role = ROLES[rng.choice_index(len(ROLES))]
            edges.append((_var_name(parent), role, _var_name(i)))
    # forward extra edges keep the graph acyclic
    n_extra = rng.choice_index(max(1, n // 3))
    for _ in range(n_extra):
        i = rng.choice_index(n)
        j = rng.choice_index(n)
        if i == j:
            continue
        lo, hi = min(i, j), max(i, j)
        role = ROLES[rng.choice_index(len(ROLES))]
        edges.append((_var_name(lo), role, _var_name(hi)))
    n_const = rng.choice_index(3)
    for k in range(n_const):
        host = rng.choice_index(n)
        nodes.append((f"_c{k}", CONSTANT_POOL[rng.choice_index(len(CONSTANT_POOL))]))
        edges.append((_var_name(host), "quant" if k % 2 else "polarity", f"_c{k}"))
    return AmrGraph(tuple(nodes), tuple(edges), _var_name(0))
