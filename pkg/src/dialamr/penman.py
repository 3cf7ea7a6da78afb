"""PENMAN notation for AMR graphs, plus node-to-token alignment files.

An AMR graph is stored as a flat structure: an ordered list of
(node_id, concept) pairs, an ordered list of (source, label, target)
edges, and a root id.  Node order is the depth-first declaration order
of the PENMAN text, which downstream encoders rely on.

Constants (quoted strings, numbers, ``-``/``+``) become nodes with
auto-generated ids starting with ``_c`` so that the graph model stays
uniform.  Any other bare token in target position is a variable
reference and must be declared somewhere in the same expression.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class PenmanError(ValueError):
    """Malformed PENMAN text or an invalid graph."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)
        self.line = line
        self.col = col


class AlignmentError(ValueError):
    """Malformed alignment file or indices out of range."""


_VARIABLE_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*\Z")
_NUMBER_RE = re.compile(r"[+-]?\d+(\.\d+)?([eE][+-]?\d+)?\Z")


def is_constant_token(token: str) -> bool:
    """True if a bare target token denotes a constant, not a variable."""
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return True
    if token in ("-", "+"):
        return True
    return bool(_NUMBER_RE.match(token))


@dataclass(frozen=True)
class AmrGraph:
    """Rooted, directed, labeled AMR graph.

    nodes: (node_id, concept) in declaration order, root first.
    edges: (source_id, label, target_id) in declaration order; labels are
        stored without the leading ':' and verbatim otherwise (inverse
        roles such as ``ARG0-of`` are not normalized here).
    """

    nodes: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str, str], ...]
    root: str

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(nid for nid, _ in self.nodes)

    def concept(self, node_id: str) -> str:
        return dict(self.nodes)[node_id]

    def validate(self) -> None:
        """Check structural invariants; raise PenmanError on violation."""
        seen: set[str] = set()
        for nid, _ in self.nodes:
            if nid in seen:
                raise PenmanError(f"duplicate node id {nid!r}")
            seen.add(nid)
        if self.root not in seen:
            raise PenmanError(f"root {self.root!r} is not a declared node")
        adjacency: dict[str, list[str]] = {nid: [] for nid in seen}
        for src, label, tgt in self.edges:
            if src not in seen:
                raise PenmanError(f"edge source {src!r} is not a declared node")
            if tgt not in seen:
                raise PenmanError(f"edge target {tgt!r} is not a declared node")
            adjacency[src].append(tgt)
        # Every node must be reachable from the root along edge direction,
        # which is what makes the graph expressible in PENMAN without
        # inventing inverse roles.
        reachable = {self.root}
        stack = [self.root]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in reachable:
                    reachable.add(nxt)
                    stack.append(nxt)
        unreachable = seen - reachable
        if unreachable:
            raise PenmanError(
                f"nodes unreachable from root: {sorted(unreachable)}"
            )
        self._check_acyclic(adjacency)

    def _check_acyclic(self, adjacency: dict[str, list[str]]) -> None:
        # Re-entrancy (several parents per node) is fine; a directed cycle
        # is not an AMR.
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {nid: WHITE for nid in adjacency}
        for start in adjacency:
            if color[start] != WHITE:
                continue
            stack: list[tuple[str, int]] = [(start, 0)]
            color[start] = GRAY
            while stack:
                node, idx = stack[-1]
                if idx < len(adjacency[node]):
                    stack[-1] = (node, idx + 1)
                    child = adjacency[node][idx]
                    if color[child] == GRAY:
                        raise PenmanError(f"directed cycle through {child!r}")
                    if color[child] == WHITE:
                        color[child] = GRAY
                        stack.append((child, 0))
                else:
                    color[node] = BLACK
                    stack.pop()


@dataclass(frozen=True)
class Alignment:
    """One-to-K mapping from AMR node ids to 0-based token indices."""

    entries: dict[str, tuple[int, ...]]
    n_tokens: int

    def tokens_for(self, node_id: str) -> tuple[int, ...]:
        return self.entries.get(node_id, ())


@dataclass
class _Token:
    kind: str  # 'lparen' | 'rparen' | 'slash' | 'role' | 'atom'
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#" and col == 1:
            # metadata / comment line, skip to end of line
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", ch, line, col))
            i += 1
            col += 1
        elif ch == ")":
            tokens.append(_Token("rparen", ch, line, col))
            i += 1
            col += 1
        elif ch == "/":
            tokens.append(_Token("slash", ch, line, col))
            i += 1
            col += 1
        elif ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                if text[j] == "\n":
                    raise PenmanError("unterminated string", line, col)
                j += 1
            if j >= n:
                raise PenmanError("unterminated string", line, col)
            tokens.append(_Token("atom", text[i : j + 1], line, col))
            col += j + 1 - i
            i = j + 1
        elif ch == ":":
            j = i + 1
            while j < n and text[j] not in " \t\r\n()/":
                j += 1
            if j == i + 1:
                raise PenmanError("empty role label after ':'", line, col)
            tokens.append(_Token("role", text[i + 1 : j], line, col))
            col += j - i
            i = j
        else:
            j = i
            while j < n and text[j] not in " \t\r\n()/:":
                j += 1
            tokens.append(_Token("atom", text[i:j], line, col))
            col += j - i
            i = j
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.nodes: list[tuple[str, str]] = []
        self.edges: list[tuple[str, str, str]] = []
        self.declared: set[str] = set()
        self.pending_refs: list[tuple[int, str, _Token]] = []
        self.const_counter = 0

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, expected: str) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise PenmanError(
                f"unexpected end of input, expected {expected}",
                last.line if last else 1,
                last.col if last else 1,
            )
        return tok

    def parse(self) -> AmrGraph:
        tok = self._next("'('")
        if tok.kind != "lparen":
            raise PenmanError(f"expected '(', found {tok.text!r}", tok.line, tok.col)
        root = self._parse_node()
        trailing = self._peek()
        if trailing is not None:
            raise PenmanError(
                f"trailing input {trailing.text!r}", trailing.line, trailing.col
            )
        # resolve references recorded before their declaration
        for edge_idx, var, tok in self.pending_refs:
            if var not in self.declared:
                raise PenmanError(
                    f"reference to undeclared variable {var!r}", tok.line, tok.col
                )
        graph = AmrGraph(tuple(self.nodes), tuple(self.edges), root)
        graph.validate()
        return graph

    def _parse_node(self) -> str:
        tok = self._next("'('")
        assert tok.kind == "lparen"
        self.pos += 1
        var_tok = self._next("a variable")
        if var_tok.kind != "atom" or not _VARIABLE_RE.match(var_tok.text):
            raise PenmanError(
                f"expected a variable, found {var_tok.text!r}",
                var_tok.line,
                var_tok.col,
            )
        var = var_tok.text
        if var in self.declared:
            raise PenmanError(
                f"duplicate declaration of variable {var!r}",
                var_tok.line,
                var_tok.col,
            )
        self.pos += 1
        slash = self._next("'/'")
        if slash.kind != "slash":
            raise PenmanError(
                f"expected '/', found {slash.text!r}", slash.line, slash.col
            )
        self.pos += 1
        concept_tok = self._next("a concept")
        if concept_tok.kind != "atom":
            raise PenmanError(
                f"expected a concept, found {concept_tok.text!r}",
                concept_tok.line,
                concept_tok.col,
            )
        self.pos += 1
        self.declared.add(var)
        self.nodes.append((var, concept_tok.text))
        while True:
            tok = self._next("':role' or ')'")
            if tok.kind == "rparen":
                self.pos += 1
                return var
            if tok.kind != "role":
                raise PenmanError(
                    f"expected ':role' or ')', found {tok.text!r}", tok.line, tok.col
                )
            role = tok.text
            self.pos += 1
            target_tok = self._next("a target")
            if target_tok.kind == "lparen":
                target = self._parse_node()
                self.edges.append((var, role, target))
            elif target_tok.kind == "atom":
                self.pos += 1
                if is_constant_token(target_tok.text):
                    const_id = f"_c{self.const_counter}"
                    self.const_counter += 1
                    self.nodes.append((const_id, target_tok.text))
                    self.declared.add(const_id)
                    self.edges.append((var, role, const_id))
                elif _VARIABLE_RE.match(target_tok.text):
                    self.edges.append((var, role, target_tok.text))
                    if target_tok.text not in self.declared:
                        self.pending_refs.append(
                            (len(self.edges) - 1, target_tok.text, target_tok)
                        )
                else:
                    raise PenmanError(
                        f"invalid target token {target_tok.text!r}",
                        target_tok.line,
                        target_tok.col,
                    )
            else:
                raise PenmanError(
                    f"expected a target, found {target_tok.text!r}",
                    target_tok.line,
                    target_tok.col,
                )


def parse_penman(text: str) -> AmrGraph:
    """Parse a single PENMAN expression into an AmrGraph."""
    tokens = _tokenize(text)
    if not tokens:
        raise PenmanError("empty input", 1, 1)
    return _Parser(tokens).parse()


def serialize_penman(g: AmrGraph) -> str:
    """Canonical single-line PENMAN form of a valid graph.

    Children are ordered by (edge label, target concept, target id);
    a node is declared at its first visit in that order and referenced
    as a bare variable afterwards.  Constant nodes (ids starting with
    '_') are emitted as their literal token.
    """
    g.validate()
    concepts = dict(g.nodes)
    children: dict[str, list[tuple[str, str, str]]] = {nid: [] for nid in concepts}
    for src, label, tgt in g.edges:
        children[src].append((label, concepts[tgt], tgt))
    for nid in children:
        children[nid].sort()
    declared: set[str] = set()

    def emit(node_id: str) -> str:
        declared.add(node_id)
        parts = [f"({node_id} / {concepts[node_id]}"]
        for label, _, tgt in children[node_id]:
            parts.append(f" :{label} ")
            if tgt.startswith("_"):
                parts.append(concepts[tgt])
            elif tgt in declared:
                parts.append(tgt)
            else:
                parts.append(emit(tgt))
        parts.append(")")
        return "".join(parts)

    return emit(g.root)


def graphs_isomorphic(a: AmrGraph, b: AmrGraph) -> bool:
    """Equality up to constant-node renaming (variables must match)."""
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    try:
        return serialize_penman(a) == serialize_penman(b)
    except PenmanError:
        return False


def read_penman_file(text: str) -> list[AmrGraph]:
    """Read blank-line-separated PENMAN blocks; '#' lines are ignored."""
    graphs = []
    block: list[str] = []
    for line in text.splitlines() + [""]:
        if line.strip() == "":
            if block:
                graphs.append(parse_penman("\n".join(block)))
                block = []
        elif line.lstrip().startswith("#"):
            continue
        else:
            block.append(line)
    return graphs


def read_alignment(text: str, g: AmrGraph, n_tokens: int) -> Alignment:
    """Parse an alignment TSV: each line is ``node_id<TAB>i j k ...``.

    Nodes not listed are unaligned.  Indices are 0-based and must be
    smaller than n_tokens.
    """
    known = set(g.node_ids)
    entries: dict[str, tuple[int, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "\t" not in line:
            raise AlignmentError(f"line {lineno}: expected a TAB separator")
        node_id, _, idx_part = line.partition("\t")
        node_id = node_id.strip()
        if node_id not in known:
            raise AlignmentError(f"line {lineno}: unknown node id {node_id!r}")
        if node_id in entries:
            raise AlignmentError(f"line {lineno}: duplicate line for node {node_id!r}")
        indices = []
        for piece in idx_part.split():
            try:
                idx = int(piece)
            except ValueError:
                raise AlignmentError(
                    f"line {lineno}: invalid token index {piece!r}"
                ) from None
            if idx < 0 or idx >= n_tokens:
                raise AlignmentError(
                    f"line {lineno}: token index {idx} out of range [0, {n_tokens})"
                )
            indices.append(idx)
        entries[node_id] = tuple(sorted(set(indices)))
    return Alignment(entries, n_tokens)


def write_alignment(a: Alignment) -> str:
    """Inverse of read_alignment for aligned nodes (canonical order)."""
    lines = []
    for node_id in sorted(a.entries):
        idxs = a.entries[node_id]
        if idxs:
            lines.append(node_id + "\t" + " ".join(str(i) for i in idxs))
    return "\n".join(lines) + ("\n" if lines else "")
