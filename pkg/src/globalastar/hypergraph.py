"""Parse-forest hypergraph: subtree nodes, hyperedges, agenda and forest."""
from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass

from .grammar import (
    Category,
    GrammarConfig,
    RuleApplication,
    RuleKind,
    combine,
    parse_category,
    unary_rules,
)


class SearchExhausted(Exception):
    """The agenda emptied before a complete parse was explored."""


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"bad span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


class ParseNode:
    """A whole subtree. Equality and hashing are structural over the subtree.

    ``g`` (inside score) and ``state`` (id of the recurrent unit that encodes
    the subtree) are memoized by the search that built the node.
    """

    __slots__ = ("span", "category", "rule", "children", "subtree_hash", "size", "g", "state")

    def __init__(self, span: Span, category: Category | None, rule: RuleApplication | None, children=()):
        self.span = span
        self.category = category
        self.rule = rule
        self.children = tuple(children)
        self.size = 1 + sum(c.size for c in self.children)
        self.subtree_hash = hash((span.start, span.end, str(category),
                                  rule.kind.value if rule else None,
                                  tuple(c.subtree_hash for c in self.children)))
        self.g = None
        self.state = None

    @classmethod
    def leaf(cls, index: int, category: Category) -> "ParseNode":
        return cls(Span(index, index + 1), category, RuleApplication(RuleKind.LEX, category))

    @property
    def is_start(self) -> bool:
        return self.rule is None

    @property
    def is_leaf(self) -> bool:
        return self.rule is not None and self.rule.kind is RuleKind.LEX

    def __hash__(self) -> int:
        return self.subtree_hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, ParseNode) or self.subtree_hash != other.subtree_hash:
            return False
        # hashes agree; resolve possible collisions by deep comparison
        return (self.span == other.span and self.category == other.category
                and (self.rule.kind if self.rule else None) == (other.rule.kind if other.rule else None)
                and self.children == other.children)

    def __repr__(self) -> str:
        return f"ParseNode({to_bracket(self)})"

    def nodes(self):
        """Post-order iteration over the subtree (children before parents)."""
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                yield node
                continue
            stack.append((node, True))
            for c in reversed(node.children):
                stack.append((c, False))

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]


START = ParseNode(Span(0, 0), None, None)
START.g = 0.0


def to_bracket(node: ParseNode) -> str:
    if node.is_start:
        return "(START)"
    if node.is_leaf:
        return f"({node.category} LEX {node.span.start})"
    kids = " ".join(to_bracket(c) for c in node.children)
    return f"({node.category} {node.rule.kind.value} {kids})"


def from_bracket(text: str) -> ParseNode:
    """Inverse of :func:`to_bracket`. Spans are reconstructed from leaf indices."""
    toks = _tokenize_bracket(text)
    pos = 0

    def parse() -> ParseNode:
        nonlocal pos
        if pos >= len(toks) or toks[pos] != "(":
            raise ValueError(f"expected '(' at token {pos} in {text!r}")
        pos += 1
        cat = parse_category(toks[pos])
        kind = RuleKind(toks[pos + 1])
        pos += 2
        if kind is RuleKind.LEX:
            node = ParseNode.leaf(int(toks[pos]), cat)
            pos += 1
        else:
            kids = []
            while toks[pos] == "(":
                kids.append(parse())
            if len(kids) != kind.arity:
                raise ValueError(f"rule {kind.value} expects {kind.arity} children, got {len(kids)}")
            if any(a.span.end != b.span.start for a, b in zip(kids, kids[1:])):
                raise ValueError("children spans are not adjacent")
            node = ParseNode(Span(kids[0].span.start, kids[-1].span.end), cat,
                             RuleApplication(kind, cat), kids)
        if toks[pos] != ")":
            raise ValueError(f"expected ')' at token {pos} in {text!r}")
        pos += 1
        return node

    try:
        node = parse()
    except (IndexError, KeyError) as exc:
        raise ValueError(f"malformed tree {text!r}") from exc
    except ValueError:
        raise
    if pos != len(toks):
        raise ValueError(f"trailing tokens in {text!r}")
    return node


def _tokenize_bracket(text: str) -> list:
    # a node opens with "(" followed by a category token, which may itself hold parentheses
    toks = []
    i, n = 0, len(text)
    expect_cat = False
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif expect_cat:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            toks.append(text[i:j])
            i = j
            expect_cat = False
        elif ch in "()":
            toks.append(ch)
            expect_cat = ch == "("
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append(text[i:j])
            i = j
    return toks


class Stage(enum.Enum):
    FUSED = "FUSED"
    LOCAL_HALF = "LOCAL_HALF"
    GLOBAL_HALF = "GLOBAL_HALF"


PENDING = None


class Hyperedge:
    __slots__ = ("tails", "head", "local_score", "global_score", "stage", "priority")

    def __init__(self, tails, head: ParseNode, local_score=None, global_score=PENDING, stage=Stage.FUSED):
        self.tails = tuple(tails)
        self.head = head
        self.local_score = local_score
        self.global_score = global_score
        self.stage = stage
        self.priority = None

    @property
    def score(self) -> float:
        if self.local_score is None or self.global_score is PENDING:
            raise RuntimeError("edge is not fully scored")
        return self.local_score + self.global_score

    def __repr__(self) -> str:
        return f"Hyperedge({to_bracket(self.head)}, {self.stage.value}, p={self.priority})"


def inside_score(tails, local_score: float, global_score: float) -> float:
    # one fixed summation order keeps lazy and eager runs bit-identical
    g = 0.0
    for t in tails:
        if t.g is None:
            raise RuntimeError(f"tail {t!r} has no memoized path score")
        g += t.g
    return g + local_score + global_score


def path_score(e: Hyperedge, score_fn=None) -> float:
    """g(path(e)): the edge score plus the memoized scores of its tails; memoized on the head."""
    s = score_fn(e) if score_fn is not None else e.score
    g = 0.0
    for t in e.tails:
        if t.g is None:
            raise RuntimeError(f"tail {t!r} has no memoized path score")
        g += t.g
    e.head.g = g + s
    return e.head.g


class Agenda:
    """Max-priority queue of hyperedges.

    Ties go to the edge whose head subtree has fewer nodes, then to the
    earlier insertion.
    """

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def push(self, e: Hyperedge, priority: float) -> None:
        if not math.isfinite(priority):
            raise ValueError(f"non-finite agenda priority {priority}")
        e.priority = priority
        heapq.heappush(self._heap, (-priority, e.head.size, next(self._seq), e))

    def pop_max(self) -> Hyperedge:
        if not self._heap:
            raise SearchExhausted("agenda is empty")
        return heapq.heappop(self._heap)[3]

    def peek(self) -> Hyperedge:
        if not self._heap:
            raise SearchExhausted("agenda is empty")
        return self._heap[0][3]

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self):
        return (item[3] for item in self._heap)


class Forest:
    """Explored nodes, indexed for adjacency and (span, category) lookup."""

    def __init__(self):
        self._nodes = {START}
        self._by_start: dict = {}
        self._by_end: dict = {}
        self._by_label: dict = {}

    def __contains__(self, node: ParseNode) -> bool:
        return node in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def add(self, node: ParseNode) -> bool:
        if node in self._nodes:
            return False
        self._nodes.add(node)
        self._by_start.setdefault(node.span.start, []).append(node)
        self._by_end.setdefault(node.span.end, []).append(node)
        self._by_label.setdefault((node.span, node.category), []).append(node)
        return True

    def lookup(self, span: Span, category: Category) -> list:
        return list(self._by_label.get((span, category), ()))

    def starting_at(self, i: int) -> list:
        return self._by_start.get(i, [])

    def ending_at(self, j: int) -> list:
        return self._by_end.get(j, [])

    def nodes(self):
        return iter(self._nodes)


def expand(forest: Forest, node: ParseNode, config: GrammarConfig, scorer=None) -> list:
    """Add ``node`` to the forest and build every hyperedge it heads into.

    Unary rules apply to ``node`` unless it was itself built by a unary rule.
    Binary rules combine it with adjacent explored nodes in both orders.
    ``scorer``, if given, is called on each new edge.
    """
    if not forest.add(node):
        return []
    edges = []
    if node.rule.kind is not RuleKind.UNARY:
        for cat, rule in unary_rules(node.category, config):
            edges.append(Hyperedge((node,), ParseNode(node.span, cat, rule, (node,))))
    # node on the right
    for left in list(forest.ending_at(node.span.start)):
        if left.is_start:
            continue
        for cat, rule in combine(left.category, node.category, config):
            span = Span(left.span.start, node.span.end)
            edges.append(Hyperedge((left, node), ParseNode(span, cat, rule, (left, node))))
    # node on the left
    for right in list(forest.starting_at(node.span.end)):
        if right.is_start:
            continue
        for cat, rule in combine(node.category, right.category, config):
            span = Span(node.span.start, right.span.end)
            edges.append(Hyperedge((node, right), ParseNode(span, cat, rule, (node, right))))
    if scorer is not None:
        for e in edges:
            scorer(e)
    return edges
