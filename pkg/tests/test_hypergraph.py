import math

import numpy as np
import pytest

from globalastar.grammar import DEFAULT_CONFIG, RuleApplication, RuleKind, combine, parse_category, unary_rules
from globalastar.hypergraph import (
    START,
    Agenda,
    Forest,
    Hyperedge,
    ParseNode,
    SearchExhausted,
    Span,
    expand,
    from_bracket,
    path_score,
    to_bracket,
)
from globalastar.local_model import SupertagTable
from globalastar.oracle import all_subtrees
from globalastar.synthetic import FIGURE1_GOLD, ToyGrammar

NP = parse_category("NP")


def leaf(i, cat):
    return ParseNode.leaf(i, parse_category(cat))


def binary(left, right, cat, kind):
    c = parse_category(cat)
    return ParseNode(Span(left.span.start, right.span.end), c, RuleApplication(kind, c), (left, right))


def test_leaf_path_score_is_supertag_score():
    e = Hyperedge((START,), leaf(0, "NP/NP"), local_score=-0.2, global_score=0.0)
    assert path_score(e) == pytest.approx(-0.2)


def test_binary_path_score_sums_tails():
    a, b = leaf(0, "NP/NP"), leaf(1, "NP")
    a.g, b.g = -0.2, -1.2
    e = Hyperedge((a, b), binary(a, b, "NP", RuleKind.FORWARD_APPLY), 0.0, -0.3)
    assert path_score(e) == pytest.approx(-1.7)


def test_figure1b_path_has_seven_edges():
    tree = from_bracket(FIGURE1_GOLD)
    # four leaf edges from START plus three binary edges
    assert len(list(tree.nodes())) == 7
    lex = {0: -0.2, 1: -1.2, 2: -0.1, 3: -0.1}
    g = 0.0
    for n in tree.nodes():
        g += lex[n.span.start] if n.is_leaf else 0.0
    assert g == pytest.approx(-1.6)


def test_path_score_requires_tail_scores():
    a, b = leaf(0, "NP/NP"), leaf(1, "NP")
    e = Hyperedge((a, b), binary(a, b, "NP", RuleKind.FORWARD_APPLY), 0.0, 0.0)
    with pytest.raises(RuntimeError):
        path_score(e)


def edge_with_size(size_leaves):
    nodes = [leaf(i, "NP") for i in range(size_leaves)]
    if size_leaves == 1:
        return Hyperedge((START,), nodes[0])
    cur = nodes[0]
    for n in nodes[1:]:
        c = parse_category("NP")
        cur = ParseNode(Span(cur.span.start, n.span.end), c, RuleApplication(RuleKind.BACKWARD_APPLY, c), (cur, n))
    return Hyperedge((cur.children[0], cur.children[1]), cur)


def test_agenda_pops_max_then_smaller_subtree():
    ag = Agenda()
    a, b, c = edge_with_size(1), edge_with_size(2), edge_with_size(1)
    ag.push(a, -1.0)
    ag.push(b, -0.5)
    ag.push(c, -0.5)
    assert ag.pop_max() is c  # equal priority, fewer nodes
    assert ag.pop_max() is b
    assert ag.pop_max() is a


def test_agenda_insertion_order_breaks_remaining_ties():
    ag = Agenda()
    es = [edge_with_size(1) for _ in range(5)]
    for e in es:
        ag.push(e, -0.25)
    assert [ag.pop_max() for _ in es] == es


def test_agenda_errors():
    ag = Agenda()
    with pytest.raises(SearchExhausted):
        ag.pop_max()
    with pytest.raises(ValueError):
        ag.push(edge_with_size(1), float("nan"))
    with pytest.raises(ValueError):
        ag.push(edge_with_size(1), float("inf"))


def test_agenda_random_pushes_pop_in_order():
    rng = np.random.default_rng(0)
    ag = Agenda()
    sizes = {}
    for k in range(10_000):
        e = edge_with_size(int(rng.integers(1, 4)))
        p = float(-rng.integers(0, 50) / 10.0)  # many exact ties
        sizes[id(e)] = (p, e.head.size, k)
        ag.push(e, p)
    keys = []
    while len(ag):
        e = ag.pop_max()
        p, size, k = sizes[id(e)]
        keys.append((-p, size, k))
    assert keys == sorted(keys)


def test_node_equality_matches_serialization():
    rng = np.random.default_rng(1)
    toy = ToyGrammar(seed=2)
    trees = [s.gold for s in toy.sentences(60, 1, 5)]
    for _ in range(300):
        a, b = trees[int(rng.integers(len(trees)))], trees[int(rng.integers(len(trees)))]
        assert (a == b) == (to_bracket(a) == to_bracket(b))
        if a == b:
            assert hash(a) == hash(b)


def test_bracket_round_trip():
    toy = ToyGrammar(seed=3)
    for s in toy.sentences(50, 1, 7):
        text = to_bracket(s.gold)
        assert to_bracket(from_bracket(text)) == text
        assert from_bracket(text) == s.gold


def test_unique_path_through_parent_pointers():
    tree = from_bracket(FIGURE1_GOLD)
    for node in tree.nodes():
        # each node has exactly one incoming edge: its own rule over its children
        assert len({id(c) for c in node.children}) == len(node.children)
    assert tree.size == 7


def test_expand_fruit_flies_and_like_bananas():
    forest = Forest()
    like = leaf(2, "(S\\NP)/NP")
    bananas = leaf(3, "NP")
    assert expand(forest, like, DEFAULT_CONFIG) == []  # nothing adjacent yet
    edges = expand(forest, bananas, DEFAULT_CONFIG)
    assert [(str(e.head.category), e.head.rule.kind) for e in edges] == [("S\\NP", RuleKind.FORWARD_APPLY)]
    assert edges[0].tails == (like, bananas)


def test_expand_with_no_combinations():
    forest = Forest()
    expand(forest, leaf(0, "NP"), DEFAULT_CONFIG)
    assert expand(forest, leaf(1, "NP"), DEFAULT_CONFIG) == []


def test_expand_twice_is_a_no_op():
    forest = Forest()
    n = leaf(0, "N")
    assert len(expand(forest, n, DEFAULT_CONFIG)) == 1  # unary N -> NP
    assert expand(forest, n, DEFAULT_CONFIG) == []


def test_exhaustive_expansion_builds_every_subtree_once():
    toy = ToyGrammar(seed=4)
    for s in toy.sentences(25, 1, 5):
        table = SupertagTable.from_lexicon(toy.lexicon, s.words)
        forest = Forest()
        frontier = [ParseNode.leaf(t, c) for t, row in enumerate(table.rows) for c, _ in row]
        built = []
        while frontier:
            node = frontier.pop()
            for e in expand(forest, node, DEFAULT_CONFIG):
                built.append(e.head)
                frontier.append(e.head)
        # every non-leaf subtree of the sentence is produced by exactly one hyperedge
        expected = [t for cell in all_subtrees(table).values() for t in cell if not t.is_leaf]
        assert sorted(map(to_bracket, built)) == sorted(map(to_bracket, expected))


def test_forest_lookup_matches_linear_scan():
    toy = ToyGrammar(seed=5)
    forest = Forest()
    nodes = []
    for s in toy.sentences(20, 1, 5):
        for n in s.gold.nodes():
            if forest.add(n):
                nodes.append(n)
    for n in nodes:
        assert sorted(map(to_bracket, forest.lookup(n.span, n.category))) == sorted(
            to_bracket(m) for m in nodes if m.span == n.span and m.category == n.category)
        assert set(map(to_bracket, forest.starting_at(n.span.start))) == {
            to_bracket(m) for m in nodes if m.span.start == n.span.start}
