"""Ground-truth engines for verification: brute-force enumeration and CKY.

Tree scoring here is written out straight-line from the model equations and
shares no code with the incremental graph in ``global_model``.
"""
from __future__ import annotations

import math

import numpy as np

from .global_model import ParameterStore
from .grammar import DEFAULT_CONFIG, GrammarConfig, RuleKind, combine, unary_rules
from .hypergraph import ParseNode, Span, to_bracket
from .local_model import SupertagTable

DEFAULT_CAP = 7


class OracleRefused(ValueError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logsig(z: float) -> float:
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


class StraightLineScorer:
    """Evaluates the global model on one tree at a time with no shared state."""

    def __init__(self, params: ParameterStore, words, dropout_mask=None):
        self.P = params.tensors
        self.mask = dropout_mask
        self.params = params
        self.H = params.dims.hidden
        self.words = list(words)
        self.lexical = params.dims.leaf_input == "bilstm"
        if self.lexical:
            self.fwd, self.bwd = self.encode()

    def embed(self, t):
        x = self.P["word_emb"][self.params.word_id(self.words[t])]
        return x if self.mask is None else x * self.mask[t]

    def chain(self, prefix, order):
        P, H = self.P, self.H
        Wi, Wc, Wo = P[prefix + ".W_i"], P[prefix + ".W_c"], P[prefix + ".W_o"]
        c, h = P[prefix + ".c0"], P[prefix + ".h0"]
        out = {}
        for t in order:
            x = self.embed(t)
            i = _sigmoid(Wi[:, :H] @ c + Wi[:, H:2 * H] @ h + Wi[:, 2 * H:] @ x + P[prefix + ".b_i"])
            ct = np.tanh(Wc[:, :H] @ h + Wc[:, H:] @ x + P[prefix + ".b_c"])
            o = _sigmoid(Wo[:, :H] @ ct + Wo[:, H:2 * H] @ h + Wo[:, 2 * H:] @ x + P[prefix + ".b_o"])
            c = i * ct + (1 - i) * c
            h = o * np.tanh(c)
            out[t] = (c, h)
        return out

    def encode(self):
        n = len(self.words)
        return self.chain("fwd", range(n)), self.chain("bwd", range(n - 1, -1, -1))

    def unit(self, rule: str, left, right, category):
        P, H = self.P, self.H
        cl, hl = left
        cr, hr = right
        x = P["cat_emb"][self.params.cat_id(category)]
        p = f"tree.{rule}."
        Wi, Wf, Wc, Wo = P[p + "W_i"], P[p + "W_f"], P[p + "W_c"], P[p + "W_o"]

        def four(W):
            return W[:, :H] @ cl + W[:, H:2 * H] @ hl + W[:, 2 * H:3 * H] @ cr + W[:, 3 * H:4 * H] @ hr + W[:, 4 * H:] @ x

        i = _sigmoid(four(Wi) + P[p + "b_i"])
        f = _sigmoid(four(Wf) + P[p + "b_f"])
        ct = np.tanh(Wc[:, :H] @ hl + Wc[:, H:2 * H] @ hr + Wc[:, 2 * H:] @ x + P[p + "b_c"])
        o = _sigmoid(Wo[:, :H] @ ct + Wo[:, H:2 * H] @ hl + Wo[:, 2 * H:3 * H] @ hr + Wo[:, 3 * H:] @ x + P[p + "b_o"])
        clr = f * cl + (1 - f) * cr
        c = i * ct + (1 - i) * clr
        return c, o * np.tanh(c)

    def state(self, node: ParseNode):
        """(c, h) of a subtree, recomputed recursively from scratch."""
        if node.is_leaf:
            t = node.span.start
            if self.lexical:
                left, right = self.fwd[t], self.bwd[t]
            else:
                z = np.zeros(self.H)
                left = right = (z, z)
        elif len(node.children) == 1:
            left = (self.P["unary.c"], self.P["unary.h"])
            right = self.state(node.children[0])
        else:
            left, right = self.state(node.children[0]), self.state(node.children[1])
        return self.unit(node.rule.kind.value, left, right, node.category)

    def node_score(self, node: ParseNode) -> float:
        _, h = self.state(node)
        return _logsig(float(self.P["score.W"] @ h))

    def tree_global(self, tree: ParseNode) -> float:
        """Sum of global scores over every node of ``tree``."""
        total = 0.0
        stack = [tree]
        while stack:
            node = stack.pop()
            total += self.node_score(node)
            stack.extend(node.children)
        return total


def local_tree_score(tree: ParseNode, table: SupertagTable) -> float:
    total = 0.0
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            total += table.score(node.span.start, node.category)
        stack.extend(node.children)
    return total


def all_subtrees(table: SupertagTable, config: GrammarConfig = DEFAULT_CONFIG) -> dict:
    """Every derivable subtree, keyed by (start, end)."""
    n = len(table)
    cells: dict = {}

    def with_unaries(nodes):
        out = list(nodes)
        for node in nodes:
            if node.rule.kind is RuleKind.UNARY:
                continue
            for cat, rule in unary_rules(node.category, config):
                out.append(ParseNode(node.span, cat, rule, (node,)))
        return out

    for t, row in enumerate(table.rows):
        cells[t, t + 1] = with_unaries([ParseNode.leaf(t, cat) for cat, _ in row])
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            found = []
            for k in range(i + 1, j):
                for left in cells[i, k]:
                    for right in cells[k, j]:
                        for cat, rule in combine(left.category, right.category, config):
                            found.append(ParseNode(Span(i, j), cat, rule, (left, right)))
            cells[i, j] = with_unaries(found)
    return cells


def enumerate_parses(table: SupertagTable, config: GrammarConfig = DEFAULT_CONFIG,
                     params: ParameterStore | None = None, cap: int = DEFAULT_CAP) -> list:
    """All complete derivations with their full-model scores."""
    n = len(table)
    if n > cap:
        raise OracleRefused(f"sentence length {n} exceeds the enumeration cap of {cap}")
    cells = all_subtrees(table, config)
    scorer = StraightLineScorer(params, table.words) if params is not None else None
    out = []
    for tree in cells[0, n]:
        if not config.is_root(tree.category):
            continue
        score = local_tree_score(tree, table)
        if scorer is not None:
            score += scorer.tree_global(tree)
        out.append((tree, score))
    return out


def best_parse(table, config=DEFAULT_CONFIG, params=None, cap=DEFAULT_CAP):
    parses = enumerate_parses(table, config, params, cap)
    if not parses:
        return None, float("-inf")
    return max(parses, key=lambda p: p[1])


def cky_viterbi(table: SupertagTable, config: GrammarConfig = DEFAULT_CONFIG):
    """Best complete parse under supertag scores alone. Returns (None, -inf) if none exists.

    Equal scores prefer the smaller tree, then the smaller bracket string.
    """
    n = len(table)

    def better(a, b):
        if b is None:
            return True
        if a[0] != b[0]:
            return a[0] > b[0]
        if a[1].size != b[1].size:
            return a[1].size < b[1].size
        return to_bracket(a[1]) < to_bracket(b[1])

    def close_unary(base: dict) -> dict:
        full = dict(base)
        for cat, (score, node) in base.items():
            for ucat, rule in unary_rules(cat, config):
                cand = (score, ParseNode(node.span, ucat, rule, (node,)))
                if better(cand, full.get(ucat)):
                    full[ucat] = cand
        return full

    chart: dict = {}
    for t, row in enumerate(table.rows):
        base: dict = {}
        for cat, lp in row:
            cand = (lp, ParseNode.leaf(t, cat))
            if better(cand, base.get(cat)):
                base[cat] = cand
        chart[t, t + 1] = close_unary(base)
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            base = {}
            for k in range(i + 1, j):
                for lcat, (ls, lnode) in chart[i, k].items():
                    for rcat, (rs, rnode) in chart[k, j].items():
                        for cat, rule in combine(lcat, rcat, config):
                            cand = (ls + rs, ParseNode(Span(i, j), cat, rule, (lnode, rnode)))
                            if better(cand, base.get(cat)):
                                base[cat] = cand
            chart[i, j] = close_unary(base)
    best = None
    for cat, item in chart[0, n].items():
        if config.is_root(cat) and better(item, best):
            best = item
    if best is None:
        return None, float("-inf")
    return best[1], best[0]
