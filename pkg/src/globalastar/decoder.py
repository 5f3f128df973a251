"""A* decoding over the parse forest, plus baseline decoders."""
from __future__ import annotations

import enum
import heapq
import itertools
import time
from dataclasses import dataclass, field

from .global_model import ComputationGraph, ParameterStore
from .grammar import DEFAULT_CONFIG, DecodeError, GrammarConfig, RuleKind, combine, unary_rules
from .hypergraph import (
    START,
    Agenda,
    Forest,
    Hyperedge,
    ParseNode,
    SearchExhausted,
    Span,
    Stage,
    expand,
    inside_score,
    to_bracket,
)
from .local_model import SupertagTable, heuristic, score_local


class Certificate(enum.Enum):
    OPTIMAL = "OPTIMAL"
    BACKOFF = "BACKOFF"
    FAILED = "FAILED"


@dataclass(frozen=True)
class DecodeLimits:
    max_forest_size: int = 500_000
    max_agenda_size: int = 2_000_000
    max_tree_units: int = 200_000

    def __post_init__(self):
        if min(self.max_forest_size, self.max_agenda_size, self.max_tree_units) <= 0:
            raise ValueError("decode limits must be positive")


@dataclass
class DecodeStats:
    nodes_explored: int = 0
    nonleaf_explored: int = 0
    edges_pushed: int = 0
    global_evals: int = 0
    wall_time: float = 0.0
    popped: list = field(default_factory=list, repr=False)


@dataclass
class DecodeResult:
    parse: ParseNode | None
    score: float
    certificate: Certificate
    stats: DecodeStats
    backoff: bool = False
    note: str = ""


class LimitExceeded(Exception):
    pass


class EdgeScorer:
    """Scores hyperedges with the local table and, if a graph is given, the global model."""

    def __init__(self, table: SupertagTable, graph: ComputationGraph | None = None,
                 h_scale: float = 1.0, h_offset: float = 0.0):
        self.table = table
        self.graph = graph
        self.n = len(table)
        self.global_evals = 0
        self.h_scale = h_scale
        self.h_offset = h_offset

    def local(self, e: Hyperedge) -> float:
        return score_local(e, self.table)

    def global_(self, e: Hyperedge) -> float:
        if self.graph is None:
            return 0.0
        self.global_evals += 1
        return self.graph.score(e.head)

    def h(self, span: Span) -> float:
        value = heuristic(span, self.table)
        if self.h_scale != 1.0 or self.h_offset:
            # fault-injection hook; the full span keeps h = 0
            if len(span) != self.n:
                value = value * self.h_scale + self.h_offset
        return value

    @property
    def n_units(self) -> int:
        return self.graph.n_units if self.graph is not None else 0


def leaf_edges(table: SupertagTable) -> list:
    edges = []
    for t, row in enumerate(table.rows):
        for cat, _ in row:
            edges.append(Hyperedge((START,), ParseNode.leaf(t, cat)))
    return edges


class AgendaSearch:
    """One A*-style search instance: agenda, forest and scoring.

    ``lazy`` splits non-leaf edges into a local half and a global half.
    ``use_heuristic=False`` gives uninformed best-first search.
    ``dynamic_program`` (only sound without global scores) skips a node when
    another node with the same span and category was already explored.
    """

    def __init__(self, table: SupertagTable, config: GrammarConfig, scorer: EdgeScorer,
                 lazy: bool = False, use_heuristic: bool = True, dynamic_program: bool = False,
                 limits: DecodeLimits | None = None, record_pops: bool = False,
                 split_leaves: bool = False):
        self.table = table
        self.split_leaves = split_leaves
        self.config = config
        self.scorer = scorer
        self.lazy = lazy and scorer.graph is not None
        self.use_heuristic = use_heuristic
        self.dynamic_program = dynamic_program
        self.limits = limits
        self.agenda = Agenda()
        self.forest = Forest()
        self.stats = DecodeStats()
        self.record_pops = record_pops
        self.n = len(table)
        self._labels_seen = set()

    def h(self, span: Span) -> float:
        return self.scorer.h(span) if self.use_heuristic else 0.0

    def score_and_push(self, e: Hyperedge) -> None:
        """Score a freshly built edge (fully, or only its local half) and push it."""
        e.local_score = self.scorer.local(e)
        if self.lazy and (self.split_leaves or not e.head.is_leaf):
            e.stage = Stage.LOCAL_HALF
            g_local = inside_score(e.tails, e.local_score, 0.0)
            self._push(e, g_local + self.h(e.head.span))
        else:
            e.stage = Stage.FUSED
            e.global_score = self.scorer.global_(e)
            e.head.g = inside_score(e.tails, e.local_score, e.global_score)
            self._push(e, e.head.g + self.h(e.head.span))

    def _push(self, e: Hyperedge, priority: float) -> None:
        self.agenda.push(e, priority)
        self.stats.edges_pushed += 1

    def initialize(self) -> None:
        for e in leaf_edges(self.table):
            self.score_and_push(e)

    def is_goal(self, node: ParseNode) -> bool:
        return len(node.span) == self.n and self.config.is_root(node.category)

    def check_limits(self) -> None:
        lim = self.limits
        if lim is None:
            return
        if len(self.forest) - 1 > lim.max_forest_size:
            raise LimitExceeded("forest")
        if len(self.agenda) > lim.max_agenda_size:
            raise LimitExceeded("agenda")
        if self.scorer.n_units > lim.max_tree_units:
            raise LimitExceeded("units")

    def step(self):
        """Pop one agenda entry. Returns the explored node, or None if nothing was explored."""
        e = self.agenda.pop_max()
        if self.record_pops:
            self.stats.popped.append(e.priority)
        if e.stage is Stage.LOCAL_HALF:
            e.global_score = self.scorer.global_(e)
            e.stage = Stage.GLOBAL_HALF
            e.head.g = inside_score(e.tails, e.local_score, e.global_score)
            self._push(e, e.head.g + self.h(e.head.span))
            return None
        node = e.head
        if node in self.forest:
            return None
        if self.dynamic_program:
            label = (node.span, node.category)
            if label in self._labels_seen:
                return None
            self._labels_seen.add(label)
        for new in expand(self.forest, node, self.config):
            self.score_and_push(new)
        self.stats.nodes_explored = len(self.forest) - 1
        return node

    def run(self) -> ParseNode:
        """Search until the first complete parse is explored."""
        self.initialize()
        self.check_limits()
        while True:
            node = self.step()
            if node is not None and self.is_goal(node):
                return node
            self.check_limits()


def _count_nonleaf(forest: Forest) -> int:
    return sum(1 for n in forest.nodes() if not n.is_start and not n.is_leaf)


def _finish(search: AgendaSearch, node, t0, certificate=Certificate.OPTIMAL, **kw) -> DecodeResult:
    search.stats.global_evals = search.scorer.global_evals
    search.stats.nodes_explored = len(search.forest) - 1
    search.stats.nonleaf_explored = _count_nonleaf(search.forest)
    search.stats.wall_time = time.perf_counter() - t0
    score = node.g if node is not None else float("-inf")
    return DecodeResult(node, score, certificate, search.stats, **kw)


def decode_local(table: SupertagTable, config: GrammarConfig = DEFAULT_CONFIG) -> DecodeResult:
    """Supertag-factored A* with a dynamic program; the backoff parser."""
    t0 = time.perf_counter()
    search = AgendaSearch(table, config, EdgeScorer(table), dynamic_program=True)
    try:
        node = search.run()
    except SearchExhausted:
        return _finish(search, None, t0, Certificate.FAILED)
    return _finish(search, node, t0)


def _search_with_backoff(table, config, scorer, limits, t0, **search_kw) -> DecodeResult:
    search = AgendaSearch(table, config, scorer, limits=limits, **search_kw)
    try:
        node = search.run()
    except SearchExhausted:
        return _finish(search, None, t0, Certificate.FAILED)
    except LimitExceeded as exc:
        back = decode_local(table, config)
        stats = search.stats
        stats.global_evals = scorer.global_evals
        stats.nodes_explored = len(search.forest) - 1
        stats.nonleaf_explored = _count_nonleaf(search.forest)
        stats.wall_time = time.perf_counter() - t0
        if back.parse is None:
            return DecodeResult(None, float("-inf"), Certificate.FAILED, stats, backoff=True,
                                note=f"{exc} limit exceeded")
        return DecodeResult(back.parse, back.score, Certificate.BACKOFF, stats, backoff=True,
                            note=f"{exc} limit exceeded")
    return _finish(search, node, t0)


def decode_astar(table: SupertagTable, params: ParameterStore | None,
                 config: GrammarConfig = DEFAULT_CONFIG, limits: DecodeLimits | None = None,
                 lazy: bool = True, record_pops: bool = False,
                 h_scale: float = 1.0, h_offset: float = 0.0) -> DecodeResult:
    """Exact A* under local + global scores. ``params=None`` disables the global model."""
    t0 = time.perf_counter()
    graph = ComputationGraph(params, table.words) if params is not None else None
    scorer = EdgeScorer(table, graph, h_scale=h_scale, h_offset=h_offset)
    return _search_with_backoff(table, config, scorer, limits or DecodeLimits(), t0,
                                lazy=lazy, record_pops=record_pops)


def decode_best_first(table: SupertagTable, params: ParameterStore | None,
                      config: GrammarConfig = DEFAULT_CONFIG, limits: DecodeLimits | None = None,
                      lazy: bool = True) -> DecodeResult:
    t0 = time.perf_counter()
    graph = ComputationGraph(params, table.words) if params is not None else None
    scorer = EdgeScorer(table, graph)
    return _search_with_backoff(table, config, scorer, limits or DecodeLimits(), t0,
                                lazy=lazy, use_heuristic=False)


# ---------------------------------------------------------------------------
# beam search


def decode_beam(table: SupertagTable, params: ParameterStore | None, beam_width: int,
                config: GrammarConfig = DEFAULT_CONFIG) -> DecodeResult:
    """Bottom-up beam search keeping the top ``beam_width`` subtrees per span."""
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    t0 = time.perf_counter()
    graph = ComputationGraph(params, table.words) if params is not None else None
    scorer = EdgeScorer(table, graph)
    stats = DecodeStats()
    n = len(table)
    seq = itertools.count()
    chart: dict = {}

    def score_node(node, tails, local):
        e = Hyperedge(tails, node, local)
        e.global_score = scorer.global_(e)
        node.g = inside_score(tails, local, e.global_score)
        stats.edges_pushed += 1
        return node

    def with_unaries(cands):
        out = list(cands)
        for node in cands:
            for cat, rule in unary_rules(node.category, config):
                out.append(score_node(ParseNode(node.span, cat, rule, (node,)), (node,), 0.0))
        return out

    def prune(cands, full):
        if full:
            cands = [c for c in cands if config.is_root(c.category)]
        keyed = [(-c.g, c.size, next(seq), c) for c in cands]
        return [c for *_, c in heapq.nsmallest(beam_width, keyed)]

    for t, row in enumerate(table.rows):
        leaves = [score_node(ParseNode.leaf(t, cat), (START,), lp) for cat, lp in row]
        chart[t, t + 1] = prune(with_unaries(leaves), n == 1)
    for length in range(2, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            cands = []
            for k in range(i + 1, j):
                for left in chart[i, k]:
                    for right in chart[k, j]:
                        for cat, rule in combine(left.category, right.category, config):
                            node = ParseNode(Span(i, j), cat, rule, (left, right))
                            cands.append(score_node(node, (left, right), 0.0))
            chart[i, j] = prune(with_unaries(cands), length == n)
    stats.global_evals = scorer.global_evals
    stats.nodes_explored = sum(len(v) for v in chart.values())
    stats.wall_time = time.perf_counter() - t0
    best = chart[0, n][0] if chart[0, n] else None
    if best is None:
        return DecodeResult(None, float("-inf"), Certificate.FAILED, stats)
    return DecodeResult(best, best.g, Certificate.BACKOFF, stats, note="approximate")


# ---------------------------------------------------------------------------
# n-best under the local model, and reranking


def nbest_local(table: SupertagTable, n: int, config: GrammarConfig = DEFAULT_CONFIG) -> list:
    """The ``n`` best complete parses under supertag scores alone, best first.

    Chart-based: every (span, category) item keeps its ``n`` best derivations.
    Scores are exact; ties are ordered by subtree size then bracket string, so
    the result for a larger ``n`` extends the one for a smaller ``n`` whenever
    scores are distinct.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    N = len(table)
    chart: dict = {}

    def key(item):
        score, node = item
        return (-score, node.size, to_bracket(node))

    def add_unaries(cell):
        extra: dict = {}
        for cat, items in cell.items():
            for score, node in items:
                if node.rule.kind is RuleKind.UNARY:
                    continue
                for ucat, rule in unary_rules(cat, config):
                    extra.setdefault(ucat, []).append((score, ParseNode(node.span, ucat, rule, (node,))))
        for cat, items in extra.items():
            cell.setdefault(cat, []).extend(items)
        for cat in cell:
            cell[cat] = sorted(cell[cat], key=key)[:n]
        return cell

    for t, row in enumerate(table.rows):
        cell: dict = {}
        for cat, lp in row:
            cell.setdefault(cat, []).append((lp, ParseNode.leaf(t, cat)))
        chart[t, t + 1] = add_unaries(cell)
    for length in range(2, N + 1):
        for i in range(0, N - length + 1):
            j = i + length
            cell = {}
            for k in range(i + 1, j):
                for lcat, litems in chart[i, k].items():
                    for rcat, ritems in chart[k, j].items():
                        for cat, rule in combine(lcat, rcat, config):
                            bucket = cell.setdefault(cat, [])
                            for ls, lnode in litems:
                                for rs, rnode in ritems:
                                    bucket.append((ls + rs, ParseNode(Span(i, j), cat, rule, (lnode, rnode))))
            chart[i, j] = add_unaries(cell)
    roots = [item for cat, items in chart[0, N].items() if config.is_root(cat) for item in items]
    return [node for _, node in sorted(roots, key=key)[:n]]


def rescore(node: ParseNode, table: SupertagTable, graph: ComputationGraph | None) -> float:
    """Full-model score of a complete tree, building its units bottom-up."""
    total = 0.0
    for sub in node.nodes():
        if sub.is_leaf:
            total += table.score(sub.span.start, sub.category)
        if graph is not None:
            total += graph.score(sub)
    return total


def decode_rerank(table: SupertagTable, params: ParameterStore | None, n: int,
                  config: GrammarConfig = DEFAULT_CONFIG, candidates=None) -> DecodeResult:
    """Rerank the local model's n-best list with the full model.

    ``candidates`` lets a caller pass a longer n-best list once and rerank prefixes.
    """
    t0 = time.perf_counter()
    stats = DecodeStats()
    cands = list(candidates[:n]) if candidates is not None else nbest_local(table, n, config)
    if not cands:
        stats.wall_time = time.perf_counter() - t0
        return DecodeResult(None, float("-inf"), Certificate.FAILED, stats)
    graph = ComputationGraph(params, table.words) if params is not None else None
    memo: dict = {}
    best, best_score = None, float("-inf")
    for cand in cands:
        # copies: caller-supplied nodes may carry units from another graph
        tree = _fresh(cand, memo)
        s = rescore(tree, table, graph)
        if s > best_score:
            best, best_score = tree, s
    stats.global_evals = graph.n_units if graph is not None else 0
    stats.nodes_explored = len(cands)
    stats.wall_time = time.perf_counter() - t0
    return DecodeResult(best, best_score, Certificate.BACKOFF, stats, note="approximate")


def _fresh(node: ParseNode, memo: dict) -> ParseNode:
    if id(node) not in memo:
        kids = [_fresh(c, memo) for c in node.children]
        memo[id(node)] = ParseNode(node.span, node.category, node.rule, kids)
    return memo[id(node)]


def require_taggable(table: SupertagTable) -> None:
    if len(table) == 0:
        raise DecodeError("empty sentence")
