"""Violation-based training of the global model."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import DecodeLimits, EdgeScorer, decode_astar, leaf_edges
from .evaluation import evaluate
from .global_model import ComputationGraph, ParameterStore, dropout_mask
from .grammar import DEFAULT_CONFIG, GrammarConfig, RuleKind, combine, unary_rules
from .hypergraph import Agenda, Forest, ParseNode, expand, inside_score
from .local_model import SupertagTable, heuristic
from .oracle import StraightLineScorer, local_tree_score

log = logging.getLogger(__name__)


class UpdateKind(enum.Enum):
    GREEDY = "greedy"
    MAX_VIOLATION = "max"
    ALL_VIOLATIONS = "all"


class GoldUnreachable(ValueError):
    """The gold derivation is not in the search space (missing supertag or rule)."""


class TrainingDiverged(RuntimeError):
    pass


class GoldDerivation:
    def __init__(self, tree: ParseNode):
        self.tree = tree
        self.nodes = set(tree.nodes())

    def __contains__(self, node: ParseNode) -> bool:
        return node in self.nodes

    def check_reachable(self, table: SupertagTable, config: GrammarConfig) -> None:
        if len(self.tree.span) != len(table):
            raise GoldUnreachable("gold tree does not span the sentence")
        if not config.is_root(self.tree.category):
            raise GoldUnreachable(f"gold root {self.tree.category} is not a root category")
        for node in self.tree.nodes():
            if node.is_leaf:
                if node.category not in dict(table.rows[node.span.start]):
                    raise GoldUnreachable(
                        f"gold supertag {node.category} missing for token {node.span.start}")
            elif len(node.children) == 1:
                child = node.children[0]
                if child.rule.kind is RuleKind.UNARY or \
                        (node.category, node.rule) not in unary_rules(child.category, config):
                    raise GoldUnreachable(f"unary {child.category} -> {node.category} not licensed")
            else:
                left, right = node.children
                if (node.category, node.rule) not in combine(left.category, right.category, config):
                    raise GoldUnreachable(f"{left.category} + {right.category} -> {node.category} not licensed")


@dataclass
class Violation:
    value: float
    e_max: ParseNode
    gold_max: ParseNode


@dataclass
class ViolationRecord:
    violations: list = field(default_factory=list)
    graph: ComputationGraph | None = None
    explored: list = field(default_factory=list)
    reached_gold: bool = False
    hit_limit: bool = False

    @property
    def values(self) -> list:
        return [v.value for v in self.violations]

    def __len__(self) -> int:
        return len(self.violations)


def violation(gold: GoldDerivation, agenda: Agenda):
    """(v, e_max, gold e_max): best agenda priority minus best gold priority."""
    e_max = agenda.peek()
    best_gold = None
    for e in agenda:
        if e.head in gold and (best_gold is None or e.priority > best_gold.priority):
            best_gold = e
    if best_gold is None:
        raise ValueError("no gold edge on the agenda")
    if best_gold.priority == e_max.priority:
        # a gold edge attains the maximum
        return 0.0, e_max, best_gold
    return e_max.priority - best_gold.priority, e_max, best_gold


def collect_violations(table: SupertagTable, gold: GoldDerivation, params: ParameterStore,
                       config: GrammarConfig = DEFAULT_CONFIG, max_forest: int = 2000,
                       max_agenda: int = 2_000_000, mask=None) -> ViolationRecord:
    """Run A* with eager global scoring against a gold derivation, recording violations."""
    gold.check_reachable(table, config)
    graph = ComputationGraph(params, table.words, mask)
    scorer = EdgeScorer(table, graph)
    agenda, forest = Agenda(), Forest()
    record = ViolationRecord(graph=graph)
    n_gold = 0

    def push(e):
        nonlocal n_gold
        e.local_score = scorer.local(e)
        e.global_score = scorer.global_(e)
        e.head.g = inside_score(e.tails, e.local_score, e.global_score)
        agenda.push(e, e.head.g + heuristic(e.head.span, table))
        if e.head in gold:
            n_gold += 1

    for e in leaf_edges(table):
        push(e)
    while n_gold > 0:
        if len(forest) - 1 >= max_forest or len(agenda) > max_agenda:
            record.hit_limit = True
            break
        v, e_max, g_max = violation(gold, agenda)
        if v > 0:
            record.violations.append(Violation(v, e_max.head, g_max.head))
        e = agenda.pop_max()
        if e.head in gold:
            n_gold -= 1
        if e.head in forest:
            continue
        record.explored.append(e.head)
        if e.head == gold.tree:
            record.reached_gold = True
        for new in expand(forest, e.head, config):
            push(new)
    return record


def loss(values, kind: UpdateKind) -> float:
    values = list(values)
    if not values:
        return 0.0
    if kind is UpdateKind.GREEDY:
        return values[0]
    if kind is UpdateKind.MAX_VIOLATION:
        return max(values)
    return float(sum(values))


def selected(record: ViolationRecord, kind: UpdateKind) -> list:
    """Violations that contribute to the loss of ``kind``."""
    vs = record.violations
    if not vs:
        return []
    if kind is UpdateKind.GREEDY:
        return [vs[0]]
    if kind is UpdateKind.MAX_VIOLATION:
        return [max(vs, key=lambda v: v.value)]
    return list(vs)


def seeds_for(violations) -> dict:
    """+1 on every node of path(e_max), -1 on every node of path(gold e_max)."""
    seeds: dict = {}
    for v in violations:
        for node in v.e_max.nodes():
            seeds[node] = seeds.get(node, 0.0) + 1.0
        for node in v.gold_max.nodes():
            seeds[node] = seeds.get(node, 0.0) - 1.0
    return {k: w for k, w in seeds.items() if w != 0.0}


def violation_subgradient(v: Violation, graph: ComputationGraph) -> dict:
    return graph.backward(seeds_for([v]))


def loss_gradient(record: ViolationRecord, kind: UpdateKind) -> dict:
    return record.graph.backward(seeds_for(selected(record, kind)))


def replay_loss(record: ViolationRecord, kind: UpdateKind, params: ParameterStore,
                table: SupertagTable) -> float:
    """The loss with agenda decisions frozen, re-evaluated under ``params``."""
    scorer = StraightLineScorer(params, table.words)

    def priority(node):
        return (local_tree_score(node, table) + scorer.tree_global(node)
                + heuristic(node.span, table))

    return float(sum(priority(v.e_max) - priority(v.gold_max) for v in selected(record, kind)))


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: ParameterStore, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params.tensors[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    update_kind: UpdateKind = UpdateKind.ALL_VIOLATIONS
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_forest: int = 2000
    dropout: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.max_forest <= 0:
            raise ValueError("forest limit must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    mean_violations: float
    dev_f1: float
    dev_exact: float
    skipped: int = 0

    def line(self) -> str:
        return (f"{self.epoch}\t{self.mean_loss:.6f}\t{self.mean_violations:.4f}\t"
                f"{self.dev_f1:.4f}\t{self.dev_exact:.4f}")


def decode_corpus(items, params, config, limits=None) -> list:
    out = []
    for _, table in items:
        res = decode_astar(table, params, config, limits)
        out.append(res.parse)
    return out


def train(corpus, dev, params: ParameterStore, config: TrainConfig = TrainConfig(),
          grammar: GrammarConfig = DEFAULT_CONFIG, dev_limits: DecodeLimits | None = None,
          on_epoch=None):
    """Per-sentence ADAM updates on violation losses with dev-F1 model selection.

    ``corpus`` and ``dev`` are sequences of (gold tree, SupertagTable).
    Returns (best parameters, list of EpochMetrics).
    """
    params = params.copy()
    best = params.copy()
    best_f1 = -1.0
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    history = []
    golds = [(GoldDerivation(tree), table) for tree, table in corpus]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(golds))
        total_loss = total_v = 0.0
        skipped = 0
        for idx in order:
            gold, table = golds[idx]
            mask = dropout_mask(rng, len(table), params.dims.word, config.dropout)
            try:
                record = collect_violations(table, gold, params, grammar, config.max_forest, mask=mask)
            except GoldUnreachable as exc:
                skipped += 1
                log.warning("skipping sentence %d: %s", idx, exc)
                continue
            value = loss(record.values, config.update_kind)
            total_loss += value
            total_v += len(record)
            if value == 0.0:
                continue
            grads = loss_gradient(record, config.update_kind)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss or gradient in epoch {epoch}, sentence {idx}")
            opt.step(params, grads)
        n = max(1, len(golds) - skipped)
        if dev:
            predicted = decode_corpus(dev, params, grammar, dev_limits)
            scores = evaluate(predicted, [tree for tree, _ in dev])
        else:
            scores = {"f1": 0.0, "exact_match": 0.0}
        m = EpochMetrics(epoch, total_loss / n, total_v / n, scores["f1"], scores["exact_match"], skipped)
        history.append(m)
        log.info("epoch %s", m.line())
        if on_epoch is not None:
            on_epoch(m)
        if scores["f1"] > best_f1:
            best_f1 = scores["f1"]
            best = params.copy()
    if config.epochs == 0:
        return params, history
    return best, history
