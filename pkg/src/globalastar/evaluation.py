"""Labeled-span F1, supertag accuracy and exact match."""
from __future__ import annotations

from collections import Counter

from .hypergraph import ParseNode, to_bracket


def labeled_spans(tree: ParseNode) -> Counter:
    return Counter((n.span.start, n.span.end, str(n.category)) for n in tree.nodes())


def supertags(tree: ParseNode) -> list:
    return [str(leaf.category) for leaf in sorted(tree.leaves(), key=lambda n: n.span.start)]


def evaluate(predicted, gold) -> dict:
    """Corpus-level metrics; ``predicted`` entries may be None for failed sentences.

    F1, precision, recall, tag accuracy and exact match are percentages.
    """
    predicted, gold = list(predicted), list(gold)
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predictions for {len(gold)} gold trees")
    matched = n_pred = n_gold = 0
    tags_right = tags_total = exact = 0
    for p, g in zip(predicted, gold):
        gs = labeled_spans(g)
        n_gold += sum(gs.values())
        gt = supertags(g)
        tags_total += len(gt)
        if p is None:
            continue
        ps = labeled_spans(p)
        n_pred += sum(ps.values())
        matched += sum((ps & gs).values())
        tags_right += sum(a == b for a, b in zip(supertags(p), gt))
        exact += to_bracket(p) == to_bracket(g)
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    n = len(gold)
    return {
        "sentences": n,
        "precision": 100.0 * precision,
        "recall": 100.0 * recall,
        "f1": 100.0 * f1,
        "supertag_accuracy": 100.0 * tags_right / tags_total if tags_total else 0.0,
        "exact_match": 100.0 * exact / n if n else 0.0,
    }
