"""Synthetic grammars, corpora and fixtures for tests, verification and benchmarks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .global_model import ModelDims, ParameterStore
from .grammar import (
    DEFAULT_CONFIG,
    Complex,
    GrammarConfig,
    Lexicon,
    RuleApplication,
    RuleKind,
    Slash,
    parse_category,
)
from .hypergraph import ParseNode, Span, from_bracket
from .local_model import SupertagTable


@dataclass
class Sentence:
    words: list
    gold: ParseNode | None = None


# ---------------------------------------------------------------------------
# the "Fruit flies like bananas" example


FIGURE1_LEXICON = [
    ("Fruit", "NP/NP", -0.2),
    ("Fruit", "NP", -0.5),
    ("flies", "NP", -1.2),
    ("flies", "S\\NP", -0.9),
    ("flies", "NP\\NP", -1.6),
    ("like", "(S\\NP)/NP", -0.1),
    ("like", "(S\\S)/NP", -1.5),
    ("bananas", "NP", -0.1),
]
FIGURE1_SENTENCE = ["Fruit", "flies", "like", "bananas"]
FIGURE1_GOLD = ("(S BACKWARD_APPLY (NP FORWARD_APPLY (NP/NP LEX 0) (NP LEX 1)) "
                "(S\\NP FORWARD_APPLY ((S\\NP)/NP LEX 2) (NP LEX 3)))")


def figure1_lexicon() -> Lexicon:
    return Lexicon.from_items(FIGURE1_LEXICON)


def figure1_model(dims: ModelDims = ModelDims()) -> ParameterStore:
    """A model whose global score is log(1/2) for every subtree.

    Complete parses of equal size then differ only in supertag scores.
    """
    lex = figure1_lexicon()
    params = ParameterStore.initialize(FIGURE1_SENTENCE, lex.categories(), dims, seed=0)
    params.tensors["score.W"][:] = 0.0
    return params


# ---------------------------------------------------------------------------
# random toy grammar


TOY_LEAVES = ["NP", "N", "NP/N", "S\\NP", "(S\\NP)/NP", "(S\\NP)/PP", "PP/NP",
              "NP\\NP", "(NP\\NP)/NP", "N/N", "(S\\NP)\\(S\\NP)", "S/S"]


class ToyGrammar:
    """A random lexicon over a fixed category pool, with a derivation sampler.

    Every pool category has ``words_per_category`` words. Each word carries
    its own category plus up to ``max_distractors`` others, all with random
    log-probabilities.
    """

    def __init__(self, seed: int = 0, words_per_category: int = 2, max_distractors: int = 2,
                 config: GrammarConfig = DEFAULT_CONFIG):
        self.rng = np.random.default_rng(seed)
        self.config = config
        self.pool = [parse_category(c) for c in TOY_LEAVES]
        self.lexicon = Lexicon()
        self.words_for: dict = {}
        for k, cat in enumerate(self.pool):
            for j in range(words_per_category):
                w = f"w{k}_{j}"
                self.words_for.setdefault(cat, []).append(w)
                self.lexicon.add(w, cat, float(-self.rng.uniform(0.05, 1.5)))
                n_extra = int(self.rng.integers(0, max_distractors + 1))
                for d in self.rng.choice(len(self.pool), size=n_extra, replace=False):
                    if self.pool[d] != cat:
                        self.lexicon.add(w, self.pool[d], float(-self.rng.uniform(0.05, 3.0)))
        self._feasible: dict = {}

    def _options(self, cat):
        """Ways to build ``cat``: (rule, left category, right category) or unary source."""
        opts = []
        for f in self.pool + _derived_functors(self.pool):
            if isinstance(f, Complex) and f.result == cat:
                if f.slash is Slash.FORWARD:
                    opts.append((RuleKind.FORWARD_APPLY, f, f.argument))
                else:
                    opts.append((RuleKind.BACKWARD_APPLY, f.argument, f))
        for src, dsts in self.config.unary_table.items():
            if cat in dsts:
                opts.append((RuleKind.UNARY, src, None))
        return opts

    def feasible(self, cat, n: int, unary_ok: bool = True) -> bool:
        key = (cat, n, unary_ok)
        if key in self._feasible:
            return self._feasible[key]
        self._feasible[key] = False
        ok = n == 1 and cat in self.words_for
        for rule, a, b in self._options(cat):
            if ok:
                break
            if rule is RuleKind.UNARY:
                ok = unary_ok and self.feasible(a, n, unary_ok=False)
            else:
                ok = any(self.feasible(a, k) and self.feasible(b, n - k) for k in range(1, n))
        self._feasible[key] = ok
        return ok

    def derive(self, cat, n: int, start: int = 0, unary_ok: bool = True) -> ParseNode:
        choices = []
        if n == 1 and cat in self.words_for:
            choices.append(("leaf", None, None, None))
        for rule, a, b in self._options(cat):
            if rule is RuleKind.UNARY:
                if unary_ok and self.feasible(a, n, unary_ok=False):
                    choices.append((rule, a, None, None))
            else:
                for k in range(1, n):
                    if self.feasible(a, k) and self.feasible(b, n - k):
                        choices.append((rule, a, b, k))
        if not choices:
            raise ValueError(f"cannot derive {cat} over {n} words")
        rule, a, b, k = choices[int(self.rng.integers(len(choices)))]
        if rule == "leaf":
            return ParseNode.leaf(start, cat)
        if rule is RuleKind.UNARY:
            child = self.derive(a, n, start, unary_ok=False)
            return ParseNode(child.span, cat, RuleApplication(RuleKind.UNARY, cat), (child,))
        left = self.derive(a, k, start)
        right = self.derive(b, n - k, start + k)
        return ParseNode(Span(start, start + n), cat, RuleApplication(rule, cat), (left, right))

    def sentence(self, length: int) -> Sentence:
        roots = [parse_category(r) for r in self.config.roots]
        roots = [r for r in roots if self.feasible(r, length)]
        if not roots:
            raise ValueError(f"no root derives {length} words")
        root = roots[int(self.rng.integers(len(roots)))]
        tree = self.derive(root, length)
        words = []
        for leaf in tree.leaves():
            options = self.words_for[leaf.category]
            words.append(options[int(self.rng.integers(len(options)))])
        return Sentence(words, tree)

    def sentences(self, count: int, min_len: int = 1, max_len: int = 7) -> list:
        out = []
        while len(out) < count:
            n = int(self.rng.integers(min_len, max_len + 1))
            if any(self.feasible(parse_category(r), n) for r in self.config.roots):
                out.append(self.sentence(n))
        return out


def _derived_functors(pool):
    # results of functors in the pool can themselves be functors (e.g. S\NP from (S\NP)/NP)
    out = []
    seen = set(pool)
    for f in pool:
        while isinstance(f, Complex):
            f = f.result
            if f not in seen:
                seen.add(f)
                out.append(f)
    return out


# ---------------------------------------------------------------------------
# planted-regularity corpus: attachment decided by the last word


PLANTED_CATS = {
    "name": [("NP", -0.05)],
    "verb": [("(S\\NP)/NP", -0.1), ("S\\NP", -2.0)],
    "prep": [("((S\\NP)\\(S\\NP))/NP", math.log(0.35)), ("(NP\\NP)/NP", math.log(0.65))],
    "noun": [("NP", -0.05), ("N", -2.5)],
}
PLANTED_WORDS = {
    "name": ["john", "mary", "sue"],
    "verb": ["saw", "ate", "hit"],
    "prep": ["with"],
    "instrument": ["telescope", "spoon", "stick"],
    "plain": ["cheese", "hat"],
}


def planted_lexicon() -> Lexicon:
    lex = Lexicon()
    for cls, words in PLANTED_WORDS.items():
        cats = PLANTED_CATS["noun" if cls in ("instrument", "plain") else cls]
        for w in words:
            for cat, lp in cats:
                lex.add(w, parse_category(cat), lp)
    return lex


def planted_corpus(n: int, seed: int = 0, short_fraction: float = 0.2) -> list:
    """Sentences whose prepositional attachment is decided by the final noun.

    Both attachments get identical supertag scores, so only a model that
    reads the final word can choose correctly.
    """
    rng = np.random.default_rng(seed)
    W = PLANTED_WORDS

    def pick(cls):
        return W[cls][int(rng.integers(len(W[cls])))]

    out = []
    for _ in range(n):
        subj, verb, obj = pick("name"), pick("verb"), pick("name")
        if rng.random() < short_fraction:
            tree = ("(S BACKWARD_APPLY (NP LEX 0) (S\\NP FORWARD_APPLY ((S\\NP)/NP LEX 1) (NP LEX 2)))")
            out.append(Sentence([subj, verb, obj], from_bracket(tree)))
            continue
        instrument = rng.random() < 0.5
        noun = pick("instrument" if instrument else "plain")
        if instrument:
            tree = ("(S BACKWARD_APPLY (NP LEX 0) (S\\NP BACKWARD_APPLY "
                    "(S\\NP FORWARD_APPLY ((S\\NP)/NP LEX 1) (NP LEX 2)) "
                    "((S\\NP)\\(S\\NP) FORWARD_APPLY (((S\\NP)\\(S\\NP))/NP LEX 3) (NP LEX 4))))")
        else:
            tree = ("(S BACKWARD_APPLY (NP LEX 0) (S\\NP FORWARD_APPLY ((S\\NP)/NP LEX 1) "
                    "(NP BACKWARD_APPLY (NP LEX 2) (NP\\NP FORWARD_APPLY ((NP\\NP)/NP LEX 3) (NP LEX 4)))))")
        out.append(Sentence([subj, verb, obj, "with", noun], from_bracket(tree)))
    return out


PLANTED_CONFIG = GrammarConfig(roots=("S",))


# ---------------------------------------------------------------------------
# garden-path fixture: the locally best reading of a verb is abandoned later


GARDEN_LEXICON = [
    ("the", "NP/N", -0.05),
    ("horse", "N", -0.1),
    ("raced", "S[dcl]\\NP", -0.2),
    ("raced", "(S[dcl]\\NP)/PP", -0.3),
    ("raced", "(NP\\NP)/PP", -2.5),
    ("past", "PP/NP", -0.2),
    ("past", "((S\\NP)\\(S\\NP))/NP", -0.8),
    ("barn", "N", -0.1),
    ("barn", "N/N", -1.5),
    ("fell", "S[dcl]\\NP", -0.3),
    ("fell", "N", -2.0),
    ("old", "N/N", -0.1),
    ("old", "N", -1.2),
    ("man", "N", -0.1),
    ("man", "(S[dcl]\\NP)/NP", -2.0),
    ("boats", "N", -0.1),
    ("horses", "N", -0.2),
]
GARDEN_SENTENCES = [
    "the horse raced past the barn fell".split(),
    "the horse raced past the barn".split(),
    "the old man the boats".split(),
    "the horse fell".split(),
    "the old horses raced".split(),
]
GARDEN_CONFIG = GrammarConfig(unary_table={}, roots=("S[dcl]", "S", "NP"))


def garden_lexicon() -> Lexicon:
    return Lexicon.from_items(GARDEN_LEXICON)


def tables_for(lexicon: Lexicon, sentences) -> list:
    return [SupertagTable.from_lexicon(lexicon, s.words if isinstance(s, Sentence) else s)
            for s in sentences]


def write_fixtures(directory) -> list:
    """Write every shipped fixture file into ``directory``; returns the file names."""
    from pathlib import Path

    from .corpus import Record, write_corpus

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    figure1_lexicon().save(d / "figure1.lex")
    write_corpus(d / "figure1.txt", [Record(FIGURE1_SENTENCE, from_bracket(FIGURE1_GOLD))])
    garden_lexicon().save(d / "garden.lex")
    (d / "garden.txt").write_text("".join(" ".join(s) + "\n" for s in GARDEN_SENTENCES))
    planted_lexicon().save(d / "planted.lex")
    write_corpus(d / "planted_train.txt", [Record(s.words, s.gold) for s in planted_corpus(100, seed=1)])
    write_corpus(d / "planted_dev.txt", [Record(s.words, s.gold) for s in planted_corpus(50, seed=2)])
    toy = ToyGrammar(seed=0)
    toy.lexicon.save(d / "toy.lex")
    write_corpus(d / "toy.txt", [Record(s.words, s.gold) for s in toy.sentences(40, 1, 7)])
    (d / "unary.txt").write_text("".join(f"{src}\t{dst}\n" for src, dsts in DEFAULT_CONFIG.unary_table.items()
                                         for dst in dsts))
    return sorted(p.name for p in d.iterdir())
