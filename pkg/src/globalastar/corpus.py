"""Corpus and sentence file formats.

A corpus record is a line of whitespace-separated tokens, a line holding the
bracketed gold derivation, then a blank line. Sentence files hold one
sentence per line.
"""
from __future__ import annotations

from dataclasses import dataclass

from .grammar import GrammarError
from .hypergraph import ParseNode, from_bracket, to_bracket


class DataError(ValueError):
    """A malformed or inconsistent input file."""


@dataclass
class Record:
    words: list
    gold: ParseNode | None = None


def read_corpus(path) -> list:
    records = []
    pending: list = []

    def flush():
        if not pending:
            return
        _, text = pending[0]
        words = text.split()
        gold = None
        if len(pending) > 2:
            raise DataError(f"{path}:{pending[2][0]}: expected a blank line after the tree")
        if len(pending) == 2:
            tree_line, tree_text = pending[1]
            try:
                gold = from_bracket(tree_text)
            except (ValueError, GrammarError, IndexError) as exc:
                raise DataError(f"{path}:{tree_line}: bad tree: {exc}") from None
            if len(gold.span) != len(words) or gold.span.start != 0:
                raise DataError(f"{path}:{tree_line}: tree covers {len(gold.span)} tokens, "
                                f"sentence has {len(words)}")
        records.append(Record(words, gold))
        pending.clear()

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            pending.append((lineno, line))
    flush()
    return records


def write_corpus(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(" ".join(r.words) + "\n")
            if r.gold is not None:
                f.write(to_bracket(r.gold) + "\n")
            f.write("\n")


def read_sentences(path) -> list:
    """One sentence per line; a corpus file is accepted too (trees ignored)."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if any(line.lstrip().startswith("(") for line in text.splitlines()):
        return [r.words for r in read_corpus(path)]
    return [line.split() for line in text.splitlines() if line.strip()]
