"""Supertag-factored local scores and the outside-sum A* heuristic."""
from __future__ import annotations

import math

from .grammar import DecodeError, Lexicon, lexical_categories, parse_category
from .hypergraph import Hyperedge, Span


class SupertagTable:
    """Per-sentence supertag scores with cached per-token maxima and prefix sums."""

    def __init__(self, words, rows):
        if len(words) != len(rows):
            raise ValueError("one row of supertags per word is required")
        self.words = list(words)
        self.rows = []
        for t, row in enumerate(rows):
            if not row:
                raise DecodeError(f"token {t} ({words[t]!r}) has no supertags")
            clean = []
            for cat, lp in row:
                lp = float(lp)
                if not math.isfinite(lp) or lp > 0:
                    raise ValueError(f"supertag score for token {t} must be finite and <= 0, got {lp}")
                clean.append((cat, lp))
            self.rows.append(clean)
        self._lookup = [dict(row) for row in self.rows]
        self.maxima = [max(lp for _, lp in row) for row in self.rows]
        self.prefix = [0.0]
        for m in self.maxima:
            self.prefix.append(self.prefix[-1] + m)

    def __len__(self) -> int:
        return len(self.words)

    def score(self, token: int, category) -> float:
        try:
            return self._lookup[token][category]
        except KeyError:
            raise DecodeError(f"category {category} is not a supertag of token {token}") from None

    @classmethod
    def from_lexicon(cls, lexicon: Lexicon, words) -> "SupertagTable":
        return cls(words, [lexical_categories(lexicon, w) for w in words])

    def shifted(self, offset: float) -> "SupertagTable":
        return SupertagTable(self.words, [[(c, lp + offset) for c, lp in row] for row in self.rows])


def score_local(e: Hyperedge, table: SupertagTable) -> float:
    head = e.head
    if head.is_leaf:
        return table.score(head.span.start, head.category)
    return 0.0


def heuristic(span: Span, table: SupertagTable) -> float:
    """Sum of the best supertag score of every token outside ``span``."""
    p = table.prefix
    return p[span.start] + (p[-1] - p[span.end])


# ---------------------------------------------------------------------------
# supertag files


def read_supertag_file(path) -> list:
    """Blocks separated by blank lines; line i is ``word<TAB>cat:logp cat:logp ...``."""
    tables = []
    words, rows = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    tables.append(SupertagTable(words, rows))
                    words, rows = [], []
                continue
            try:
                word, rest = line.split("\t", 1)
                row = []
                for item in rest.split():
                    cat, lp = item.rsplit(":", 1)
                    row.append((parse_category(cat), float(lp)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            words.append(word)
            rows.append(row)
    if words:
        tables.append(SupertagTable(words, rows))
    return tables


def write_supertag_file(path, tables) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, table in enumerate(tables):
            if k:
                f.write("\n")
            for word, row in zip(table.words, table.rows):
                f.write(word + "\t" + " ".join(f"{c}:{lp!r}" for c, lp in row) + "\n")
