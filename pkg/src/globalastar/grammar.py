"""CCG categories, combinators, unary rules and lexicons."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Union


class GrammarError(ValueError):
    pass


class CategoryParseError(GrammarError):
    def __init__(self, text: str, offset: int, message: str):
        super().__init__(f"{message} at offset {offset} in {text!r}")
        self.text = text
        self.offset = offset


class DecodeError(GrammarError):
    """A sentence cannot be tagged or decoded with the given resources."""


class Slash(enum.Enum):
    FORWARD = "/"
    BACKWARD = "\\"


@dataclass(frozen=True)
class Atomic:
    name: str
    feature: str | None = None

    def __str__(self) -> str:
        if self.feature is None:
            return self.name
        return f"{self.name}[{self.feature}]"

    @property
    def depth(self) -> int:
        return 0


@dataclass(frozen=True)
class Complex:
    result: "Category"
    slash: Slash
    argument: "Category"

    def __str__(self) -> str:
        return f"{_wrap(self.result)}{self.slash.value}{_wrap(self.argument)}"

    @property
    def depth(self) -> int:
        return 1 + max(self.result.depth, self.argument.depth)


Category = Union[Atomic, Complex]


def _wrap(c: Category) -> str:
    return f"({c})" if isinstance(c, Complex) else str(c)


class RuleKind(enum.Enum):
    LEX = "LEX"
    UNARY = "UNARY"
    FORWARD_APPLY = "FORWARD_APPLY"
    BACKWARD_APPLY = "BACKWARD_APPLY"
    FORWARD_COMPOSE = "FORWARD_COMPOSE"
    BACKWARD_COMPOSE = "BACKWARD_COMPOSE"

    @property
    def arity(self) -> int:
        if self is RuleKind.LEX:
            return 0
        if self is RuleKind.UNARY:
            return 1
        return 2


@dataclass(frozen=True)
class RuleApplication:
    kind: RuleKind
    produces: Category


# ---------------------------------------------------------------------------
# category parsing


def parse_category(text: str) -> Category:
    """Parse CCG notation such as ``(S\\NP)/NP`` or ``S[dcl]``.

    Slashes associate to the left, so ``S\\NP/NP`` is ``(S\\NP)/NP``.
    """
    parser = _CategoryParser(text)
    cat = parser.parse_expr()
    if parser.pos != len(text):
        raise CategoryParseError(text, parser.pos, "trailing characters")
    return cat


class _CategoryParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse_expr(self) -> Category:
        cat = self.parse_primary()
        while self.peek() in ("/", "\\"):
            slash = Slash(self.peek())
            self.pos += 1
            arg = self.parse_primary()
            cat = Complex(cat, slash, arg)
        return cat

    def parse_primary(self) -> Category:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            cat = self.parse_expr()
            if self.peek() != ")":
                raise CategoryParseError(self.text, self.pos, "expected ')'")
            self.pos += 1
            return cat
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] in "_-.,:;$'`"
        ):
            self.pos += 1
        if self.pos == start:
            what = repr(ch) if ch else "end of input"
            raise CategoryParseError(self.text, self.pos, f"unexpected {what}")
        name = self.text[start:self.pos]
        feature = None
        if self.peek() == "[":
            close = self.text.find("]", self.pos)
            if close < 0:
                raise CategoryParseError(self.text, self.pos, "unclosed feature")
            feature = self.text[self.pos + 1:close]
            if not feature:
                raise CategoryParseError(self.text, self.pos, "empty feature")
            self.pos = close + 1
        return Atomic(name, feature)


# ---------------------------------------------------------------------------
# combinators


@dataclass(frozen=True)
class GrammarConfig:
    composition: bool = False
    unary_table: dict = field(default_factory=lambda: {Atomic("N"): (Atomic("NP"),)})
    roots: tuple = ("S", "NP")

    def is_root(self, cat: Category) -> bool:
        if not isinstance(cat, Atomic):
            return False
        for r in self.roots:
            if r == str(cat) or (r == cat.name and "[" not in r):
                return True
        return False


DEFAULT_CONFIG = GrammarConfig()


def combine(left: Category, right: Category, config: GrammarConfig = DEFAULT_CONFIG):
    """All (result, rule) pairs for ``left right``.

    Order is canonical: application before composition, forward before backward.
    """
    out = []
    if isinstance(left, Complex) and left.slash is Slash.FORWARD and left.argument == right:
        out.append((left.result, RuleApplication(RuleKind.FORWARD_APPLY, left.result)))
    if isinstance(right, Complex) and right.slash is Slash.BACKWARD and right.argument == left:
        out.append((right.result, RuleApplication(RuleKind.BACKWARD_APPLY, right.result)))
    if config.composition:
        # X/Y Y/Z -> X/Z
        if (isinstance(left, Complex) and left.slash is Slash.FORWARD
                and isinstance(right, Complex) and right.slash is Slash.FORWARD
                and left.argument == right.result):
            res = Complex(left.result, Slash.FORWARD, right.argument)
            out.append((res, RuleApplication(RuleKind.FORWARD_COMPOSE, res)))
        # Y\Z X\Y -> X\Z
        if (isinstance(left, Complex) and left.slash is Slash.BACKWARD
                and isinstance(right, Complex) and right.slash is Slash.BACKWARD
                and right.argument == left.result):
            res = Complex(right.result, Slash.BACKWARD, left.argument)
            out.append((res, RuleApplication(RuleKind.BACKWARD_COMPOSE, res)))
    return out


def unary_rules(cat: Category, config: GrammarConfig = DEFAULT_CONFIG):
    return [(c, RuleApplication(RuleKind.UNARY, c)) for c in config.unary_table.get(cat, ())]


def load_unary_table(path) -> dict:
    table: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GrammarError(f"{path}:{lineno}: expected from<TAB>to")
            src, dst = parse_category(parts[0].strip()), parse_category(parts[1].strip())
            table.setdefault(src, ())
            if dst not in table[src]:
                table[src] = table[src] + (dst,)
    return table


# ---------------------------------------------------------------------------
# lexicon


@dataclass
class Lexicon:
    entries: dict = field(default_factory=dict)
    # OOV fallback: categories assigned to unknown words, each scored oov_penalty
    oov_categories: tuple = ()
    oov_penalty: float = -5.0

    def add(self, word: str, cat: Category, logprob: float) -> None:
        if not math.isfinite(logprob) or logprob > 0:
            raise GrammarError(f"log-probability for {word!r} must be finite and <= 0, got {logprob}")
        bucket = self.entries.setdefault(word, [])
        for k, (c, _) in enumerate(bucket):
            if c == cat:
                bucket[k] = (cat, logprob)
                return
        bucket.append((cat, logprob))

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def categories(self) -> set:
        cats = {c for bucket in self.entries.values() for c, _ in bucket}
        cats.update(self.oov_categories)
        return cats

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word, bucket in self.entries.items():
                for cat, lp in bucket:
                    f.write(f"{word}\t{cat}\t{lp!r}\n")

    @classmethod
    def load(cls, path) -> "Lexicon":
        lex = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise GrammarError(f"{path}:{lineno}: expected word<TAB>category<TAB>logprob")
                try:
                    lp = float(parts[2])
                except ValueError:
                    raise GrammarError(f"{path}:{lineno}: bad log-probability {parts[2]!r}") from None
                lex.add(parts[0], parse_category(parts[1]), lp)
        return lex

    @classmethod
    def from_items(cls, items: Iterable) -> "Lexicon":
        lex = cls()
        for word, cat, lp in items:
            lex.add(word, parse_category(cat) if isinstance(cat, str) else cat, lp)
        return lex


def lexical_categories(lex: Lexicon, word: str):
    if word in lex.entries:
        return list(lex.entries[word])
    if lex.oov_categories:
        return [(c, lex.oov_penalty) for c in lex.oov_categories]
    raise DecodeError(f"word {word!r} is not in the lexicon and no OOV policy is configured")
