"""LTL formula parsing.

Surface syntax (ASCII):

    true            constant
    name            atomic proposition, [a-zA-Z_][a-zA-Z0-9_]*
    !f              negation
    X f             next
    F f             eventually
    G f             always
    f & g           conjunction (left-associative)
    f | g           disjunction, desugared on parse to !(!f & !g)
    f U g           until (right-associative, weakest binding)

Unary operators bind tightest, then ``&``, then ``|``, then ``U``.
The parsed formula is metadata only; executable automata are loaded from
automaton files (see :mod:`cautious_rl.automata`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

__all__ = [
    "Truth",
    "Atom",
    "And",
    "Not",
    "Next",
    "Until",
    "Eventually",
    "Always",
    "Formula",
    "LtlSyntaxError",
    "parse_ltl",
    "to_text",
    "desugar",
    "atoms",
]


@dataclass(frozen=True)
class Truth:
    pass


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class Next:
    operand: "Formula"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    operand: "Formula"


@dataclass(frozen=True)
class Always:
    operand: "Formula"


Formula = Union[Truth, Atom, And, Not, Next, Until, Eventually, Always]

KEYWORDS = {"true", "X", "F", "G", "U"}
_UNARY = {"!": Not, "X": Next, "F": Eventually, "G": Always}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()]))"
)


class LtlSyntaxError(ValueError):
    """Malformed formula text; ``offset`` is a byte offset into the UTF-8 input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LtlSyntaxError(
                f"unknown token {text[pos]!r}", len(text[:pos].encode("utf-8"))
            )
        tok = m.group("ident") or m.group("op")
        start = m.start("ident") if m.group("ident") else m.start("op")
        tokens.append((tok, len(text[:start].encode("utf-8"))))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.end_offset = len(text.encode("utf-8"))

    def peek(self) -> str | None:
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def offset(self) -> int:
        if self.pos < len(self.tokens):
            return self.tokens[self.pos][1]
        return self.end_offset

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of formula", self.end_offset)
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        if self.peek() != tok:
            found = self.peek() or "end of formula"
            raise LtlSyntaxError(f"expected {tok!r}, found {found!r}", self.offset())
        self.pos += 1

    def parse(self) -> Formula:
        f = self.until()
        if self.peek() is not None:
            raise LtlSyntaxError(f"unexpected token {self.peek()!r}", self.offset())
        return f

    def until(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def disjunction(self) -> Formula:
        left = self.conjunction()
        while self.peek() == "|":
            self.take()
            right = self.conjunction()
            left = Not(And(Not(left), Not(right)))
        return left

    def conjunction(self) -> Formula:
        left = self.unary()
        while self.peek() == "&":
            self.take()
            left = And(left, self.unary())
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok in _UNARY:
            self.take()
            return _UNARY[tok](self.unary())
        return self.primary()

    def primary(self) -> Formula:
        offset = self.offset()
        tok = self.take()
        if tok == "(":
            f = self.until()
            self.expect(")")
            return f
        if tok == "true":
            return Truth()
        if tok in KEYWORDS or not tok[0].isalpha() and tok[0] != "_":
            raise LtlSyntaxError(f"unexpected token {tok!r}", offset)
        return Atom(tok)


def parse_ltl(text: str) -> Formula:
    """Parse formula text into an AST.

    >>> parse_ltl("true U target")
    Until(left=Truth(), right=Atom(name='target'))
    """
    if not text or not text.strip():
        raise LtlSyntaxError("empty formula", 0)
    return _Parser(text).parse()


def to_text(f: Formula) -> str:
    """Render ``f`` so that ``parse_ltl(to_text(f)) == f``."""
    if isinstance(f, Truth):
        return "true"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return "!" + to_text(f.operand)
    if isinstance(f, Next):
        return "X " + to_text(f.operand)
    if isinstance(f, Eventually):
        return "F " + to_text(f.operand)
    if isinstance(f, Always):
        return "G " + to_text(f.operand)
    if isinstance(f, And):
        return f"({to_text(f.left)} & {to_text(f.right)})"
    if isinstance(f, Until):
        return f"({to_text(f.left)} U {to_text(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


def desugar(f: Formula) -> Formula:
    """Rewrite F and G in terms of the core operators."""
    if isinstance(f, (Truth, Atom)):
        return f
    if isinstance(f, Eventually):
        return Until(Truth(), desugar(f.operand))
    if isinstance(f, Always):
        return Not(Until(Truth(), Not(desugar(f.operand))))
    if isinstance(f, (Not, Next)):
        return type(f)(desugar(f.operand))
    return type(f)(desugar(f.left), desugar(f.right))


def atoms(f: Formula) -> set[str]:
    if isinstance(f, Truth):
        return set()
    if isinstance(f, Atom):
        return {f.name}
    if isinstance(f, (Not, Next, Eventually, Always)):
        return atoms(f.operand)
    return atoms(f.left) | atoms(f.right)
