"""Tokenizer for the contract language.

Lexing is total: anything that is not whitespace, a comment, an identifier,
a number or a string becomes a one-character symbol token.  Only an
unterminated string can fail.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class ContractError(Exception):
    """Base class for contract parse failures."""


class ContractSyntaxError(SyntaxError, ContractError):
    def __init__(self, message: str, line: int, column: int, expected=()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{line}:{column}: {message}{detail}")
        # keep SyntaxError's own attributes in step so tracebacks point correctly
        self.lineno = line
        self.offset = column


IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(?:[:.\-]+[A-Za-z0-9_]+)*")
NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, NUMBER, STRING, SYM, EOF
    text: str
    line: int
    col: int
    space_before: bool = False
    value: float | None = None

    def is_ident(self, *words: str) -> bool:
        return self.kind == "IDENT" and (not words or self.text in words)

    def is_sym(self, *chars: str) -> bool:
        return self.kind == "SYM" and (not chars or self.text in chars)


def _num(text: str) -> float:
    return float(text)


def lex(source: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    spaced = True
    while i < n:
        c = source[i]
        if c == "\n":
            i, line, col, spaced = i + 1, line + 1, 1, True
            continue
        if c in " \t\r\f\v":
            i, col, spaced = i + 1, col + 1, True
            continue
        if c == "#" or source.startswith("--", i):
            j = source.find("\n", i)
            j = n if j < 0 else j
            col += j - i
            i, spaced = j, True
            continue
        if c == '"':
            j = source.find('"', i + 1)
            nl = source.find("\n", i + 1)
            if j < 0 or (0 <= nl < j):
                raise ContractSyntaxError("unterminated string", line, col, ['"'])
            text = source[i:j + 1]
            toks.append(Token("STRING", text, line, col, spaced))
        elif (m := NUMBER_RE.match(source, i)) is not None:
            text = m.group()
            toks.append(Token("NUMBER", text, line, col, spaced, _num(text)))
        elif (m := IDENT_RE.match(source, i)) is not None:
            text = m.group()
            toks.append(Token("IDENT", text, line, col, spaced))
        else:
            text = c
            toks.append(Token("SYM", text, line, col, spaced))
        i += len(text)
        col += len(text)
        spaced = False
    toks.append(Token("EOF", "", line, col, True))
    return _fold_powers(toks)


def _fold_powers(toks: list[Token]) -> list[Token]:
    """Fold ``NUMBER ^ [-]NUMBER`` into a single constant token (2^16 -> 65536)."""
    out: list[Token] = []
    i = 0
    while i < len(toks):
        t = toks[i]
        if t.kind == "NUMBER" and i + 2 < len(toks) and toks[i + 1].is_sym("^"):
            j = i + 2
            neg = toks[j].is_sym("-")
            if neg:
                j += 1
            if j < len(toks) and toks[j].kind == "NUMBER":
                parts = toks[i:j + 1]
                text = join(parts)
                exp = -toks[j].value if neg else toks[j].value
                try:
                    value = float(t.value ** exp)
                except OverflowError:
                    value = float("inf")
                out.append(Token("NUMBER", text, t.line, t.col, t.space_before, value))
                i = j + 1
                continue
        out.append(t)
        i += 1
    return out


def join(tokens) -> str:
    """Normalized text: one space wherever the source had whitespace or a comment."""
    parts = []
    for k, t in enumerate(tokens):
        if k and t.space_before:
            parts.append(" ")
        parts.append(t.text)
    return "".join(parts)
