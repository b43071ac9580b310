"""Recursive-descent parser for kernel contracts.

A contract body is laid out as clauses.  A clause keyword opens a clause
when it is the first body token, or the first token of a line indented no
deeper than the body's first clause; deeper-indented lines continue the
previous clause.  Each clause body is then parsed by its own sub-grammar.
Free-text forms fall back to structured-where-recognizable nodes.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

from ..numerics import FORMATS, ToleranceSpec
from .lexer import ContractError, ContractSyntaxError, Token, join, lex
from .nodes import (
    BUILTIN_OP_CLASSES,
    CLAUSE_KEYWORDS,
    ContractAst,
    Matcher,
    OpClass,
    Predicate,
    Protocol,
    RefSpec,
    Relation,
    ViolationSignature,
)

PARTS = ("id",) + CLAUSE_KEYWORDS


class MissingPartError(ContractError):
    def __init__(self, parts):
        self.parts = tuple(parts)
        super().__init__(f"contract is missing part(s): {', '.join(self.parts)}")


class DuplicatePartError(ContractError):
    def __init__(self, part: str, line: int, column: int):
        self.part, self.line, self.column = part, line, column
        super().__init__(f"{line}:{column}: duplicate '{part}' clause")


class IoError(OSError):
    pass


_OPEN = {"(", "[", "{"}
_CLOSE = {")", "]", "}"}

SCOPE_ALIASES = {
    ("reductions",): "reduction",
    ("collective", "communication"): "collective",
    ("indexing", "operations"): "indexing",
}


def _err(tok: Token, msg: str, expected=()):
    return ContractSyntaxError(msg, tok.line, tok.col, expected)


class _Cursor:
    """Read-only walk over one clause's tokens.  ``stop`` is the token that
    ended the clause; errors at end-of-clause point at it."""

    def __init__(self, toks: list[Token], stop: Token):
        self.toks, self.stop, self.i = toks, stop, 0

    def peek(self, k: int = 0) -> Token | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at_end(self) -> bool:
        return self.i >= len(self.toks)

    def here(self) -> Token:
        return self.peek() or self.stop

    def next(self) -> Token:
        t = self.here()
        if self.at_end():
            raise _err(t, "unexpected end of clause")
        self.i += 1
        return t

    def expect_ident(self, *words: str, what: str | None = None) -> Token:
        t = self.peek()
        if t is None or not t.is_ident(*words):
            raise _err(self.here(), f"expected {what or ' or '.join(words) or 'identifier'}",
                       words or [what or "IDENT"])
        self.i += 1
        return t

    def expect_sym(self, ch: str) -> Token:
        t = self.peek()
        if t is None or not t.is_sym(ch):
            raise _err(self.here(), f"expected '{ch}'", [ch])
        self.i += 1
        return t

    def expect_number(self) -> Token:
        t = self.peek()
        if t is None or t.kind != "NUMBER":
            raise _err(self.here(), "expected number", ["NUMBER"])
        self.i += 1
        return t

    def rest(self) -> list[Token]:
        r = self.toks[self.i:]
        self.i = len(self.toks)
        return r

    def until(self, pred) -> list[Token]:
        """Consume tokens up to (not including) the first depth-0 token matching pred."""
        start, depth = self.i, 0
        while not self.at_end():
            t = self.toks[self.i]
            if depth == 0 and pred(t):
                break
            if t.kind == "SYM" and t.text in _OPEN:
                depth += 1
            elif t.kind == "SYM" and t.text in _CLOSE:
                depth = max(0, depth - 1)
            self.i += 1
        return self.toks[start:self.i]


def _split(toks: list[Token], pred) -> list[list[Token]]:
    """Split on depth-0 separator tokens.  Depth clamps at zero, so a
    half-open interval like ``[0, bound)`` still balances."""
    out, cur, depth = [], [], 0
    for t in toks:
        if depth == 0 and pred(t):
            out.append(cur)
            cur = []
            continue
        if t.kind == "SYM" and t.text in _OPEN:
            depth += 1
        elif t.kind == "SYM" and t.text in _CLOSE:
            depth = max(0, depth - 1)
        cur.append(t)
    out.append(cur)
    return out


def _depth0(toks: list[Token]):
    depth = 0
    for t in toks:
        if t.kind == "SYM" and t.text in _CLOSE:
            depth = max(0, depth - 1)
            continue
        if depth == 0:
            yield t
        if t.kind == "SYM" and t.text in _OPEN:
            depth += 1


def _balanced_group(cur: _Cursor, open_ch: str, close_ch: str) -> list[Token]:
    """Consume ``open ... close`` with nesting, returning the inner tokens."""
    cur.expect_sym(open_ch)
    start, depth = cur.i, 1
    while not cur.at_end():
        t = cur.toks[cur.i]
        if t.is_sym(open_ch):
            depth += 1
        elif t.is_sym(close_ch):
            depth -= 1
            if depth == 0:
                inner = cur.toks[start:cur.i]
                cur.i += 1
                return inner
        cur.i += 1
    raise _err(cur.stop, f"unclosed '{open_ch}'", [close_ch])


def _ident_list(cur: _Cursor, close_ch: str) -> tuple[str, ...]:
    names = [cur.expect_ident(what="name").text]
    while cur.peek() is not None and cur.peek().is_sym(","):
        cur.next()
        names.append(cur.expect_ident(what="name").text)
    cur.expect_sym(close_ch)
    return tuple(names)


def _value(t: Token):
    if t.kind == "NUMBER":
        return int(t.value) if float(t.value).is_integer() and "." not in t.text and "e" not in t.text.lower() else t.value
    return t.text


def _value_set(cur: _Cursor) -> tuple:
    cur.expect_sym("{")
    vals = []
    while True:
        t = cur.peek()
        if t is None:
            raise _err(cur.stop, "unclosed value set", ["}"])
        if t.is_sym("("):
            cur.next()
            tup = [_value(cur.expect_number())]
            while cur.peek() is not None and cur.peek().is_sym(","):
                cur.next()
                tup.append(_value(cur.expect_number()))
            cur.expect_sym(")")
            vals.append(tuple(tup))
        elif t.kind in ("NUMBER", "IDENT"):
            vals.append(_value(cur.next()))
        else:
            raise _err(t, "expected value", ["NUMBER", "IDENT", "("])
        t = cur.peek()
        if t is not None and t.is_sym(","):
            cur.next()
            continue
        cur.expect_sym("}")
        return tuple(vals)


# ---------------------------------------------------------------------------
# scope

def _parse_scope(toks, stop) -> tuple[OpClass, ...]:
    head, tail = toks, []
    for k, t in enumerate(toks):
        if t.is_sym(":") and t in list(_depth0(toks)):
            head, tail = toks[:k], toks[k + 1:]
            break
    items = _split(head, lambda t: t.is_sym(","))
    out = []
    for n, item in enumerate(items):
        if not item:
            raise _err(stop if n == len(items) - 1 and not tail else _first_after(toks, item, stop),
                       "expected op class", ["op_class"])
        qual_extra = join(tail) if (n == len(items) - 1 and tail) else ""
        out.append(_op_class(item, qual_extra))
    return tuple(out)


def _first_after(toks, item, stop):
    # empty item: point at the separator that followed it
    for t in toks:
        if t.is_sym(","):
            return t
    return stop


def _op_class(item: list[Token], extra: str) -> OpClass:
    first = item[0]
    if first.kind != "IDENT":
        raise _err(first, "expected op class", ["op_class"])
    words = []
    for t in item:
        if t.kind != "IDENT":
            break
        words.append(t.text)
    name, used = None, 0
    for phrase, canon in SCOPE_ALIASES.items():
        if tuple(w.lower() for w in words[:len(phrase)]) == phrase:
            name, used = canon, len(phrase)
            break
    if name is None and first.text in BUILTIN_OP_CLASSES:
        name, used = first.text, 1
    if name is None:
        name, used = "_".join(words), len(words)
    qualifier = " ".join(x for x in (join(item[used:]), extra) if x)
    return OpClass(name, name not in BUILTIN_OP_CLASSES, qualifier)


# ---------------------------------------------------------------------------
# pre

def _formats_in(toks) -> tuple[str, ...]:
    found = []
    for k, t in enumerate(toks):
        name = None
        if t.kind == "IDENT" and t.text in FORMATS:
            name = t.text
        elif t.is_ident("FP8") and k + 1 < len(toks) and toks[k + 1].is_ident("E4M3", "E5M2"):
            name = "FP8_" + toks[k + 1].text
        if name and name not in found:
            found.append(name)
    return tuple(found)


def _parse_predicate(toks: list[Token], stop: Token) -> Predicate:
    text = join(toks)
    cur = _Cursor(toks, stop)
    first, second = cur.peek(), cur.peek(1)
    opens = second is not None and second.is_sym("(")
    if first.is_ident("precision") and opens:
        cur.next()
        cur.next()
        tensors = _ident_list(cur, ")")
        cur.expect_ident("in")
        cur.expect_sym("{")
        formats = _ident_list(cur, "}")
        if not cur.at_end():
            raise _err(cur.peek(), "expected 'and'", ["and"])
        return Predicate("precision", text, tensors, formats)
    if first.is_ident("shape") and opens:
        cur.next()
        cur.next()
        tensor = cur.expect_ident(what="tensor").text
        cur.expect_sym(")")
        cur.expect_sym("=")
        if cur.at_end():
            raise _err(stop, "expected shape spec", ["shape_spec"])
        return Predicate("shape", text, (tensor,), (), join(cur.rest()))
    if first.is_ident("value_range") and opens:
        cur.next()
        cur.next()
        tensors = _ident_list(cur, ")")
        t = cur.expect_ident("finite", "bounded", "in")
        if t.text == "bounded":
            cur.expect_number()
        elif t.text == "in" and cur.at_end():
            raise _err(stop, "expected interval", ["interval"])
        spec = join(toks[cur.i - (2 if t.text == "bounded" else 1):])
        if t.text != "in" and not cur.at_end():
            raise _err(cur.peek(), "expected 'and'", ["and"])
        return Predicate("value_range", text, tensors, (), spec)
    if first.is_ident("stack") and second is not None and second.is_sym("="):
        cur.next()
        cur.next()
        sid = cur.expect_ident(what="stack id").text
        if not cur.at_end():
            raise _err(cur.peek(), "expected 'and'", ["and"])
        return Predicate("env", text, (), (), f"stack={sid}")
    if first.is_ident("flag") and opens:
        cur.next()
        cur.next()
        flag = cur.expect_ident(what="flag").text
        cur.expect_sym(")")
        cur.expect_sym("=")
        val = cur.next()
        if not cur.at_end():
            raise _err(cur.peek(), "expected 'and'", ["and"])
        return Predicate("env", text, (), (), f"{flag}={val.text}")
    if first.is_ident("version") and second is not None and second.kind == "SYM":
        return Predicate("version", text, (), (), join(toks[1:]))
    return Predicate("text", text, (), _formats_in(toks))


def _parse_pre(toks, stop) -> tuple[Predicate, ...]:
    parts = _split(toks, lambda t: t.is_ident("and"))
    preds = []
    for k, p in enumerate(parts):
        if not p:
            raise _err(stop if k == len(parts) - 1 else _nth_and(toks, k), "expected predicate", ["predicate"])
        preds.append(_parse_predicate(p, stop))
    return tuple(preds)


def _nth_and(toks, k):
    seen = -1
    for t in _depth0(toks):
        if t.is_ident("and"):
            seen += 1
            if seen == k:
                return t
    return toks[0]


# ---------------------------------------------------------------------------
# post

_ALLCAPS = re.compile(r"^[A-Z][A-Z0-9_]{2,}$")


def _item_policy(item: list[Token]):
    top = list(_depth0(item))
    for k, t in enumerate(top):
        if t.is_ident("raise") and k + 1 < len(top) and top[k + 1].kind == "IDENT":
            return "RAISE", top[k + 1].text
    caps = [t.text for t in top if t.kind == "IDENT" and _ALLCAPS.match(t.text) and t.text not in FORMATS]
    return (caps[-1] if caps else None), None


def _parse_post(toks, stop) -> Relation:
    text = join(toks)
    cur = _Cursor(toks, stop)
    first = cur.peek()
    if first.is_ident("output") and len(toks) > 2 and toks[2].is_ident("satisfies"):
        cur.next()
        out = cur.expect_ident(what="tensor").text
        cur.next()
        cur.expect_ident("elementwise_close", "close")
        _balanced_group(cur, "(", ")")
        if not cur.at_end():
            raise _err(cur.peek(), "unexpected token after closeness predicate", ["}"])
        return Relation("closeness", text, output=out)
    if first.is_ident("declared_policy"):
        cur.next()
        cur.expect_ident(what="name")
        cur.expect_ident("in")
        cur.expect_sym("{")
        pols = _ident_list(cur, "}")
        return Relation("policy", text, policies=pols)
    if first.is_ident("bitwise_identical"):
        cur.next()
        cur.expect_ident("across")
        return Relation("bitwise", text)
    items = _split(toks, lambda t: t.is_sym("|") or t.is_ident("or"))
    policies, raises = [], None
    for item in items:
        pol, exc = _item_policy(item)
        if pol and pol not in policies:
            policies.append(pol)
        raises = raises or exc
    domain: tuple = ()
    c0 = _Cursor(items[0], stop)
    if len(items[0]) >= 3 and items[0][0].kind == "IDENT" and items[0][1].is_ident("in") and items[0][2].is_sym("{"):
        c0.i = 2
        domain = (items[0][0].text, _value_set(c0))
    if len(policies) >= 2:
        return Relation("policy", text, policies=tuple(policies), raises=raises, domain=domain)
    if raises:
        return Relation("raise", text, raises=raises, domain=domain)
    if any("bitwise" in t.text.lower() for t in toks if t.kind == "IDENT"):
        return Relation("bitwise", text)
    return Relation("text", text)


# ---------------------------------------------------------------------------
# tolerance

_LEAF_START = ("absolute", "relative", "ulp", "within", "elementwise", "none", "any",
               "bitwise", "exact", "per_precision")


def _is_leaf_start(t: Token | None) -> bool:
    return t is not None and t.kind == "IDENT" and t.text in _LEAF_START


def _is_sep(t: Token | None) -> bool:
    return t is not None and t.is_sym(";", ",")


def _ulp_value(t: Token) -> float:
    if t.value is None or t.value != int(t.value):
        raise _err(t, "ulp tolerance must be a nonnegative integer", ["INTEGER"])
    return float(int(t.value))


def _note_until_sep(cur: _Cursor, stops=(";", ",")) -> str:
    return join(cur.until(lambda t: t.is_sym(*stops)))


def _parse_leaf(cur: _Cursor, inner_stops=(";", ",")) -> ToleranceSpec:
    t = cur.peek()
    if t is None:
        raise _err(cur.stop, "expected tolerance", _LEAF_START)
    if t.is_ident("absolute", "relative"):
        cur.next()
        nxt = cur.peek()
        if nxt is not None and nxt.kind == "NUMBER":
            cur.next()
            return ToleranceSpec(t.text, float(nxt.value))
        if nxt is not None and nxt.is_ident("within"):
            return _parse_within(cur)
        if nxt is not None and nxt.kind == "IDENT":
            expr = cur.until(lambda x: x.is_ident("for") or x.is_sym(*inner_stops))
            return ToleranceSpec(t.text, None, expr=join(expr))
        raise _err(cur.here(), "expected number or bound expression", ["NUMBER", "within", "expression"])
    if t.is_ident("within"):
        return _parse_within(cur)
    if t.is_ident("ulp"):
        cur.next()
        return ToleranceSpec("ulp", _ulp_value(cur.expect_number()))
    if t.is_ident("elementwise"):
        cur.next()
        kids = [_parse_leaf(cur, inner_stops)]
        while cur.peek() is not None and cur.peek().is_ident("and"):
            cur.next()
            kids.append(_parse_leaf(cur, inner_stops))
        return ToleranceSpec("elementwise", children=tuple(kids))
    if t.is_ident("none", "any"):
        cur.next()
        return ToleranceSpec("none", note=t.text if t.text != "none" else "")
    if t.is_ident("bitwise", "exact"):
        cur.next()
        return ToleranceSpec("ulp", 0.0, note=t.text)
    if t.is_ident("as") and cur.peek(1) is not None and cur.peek(1).is_ident("declared"):
        return ToleranceSpec("none", note=_note_until_sep(cur, inner_stops), deferred=True)
    if t.is_ident("per_precision"):
        return _parse_per_precision(cur)
    raise _err(t, "expected tolerance", _LEAF_START)


def _parse_within(cur: _Cursor) -> ToleranceSpec:
    cur.expect_ident("within")
    n = cur.expect_number()
    cur.expect_ident("ULP", "ULPs", "ulp", "ulps")
    return ToleranceSpec("ulp", _ulp_value(n))


def _parse_per_precision(cur: _Cursor) -> ToleranceSpec:
    cur.expect_ident("per_precision")
    cur.expect_sym("{")
    keys, kids = [], []
    while True:
        key = cur.expect_ident(what="precision name")
        if key.text in keys:
            raise _err(key, f"duplicate per_precision key {key.text}", [])
        cur.expect_sym(":")
        leaf = _parse_leaf(cur, inner_stops=(",", "}"))
        note = _note_until_sep(cur, (",", "}"))
        if note:
            leaf = ToleranceSpec(leaf.kind, leaf.value, leaf.children, leaf.keys, leaf.expr,
                                 " ".join(x for x in (leaf.note, note) if x), leaf.deferred)
        keys.append(key.text)
        kids.append(leaf)
        if cur.peek() is not None and cur.peek().is_sym(","):
            cur.next()
            continue
        cur.expect_sym("}")
        return ToleranceSpec("per_precision", children=tuple(kids), keys=tuple(keys))


def _key_annotation(cur: _Cursor) -> Token | None:
    a, b, c = cur.peek(), cur.peek(1), cur.peek(2)
    if a is not None and a.is_ident("for") and b is not None and b.kind == "IDENT":
        if c is None or _is_sep(c) or _is_leaf_start(c):
            cur.i += 2
            return b
    if a is not None and a.is_sym("(") and b is not None and b.kind == "IDENT" and c is not None and c.is_sym(")"):
        d = cur.peek(3)
        if d is None or _is_sep(d) or _is_leaf_start(d):
            cur.i += 3
            return b
    return None


def _with_note(leaf: ToleranceSpec, note: str) -> ToleranceSpec:
    if not note:
        return leaf
    merged = " ".join(x for x in (leaf.note, note) if x)
    return ToleranceSpec(leaf.kind, leaf.value, leaf.children, leaf.keys, leaf.expr, merged, leaf.deferred)


def _parse_tolerance(toks, stop) -> ToleranceSpec:
    cur = _Cursor(toks, stop)
    if cur.peek().is_ident("per_precision"):
        spec = _parse_per_precision(cur)
        if not cur.at_end():
            raise _err(cur.peek(), "unexpected token after per_precision block", [])
        return spec
    items: list[tuple[ToleranceSpec, Token | None, Token]] = []
    while not cur.at_end():
        start = cur.peek()
        leaf = _parse_leaf(cur)
        key = _key_annotation(cur)
        if not cur.at_end() and not _is_sep(cur.peek()) and not (key is not None and _is_leaf_start(cur.peek())):
            leaf = _with_note(leaf, _note_until_sep(cur))
        items.append((leaf, key, start))
        if _is_sep(cur.peek()):
            cur.next()
            if cur.at_end():
                raise _err(stop, "expected tolerance after separator", _LEAF_START)
    if len(items) == 1 and items[0][1] is None:
        return items[0][0]
    keys, kids = [], []
    for leaf, key, start in items:
        if key is None:
            raise _err(start, "per-precision tolerance entry lacks a 'for <precision>' key", ["for"])
        if key.text in keys:
            raise _err(key, f"duplicate per_precision key {key.text}", [])
        keys.append(key.text)
        kids.append(leaf)
    return ToleranceSpec("per_precision", children=tuple(kids), keys=tuple(keys))


# ---------------------------------------------------------------------------
# reference

_REF_STOP = ("with", "on", "at", "in", "of", "for")
_STACKS = ("PyTorch", "NumPy", "JAX", "TensorFlow", "NVIDIA", "AMD", "Ascend", "Metal",
           "Gaudi", "Trainium", "TPU")


def _parse_reference(toks, stop) -> RefSpec:
    cur = _Cursor(toks, stop)
    first = cur.peek()
    if first.is_ident("higher_precision"):
        cur.next()
        fmt = cur.expect_ident(what="precision name").text
        options: list[tuple[str, str]] = []
        nxt, after = cur.peek(), cur.peek(2)
        if nxt is not None and nxt.is_ident("with") and after is not None and after.is_sym("="):
            cur.next()
            while True:
                name = cur.expect_ident(what="option name")
                cur.expect_sym("=")
                val = cur.next()
                if val.kind not in ("IDENT", "NUMBER"):
                    raise _err(val, "expected option value", ["IDENT"])
                options.append((name.text, val.text))
                if cur.peek() is not None and cur.peek().is_sym(","):
                    cur.next()
                    continue
                break
            if not cur.at_end():
                raise _err(cur.peek(), "expected ','", [","])
        return RefSpec("higher_precision", fmt, tuple(options), join(cur.rest()))
    if first.is_ident("alternate_stack", "stable_algorithm", "spec"):
        cur.next()
        target = cur.expect_ident(what="identifier").text
        return RefSpec(first.text, target, (), join(cur.rest()))
    if first.is_ident("algebraic"):
        cur.next()
        target = cur.next().text if cur.peek() is not None and cur.peek().kind == "IDENT" else None
        return RefSpec("algebraic", target, (), join(cur.rest()))
    # descriptive references: infer the kind from the leading words
    text = join(toks)
    lead = []
    for t in toks:
        if t.kind != "IDENT" or t.text in _REF_STOP:
            break
        lead.append(t.text)
    fmts = [w for w in lead if w in FORMATS]
    if fmts:
        return RefSpec("higher_precision", fmts[0], (), text)
    idents = [t.text for t in toks if t.kind == "IDENT"]
    if any(w.startswith("IEEE") for w in idents):
        return RefSpec("spec", "IEEE_754-2019" if any(t.text == "2019" for t in toks) else "IEEE_754", (), text)
    stacks = [w for w in idents if w in _STACKS]
    if stacks:
        return RefSpec("alternate_stack", stacks[0], (), text)
    if not lead:
        raise _err(first, "expected reference", ["higher_precision", "alternate_stack", "algebraic",
                                                   "stable_algorithm", "spec"])
    return RefSpec("stable_algorithm", "_".join(lead), (), text)


# ---------------------------------------------------------------------------
# measure

_OOB_WORDS = ("out-of-bound", "out-of-range", "out-of-bounds")


def _sections(toks):
    return [s for s in _split(toks, lambda t: t.is_sym(";"))]


def _parse_measure(toks, stop) -> Protocol:
    text = join(toks)
    cur = _Cursor(toks, stop)
    first = cur.peek()
    word = first.text if first.kind == "IDENT" else ""
    secs = _sections(toks)
    action = "; ".join(join(s) for s in secs[1:])
    if word == "sample":
        cur.next()
        count = None
        if cur.peek() is not None and cur.peek().kind == "NUMBER":
            n = cur.next()
            if n.value < 1 or n.value != int(n.value):
                raise _err(n, "sample count must be a positive integer", ["INTEGER"])
            count = int(n.value)
        first_sec = secs[0]
        config = None
        for k, t in enumerate(first_sec):
            if t.is_ident("per"):
                config = join(first_sec[k + 1:]) or None
                break
        aggregate = next((join(s[1:]) for s in secs[1:] if s and s[0].is_ident("compute")), None)
        bound = next((join(s[2:]) for s in secs[1:] if len(s) > 1 and s[0].is_ident("pass") and s[1].is_ident("if")), None)
        return Protocol("sample", text, count=count, config_class=config, aggregate=aggregate,
                        bound=bound, action=action)
    if word == "sweep":
        cur.next()
        param = cur.expect_ident(what="parameter").text
        values = None
        if cur.peek() is not None and cur.peek().is_ident("in"):
            cur.next()
            values = _value_set(cur)
        return Protocol("sweep", text, param=param, values=values, action=action)
    if word == "inject":
        return Protocol("inject", text, anomaly=join(secs[0][1:]), action=action)
    if word == "enumerate":
        return Protocol("enumerate", text, param=join(secs[0][1:]), action=action)
    if word in ("invoke", "repeat"):
        cur.next()
        n = cur.expect_number()
        if n.value < 2 or n.value != int(n.value):
            raise _err(n, "repeat count must be an integer >= 2", ["INTEGER"])
        if word == "invoke":
            cur.expect_ident("times")
        return Protocol("repeat", text, count=int(n.value), action=action)
    if word == "construct":
        low = text.lower()
        if any(w in low for w in _OOB_WORDS):
            return Protocol("inject", text, anomaly="out-of-bounds indices", action=action)
        return Protocol("sample", text, config_class="constructed", action=action)
    if word == "run":
        head = secs[0]
        for k, t in enumerate(head):
            if (t.is_ident("with") and k + 3 < len(head) and head[k + 1].kind == "IDENT"
                    and head[k + 2].is_ident("in") and head[k + 3].is_sym("{")):
                c = _Cursor(head, stop)
                c.i = k + 3
                values = _value_set(c)
                return Protocol("sweep", text, param=head[k + 1].text, values=values, action=action)
        return Protocol("custom", text)
    if word == "evaluate":
        if any("shape" in t.text for t in toks if t.kind == "IDENT"):
            return Protocol("sweep", text, param="shape", action=action)
        return Protocol("custom", text)
    if word == "compute":
        if any("schedule" in t.text for t in toks if t.kind == "IDENT"):
            return Protocol("enumerate", text, param=join(secs[0][1:]), action=action)
        return Protocol("custom", text)
    return Protocol("custom", text)


# ---------------------------------------------------------------------------
# violation

_DIVERGE_RE = re.compile(r"by\s*>\s*([0-9.eE+-]+)\s*relative")


def _recognize_matcher(toks, text: str) -> Matcher | None:
    low = text.lower()
    if "tops out at" in low or "saturat" in low:
        vals = []
        for t in toks:
            if t.kind == "NUMBER":
                vals.append(t.text)
            elif t.is_ident("Inf", "inf", "NaN", "nan"):
                vals.append(t.text)
        params: list = [("values", tuple(vals))]
        if not vals:
            params.append(("mode", "lower_precision_max"))
        return Matcher("saturation-at-value", tuple(params))
    if any(k in low for k in ("matches none", "without declaring", "switches between", "not documented")):
        return Matcher("policy-mismatch")
    if any(k in low for k in ("benchmarked", "s in b", "no error signal")):
        m = _DIVERGE_RE.search(text)
        params = (("threshold", m.group(1)),) if m else ()
        return Matcher("holdout-divergence", params)
    if "bitwise" in low or "any bit" in low:
        return Matcher("bitwise-mismatch")
    if any(k in low for k in ("tolerance", "exceeds", "beyond")):
        return Matcher("tolerance-exceeded-fraction")
    return None


def _parse_violation(toks, stop) -> ViolationSignature:
    text = join(toks)
    return ViolationSignature(text, _recognize_matcher(toks, text))


_CLAUSE_PARSERS = {
    "scope": _parse_scope,
    "pre": _parse_pre,
    "post": _parse_post,
    "tolerance": _parse_tolerance,
    "reference": _parse_reference,
    "measure": _parse_measure,
    "violation": _parse_violation,
}


# ---------------------------------------------------------------------------
# top level

def _contract_from_tokens(toks: list[Token], i: int) -> tuple[ContractAst, int]:
    t = toks[i]
    if not t.is_ident("contract"):
        raise _err(t, "expected 'contract'", ["contract"])
    i += 1
    missing = []
    cid = None
    if toks[i].kind == "IDENT":
        cid = toks[i]
        i += 1
    elif toks[i].is_sym("{"):
        missing.append("id")
    else:
        raise _err(toks[i], "expected contract identifier", ["ID"])
    if not toks[i].is_sym("{"):
        raise _err(toks[i], "expected '{'", ["{"])
    lbrace = toks[i]
    i += 1
    # find the matching close brace
    depth, j = 1, i
    while True:
        tj = toks[j]
        if tj.kind == "EOF":
            raise _err(tj if j == i else toks[j - 1], "unclosed contract body", ["}"])
        if tj.is_sym("{"):
            depth += 1
        elif tj.is_sym("}"):
            depth -= 1
            if depth == 0:
                break
        j += 1
    body, rbrace = toks[i:j], toks[j]

    clause_col = None
    if body:
        clause_col = body[0].col if body[0].line != lbrace.line else None
    starts = []
    for k, bt in enumerate(body):
        if not bt.is_ident(*CLAUSE_KEYWORDS):
            continue
        if k == 0:
            starts.append(k)
        elif bt.line != body[k - 1].line and clause_col is not None and bt.col <= clause_col:
            starts.append(k)
    if body and (not starts or starts[0] != 0):
        raise _err(body[0], "expected clause keyword", CLAUSE_KEYWORDS)

    spans: dict[str, tuple[Token, list[Token], Token]] = {}
    for n, k in enumerate(starts):
        end = starts[n + 1] if n + 1 < len(starts) else len(body)
        kw = body[k]
        if kw.text in spans:
            raise DuplicatePartError(kw.text, kw.line, kw.col)
        stop = body[end] if end < len(body) else rbrace
        spans[kw.text] = (kw, body[k + 1:end], stop)
    missing += [p for p in CLAUSE_KEYWORDS if p not in spans]
    if missing:
        raise MissingPartError(missing)

    parsed, clauses, positions = {}, [], {"id": (cid.line, cid.col)}
    for kw in CLAUSE_KEYWORDS:
        ktok, ctoks, stop = spans[kw]
        if not ctoks:
            raise _err(stop, f"empty '{kw}' clause", [f"{kw} body"])
        parsed[kw] = _CLAUSE_PARSERS[kw](ctoks, stop)
        clauses.append((kw, join(ctoks)))
        positions[kw] = (ktok.line, ktok.col)
    ast = ContractAst(
        id=cid.text,
        scope=parsed["scope"],
        pre=parsed["pre"],
        post=parsed["post"],
        tolerance=parsed["tolerance"],
        reference=parsed["reference"],
        measure=parsed["measure"],
        violation=parsed["violation"],
        clauses=tuple(clauses),
        positions=positions,
    )
    return ast, j + 1


def parse_contracts(source: str) -> list[ContractAst]:
    toks = lex(source)
    out, i = [], 0
    while toks[i].kind != "EOF":
        ast, i = _contract_from_tokens(toks, i)
        out.append(ast)
    return out


def parse_contract(source: str) -> ContractAst:
    """Parse exactly one contract."""
    toks = lex(source)
    if toks[0].kind == "EOF":
        raise _err(toks[0], "expected 'contract'", ["contract"])
    ast, i = _contract_from_tokens(toks, 0)
    if toks[i].kind != "EOF":
        raise _err(toks[i], "expected end of input", ["EOF"])
    return ast


def canonical_serialize(ast: ContractAst) -> str:
    lines = [f"contract {ast.id} {{"]
    for kw, text in ast.clauses:
        lines.append(f"  {kw:<10} {text}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_file(path) -> ContractAst:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read contract file {path}: {e}") from e
    return parse_contract(text)


def parse_corpus(directory) -> list[tuple[str, ContractAst | Exception]]:
    """Parse every ``.kc`` file in ``directory``; failures are returned as values."""
    d = Path(directory)
    try:
        names = sorted(n for n in os.listdir(d) if n.endswith(".kc"))
    except OSError as e:
        raise IoError(f"cannot read contract directory {d}: {e}") from e
    out: list[tuple[str, ContractAst | Exception]] = []
    for name in names:
        try:
            out.append((name, parse_file(d / name)))
        except (ContractError, OSError, UnicodeDecodeError) as e:
            out.append((name, e))
    return out
