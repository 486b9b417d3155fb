"""Higher-order-logic expression trees with de Bruijn indices.

Formulas are immutable and hashable.  Bound variables are positional
indices (0 = innermost binder), so alpha-equivalence is plain structural
equality.  Conjunctions and disjunctions are flattened n-ary nodes; a
canonical child order exists only for hashing/identity, never for
display.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional


class FormulaError(Exception):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnboundVariableError(FormulaError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"variable '{name}' used outside its binder (at offset {offset})")
        self.name = name
        self.offset = offset


@dataclass(frozen=True)
class Formula:
    """Base class; concrete variants below."""

    __slots__ = ()


@dataclass(frozen=True)
class Var(Formula):
    index: int


@dataclass(frozen=True)
class Const(Formula):
    sym: int


@dataclass(frozen=True)
class Num(Formula):
    value: int


@dataclass(frozen=True)
class Str(Formula):
    value: str


@dataclass(frozen=True)
class Atom(Formula):
    pred: int
    args: tuple = ()


@dataclass(frozen=True)
class Eq(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True)
class And(Formula):
    parts: tuple


@dataclass(frozen=True)
class Or(Formula):
    parts: tuple


@dataclass(frozen=True)
class Not(Formula):
    body: Formula


@dataclass(frozen=True)
class Implies(Formula):
    antecedent: Formula
    consequent: Formula


@dataclass(frozen=True)
class ForAll(Formula):
    body: Formula


@dataclass(frozen=True)
class Exists(Formula):
    body: Formula


@dataclass(frozen=True)
class Lambda(Formula):
    body: Formula


@dataclass(frozen=True)
class Apply(Formula):
    fn: Formula
    args: tuple


@dataclass(frozen=True)
class Falsum(Formula):
    pass


FALSE = Falsum()


def conj(parts) -> Formula:
    """N-ary conjunction; flattens nested And and collapses singletons."""
    flat = []
    for p in parts:
        if isinstance(p, And):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        raise FormulaError("empty conjunction")
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(parts) -> Formula:
    """N-ary disjunction; flattens nested Or and collapses singletons."""
    flat = []
    for p in parts:
        if isinstance(p, Or):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        raise FormulaError("empty disjunction")
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


class SymbolTable:
    """Bidirectional map between constant ids and printable names.

    Ids are allocated densely in intern order and are never reused, even
    when a constant stops being referenced.
    """

    def __init__(self):
        self._names: list = []
        self._ids: dict = {}
        self._fresh_counter = 0

    def intern(self, name: str) -> int:
        sym = self._ids.get(name)
        if sym is None:
            sym = len(self._names)
            self._names.append(name)
            self._ids[name] = sym
        return sym

    def name(self, sym: int) -> str:
        return self._names[sym]

    def lookup(self, name: str) -> Optional[int]:
        return self._ids.get(name)

    def fresh_constant(self, prefix: str = "c") -> int:
        while True:
            candidate = f"{prefix}{self._fresh_counter}"
            self._fresh_counter += 1
            if candidate not in self._ids:
                return self.intern(candidate)

    def clone(self) -> "SymbolTable":
        out = SymbolTable()
        out._names = list(self._names)
        out._ids = dict(self._ids)
        out._fresh_counter = self._fresh_counter
        return out

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids


def children(f: Formula) -> tuple:
    match f:
        case Atom(_, args):
            return args
        case Eq(lhs, rhs):
            return (lhs, rhs)
        case And(parts) | Or(parts):
            return parts
        case Not(body) | ForAll(body) | Exists(body) | Lambda(body):
            return (body,)
        case Implies(a, b):
            return (a, b)
        case Apply(fn, args):
            return (fn,) + args
        case _:
            return ()


def map_children(f: Formula, fn: Callable[[Formula], Formula]) -> Formula:
    match f:
        case Atom(pred, args):
            return Atom(pred, tuple(fn(a) for a in args))
        case Eq(lhs, rhs):
            return Eq(fn(lhs), fn(rhs))
        case And(parts):
            return And(tuple(fn(p) for p in parts))
        case Or(parts):
            return Or(tuple(fn(p) for p in parts))
        case Not(body):
            return Not(fn(body))
        case Implies(a, b):
            return Implies(fn(a), fn(b))
        case ForAll(body):
            return ForAll(fn(body))
        case Exists(body):
            return Exists(fn(body))
        case Lambda(body):
            return Lambda(fn(body))
        case Apply(head, args):
            return Apply(fn(head), tuple(fn(a) for a in args))
        case _:
            return f


def walk(f: Formula) -> Iterator[Formula]:
    """Preorder traversal of all subformulas, f included."""
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def max_free_index(f: Formula) -> int:
    """Largest de Bruijn index escaping f, or -1 if none do."""
    match f:
        case Var(k):
            return k
        case ForAll(body) | Exists(body) | Lambda(body):
            return max_free_index(body) - 1
        case _:
            best = -1
            for c in children(f):
                best = max(best, max_free_index(c))
            return best


def is_closed(f: Formula) -> bool:
    return max_free_index(f) < 0


def substitute(body: Formula, replacement: Formula) -> Formula:
    """Instantiate the immediate scope of a binder with a closed term.

    Every variable bound by that binder (index 0 at the top level) is
    replaced; remaining free indices shift down by one.
    """

    def go(f: Formula, depth: int) -> Formula:
        match f:
            case Var(k):
                if k == depth:
                    return replacement
                if k > depth:
                    return Var(k - 1)
                return f
            case ForAll(b):
                return ForAll(go(b, depth + 1))
            case Exists(b):
                return Exists(go(b, depth + 1))
            case Lambda(b):
                return Lambda(go(b, depth + 1))
            case _:
                return map_children(f, lambda c: go(c, depth))

    return go(body, 0)


def alpha_equal(a: Formula, b: Formula) -> bool:
    """Identity up to bound-variable naming; structural under de Bruijn."""
    return a == b


def free_constants(f: Formula) -> set:
    """Constant ids in term positions.

    Predicate symbols of atoms and constant heads of applications are
    function symbols, not entities, and are excluded.
    """
    out: set = set()

    def go(node: Formula):
        match node:
            case Const(sym):
                out.add(sym)
            case Atom(_, args):
                for a in args:
                    go(a)
            case Apply(head, args):
                if not isinstance(head, Const):
                    go(head)
                for a in args:
                    go(a)
            case _:
                for c in children(node):
                    go(c)

    go(f)
    return out


def replace_constants(f: Formula, mapping: dict) -> Formula:
    """Rewrite constant ids everywhere (heads included; merges rely on it)."""
    if isinstance(f, Const):
        return Const(mapping.get(f.sym, f.sym))
    return map_children(f, lambda c: replace_constants(c, mapping))


def canonicalize(f: Formula) -> Formula:
    """Sort And/Or children recursively; used for axiom identity only."""
    g = map_children(f, canonicalize)
    if isinstance(g, (And, Or)):
        parts = tuple(sorted(g.parts, key=formula_key))
        return And(parts) if isinstance(g, And) else Or(parts)
    return g


def formula_key(f: Formula) -> str:
    """Stable compact serialization over symbol ids; sortable and hashable."""
    match f:
        case Var(k):
            return f"v{k}"
        case Const(s):
            return f"c{s}"
        case Num(v):
            return f"n{v}"
        case Str(v):
            return "s" + repr(v)
        case Atom(p, args):
            return f"A{p}(" + ",".join(formula_key(a) for a in args) + ")"
        case Eq(l, r):
            return f"E({formula_key(l)},{formula_key(r)})"
        case And(parts):
            return "&(" + ",".join(formula_key(p) for p in parts) + ")"
        case Or(parts):
            return "|(" + ",".join(formula_key(p) for p in parts) + ")"
        case Not(b):
            return f"~({formula_key(b)})"
        case Implies(a, b):
            return f">({formula_key(a)},{formula_key(b)})"
        case ForAll(b):
            return f"!({formula_key(b)})"
        case Exists(b):
            return f"?({formula_key(b)})"
        case Lambda(b):
            return f"^({formula_key(b)})"
        case Apply(head, args):
            return f"@({formula_key(head)};" + ",".join(formula_key(a) for a in args) + ")"
        case Falsum():
            return "F"
    raise FormulaError(f"unknown node {f!r}")


def canonical_key(f: Formula) -> str:
    return formula_key(canonicalize(f))


# --- concrete text syntax -------------------------------------------------
#
# identifiers [a-z][a-zA-Z0-9_]*; binders ![x]: ?[x]: ^[x]: with
# parenthesized bodies; connectives & | ~ => =; application f(a,b);
# integer literals; double-quoted strings; $F for falsum.

_PUNCT = ("=>", "&", "|", "~", "=", "(", ")", "[", "]", ":", ",", "!", "?", "^", "$F")


def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if text.startswith("=>", i):
            tokens.append(("punct", "=>", i))
            i += 2
            continue
        if text.startswith("$F", i):
            tokens.append(("falsum", "$F", i))
            i += 2
            continue
        if ch in "&|~=()[]:,!?^":
            tokens.append(("punct", ch, i))
            i += 1
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise FormulaSyntaxError("unterminated string literal", i)
            tokens.append(("string", "".join(buf), i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("number", text[i:j], i))
            i = j
            continue
        if ch.isalpha() and ch.islower():
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise FormulaSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, symbols: SymbolTable):
        self.text = text
        self.symbols = symbols
        self.tokens = _tokenize(text)
        self.pos = 0
        self.env: list = []          # innermost binder name last
        self.seen_binders: set = set()

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.next()
        if val != value:
            raise FormulaSyntaxError(f"expected {value!r}, found {val!r}", off)

    def parse(self) -> Formula:
        f = self.formula()
        kind, val, off = self.peek()
        if kind != "eof":
            raise FormulaSyntaxError(f"trailing input {val!r}", off)
        return f

    def formula(self) -> Formula:
        left = self.disjunction()
        kind, val, off = self.peek()
        if val == "=>":
            self.next()
            right = self.formula()  # right-associative
            return Implies(left, right)
        return left

    def disjunction(self) -> Formula:
        parts = [self.conjunction()]
        while self.peek()[1] == "|":
            self.next()
            parts.append(self.conjunction())
        return disj(parts) if len(parts) > 1 else parts[0]

    def conjunction(self) -> Formula:
        parts = [self.unary()]
        while self.peek()[1] == "&":
            self.next()
            parts.append(self.unary())
        return conj(parts) if len(parts) > 1 else parts[0]

    def unary(self) -> Formula:
        kind, val, off = self.peek()
        if val == "~":
            self.next()
            return Not(self.unary())
        if val in ("!", "?", "^"):
            return self.binder(val)
        if kind == "falsum":
            self.next()
            return FALSE
        if val == "(":
            self.next()
            f = self.formula()
            self.expect(")")
            return self.maybe_equality(f)
        return self.atom_or_equality()

    def binder(self, mark: str) -> Formula:
        _, _, off = self.next()
        self.expect("[")
        kind, name, noff = self.next()
        if kind != "ident":
            raise FormulaSyntaxError("expected variable name", noff)
        self.expect("]")
        self.expect(":")
        self.expect("(")
        self.env.append(name)
        self.seen_binders.add(name)
        body = self.formula()
        self.env.pop()
        self.expect(")")
        if mark == "!":
            return ForAll(body)
        if mark == "?":
            return Exists(body)
        return Lambda(body)

    def maybe_equality(self, left: Formula) -> Formula:
        if self.peek()[1] == "=":
            self.next()
            right = self.term()
            return Eq(left, right)
        return left

    def atom_or_equality(self) -> Formula:
        t = self.term()
        if self.peek()[1] == "=":
            self.next()
            right = self.term()
            return Eq(t, right)
        # No '=': a bare term in formula position must be predicative.
        kind, val, off = self.peek()
        if isinstance(t, Apply) and isinstance(t.fn, Const):
            return Atom(t.fn.sym, t.args)
        if isinstance(t, Const):
            return Atom(t.sym, ())
        raise FormulaSyntaxError("expected a formula", off)

    def term(self) -> Formula:
        kind, val, off = self.next()
        if kind == "number":
            return Num(int(val))
        if kind == "string":
            return Str(val)
        if val in ("!", "?", "^"):
            self.pos -= 1
            return self.binder(val)
        if kind != "ident":
            raise FormulaSyntaxError(f"expected a term, found {val!r}", off)
        name = val
        if name in self.env:
            depth = len(self.env) - 1 - max(i for i, v in enumerate(self.env) if v == name)
            base: Formula = Var(depth)
        elif name in self.seen_binders:
            raise UnboundVariableError(name, off)
        else:
            base = Const(self.symbols.intern(name))
        if self.peek()[1] == "(":
            self.next()
            args = [self.term()]
            while self.peek()[1] == ",":
                self.next()
                args.append(self.term())
            self.expect(")")
            return Apply(base, tuple(args))
        return base


def parse_formula(text: str, symbols: SymbolTable) -> Formula:
    """Parse the concrete syntax; unseen identifiers are interned."""
    return _Parser(text, symbols).parse()


def _binder_names(f: Formula, symbols: SymbolTable) -> list:
    taken = {symbols.name(s) for s in _symbols_in(f)}
    names = []
    i = 0
    needed = _binder_count(f)
    while len(names) < needed:
        cand = f"x{i}"
        i += 1
        if cand not in taken:
            names.append(cand)
    return names


def _binder_count(f: Formula) -> int:
    n = 1 if isinstance(f, (ForAll, Exists, Lambda)) else 0
    return n + sum(_binder_count(c) for c in children(f))


def _symbols_in(f: Formula) -> set:
    out = set()
    for node in walk(f):
        if isinstance(node, Const):
            out.add(node.sym)
        elif isinstance(node, Atom):
            out.add(node.pred)
    return out


def print_formula(f: Formula, symbols: SymbolTable) -> str:
    """Render to concrete syntax; round-trips through parse_formula."""
    names = _binder_names(f, symbols)
    counter = [0]

    def binder_name() -> str:
        name = names[counter[0]]
        counter[0] += 1
        return name

    def go(node: Formula, env: list, prec: int) -> str:
        # prec: 0 = formula, 1 = or operand, 2 = and operand, 3 = unary operand
        match node:
            case Var(k):
                if k >= len(env):
                    raise FormulaError(f"dangling variable index {k}")
                return env[len(env) - 1 - k]
            case Const(s):
                return symbols.name(s)
            case Num(v):
                return str(v)
            case Str(v):
                return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
            case Falsum():
                return "$F"
            case Atom(p, args):
                head = symbols.name(p)
                if not args:
                    return head
                return head + "(" + ",".join(go(a, env, 0) for a in args) + ")"
            case Apply(head, args):
                return go(head, env, 3) + "(" + ",".join(go(a, env, 0) for a in args) + ")"
            case Eq(l, r):
                s = go(l, env, 3) + "=" + go(r, env, 3)
                return s
            case Not(b):
                inner = go(b, env, 3)
                if isinstance(b, Eq):
                    inner = "(" + inner + ")"
                return "~" + inner
            case And(parts):
                s = " & ".join(
                    "(" + go(p, env, 0) + ")" if isinstance(p, (Or, Implies)) else go(p, env, 2)
                    for p in parts
                )
                return "(" + s + ")" if prec >= 3 else s
            case Or(parts):
                s = " | ".join(
                    "(" + go(p, env, 0) + ")" if isinstance(p, Implies) else go(p, env, 1)
                    for p in parts
                )
                return "(" + s + ")" if prec >= 2 else s
            case Implies(a, b):
                lhs = go(a, env, 1)
                if isinstance(a, Implies):
                    lhs = "(" + lhs + ")"
                s = lhs + " => " + go(b, env, 0)
                return "(" + s + ")" if prec >= 1 else s
            case ForAll(b) | Exists(b) | Lambda(b):
                mark = {ForAll: "!", Exists: "?", Lambda: "^"}[type(node)]
                name = binder_name()
                return f"{mark}[{name}]:(" + go(b, env + [name], 0) + ")"
        raise FormulaError(f"unknown node {node!r}")

    return go(f, [], 0)
