"""The mutable world model: a CRP-counted axiom multiset plus the
deterministic-constraint machinery.

Consistency is checked by grounded closure over the known constants:
facts are propagated through universally-quantified rules and closed
conditionals to a least fixed point, then the hard constraints are
evaluated (member/non-member clashes, set sizes, name shapes, constant
distinctness, self-arguments, numeric evaluation).  This deliberately is
not full HOL satisfiability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .hol import (
    And,
    Apply,
    Atom,
    Const,
    Eq,
    Exists,
    Falsum,
    ForAll,
    Formula,
    Implies,
    Lambda,
    Not,
    Num,
    Or,
    Str,
    SymbolTable,
    Var,
    canonical_key,
    free_constants,
    is_closed,
    print_formula,
    substitute,
    walk,
)

ARG_FN_NAMES = ("arg1", "arg2", "arg3")
NAME_FN = "name"
SIZE_FN = "size"
LT_PRED = "lt"


class ConstraintViolation(Exception):
    """Raised by add_axiom when a hard constraint would be violated."""

    def __init__(self, constraint: str, detail: str = ""):
        super().__init__(f"{constraint}: {detail}" if detail else constraint)
        self.constraint = constraint


class MissingAxiomError(Exception):
    pass


@dataclass
class AxiomEntry:
    formula: Formula      # first-drawn representative
    count: int
    first_seq: int


@dataclass
class SetRecord:
    expr: Formula                      # Lambda over the member variable
    declared_size: Optional[int] = None
    provable_members: set = field(default_factory=set)
    provable_nonmembers: set = field(default_factory=set)
    subset_of: set = field(default_factory=set)      # canonical keys of supersets
    superset_of: set = field(default_factory=set)    # canonical keys of subsets


def term_key(t: Formula):
    """Hashable key of a ground term, or None when not ground."""
    match t:
        case Const(s):
            return ("c", s)
        case Num(v):
            return ("n", v)
        case Str(v):
            return ("s", v)
        case Apply(Const(f), args):
            keys = tuple(term_key(a) for a in args)
            if any(k is None for k in keys):
                return None
            return ("@", f, keys)
        case _:
            return None


def _ground_atom_key(f: Formula):
    if not isinstance(f, Atom):
        return None
    keys = tuple(term_key(a) for a in f.args)
    if any(k is None for k in keys):
        return None
    return (f.pred, keys)


class _Closure:
    """Grounded fact closure for one axiom snapshot."""

    def __init__(self, theory: "Theory"):
        self.theory = theory
        self.symbols = theory.symbols
        self.pos: set = set()
        self.neg: set = set()
        self.eq: dict = {}
        self.neq: set = set()
        self.sizes: dict = {}          # set canonical key -> dict size -> Lambda expr
        self.empty_sets: list = []     # Lambda bodies asserted empty via ~exists
        self.rules: list = []          # (Lambda ante conj template, consequent template)
        self.ground_rules: list = []
        self.asserted_lt: list = []    # (sign, Atom)
        self.violation: Optional[str] = None
        self._lt_sym = self.symbols.lookup(LT_PRED)
        self._name_sym = self.symbols.lookup(NAME_FN)
        self._size_sym = self.symbols.lookup(SIZE_FN)
        self._arg_syms = {
            self.symbols.lookup(n) for n in ARG_FN_NAMES if self.symbols.lookup(n) is not None
        }
        self._build()

    # -- ingestion ----------------------------------------------------------

    def _fail(self, constraint: str):
        if self.violation is None:
            self.violation = constraint

    def _add_eq_fact(self, lhs: Formula, rhs: Formula):
        lk = term_key(lhs)
        rk = term_key(rhs)
        if lk is None or rk is None:
            return
        if lk[0] == "@":
            fn = lk[1]
            if fn == self._name_sym:
                if rk[0] != "s":
                    self._fail("name-not-string")
                if lk[2] and lk[2][0][0] != "c":
                    self._fail("name-arg-not-entity")
            if fn in self._arg_syms and len(lk[2]) == 1 and rk == lk[2][0]:
                self._fail("self-argument")
            self.eq.setdefault((fn, lk[2]), set()).add(rk)
        elif lk[0] == "c" and rk[0] == "c":
            if lk[1] != rk[1]:
                self._fail("constants-distinct")
        elif lk[0] in ("n", "s") and rk[0] == lk[0]:
            if lk[1] != rk[1]:
                self._fail("literal-equality-false")
        elif lk != rk:
            self._fail("literal-equality-false")

    def _ingest(self, f: Formula):
        match f:
            case Atom():
                key = _ground_atom_key(f)
                if key is not None:
                    self.pos.add(key)
                    if f.pred == self._lt_sym:
                        self.asserted_lt.append((True, f))
            case Not(Atom() as a):
                key = _ground_atom_key(a)
                if key is not None:
                    self.neg.add(key)
                    if a.pred == self._lt_sym:
                        self.asserted_lt.append((False, a))
            case Eq(Apply(Const(fn), (Lambda() as lam,)), Num(nv)) if fn == self._size_sym:
                if nv < 0:
                    self._fail("negative-set-size")
                key = canonical_key(lam)
                self.sizes.setdefault(key, {})[nv] = lam
                if len(self.sizes[key]) > 1:
                    self._fail("set-size-clash")
            case Eq(lhs, rhs):
                self._add_eq_fact(lhs, rhs)
            case Not(Eq(lhs, rhs)):
                lk, rk = term_key(lhs), term_key(rhs)
                if lk is not None and rk is not None:
                    if lk == rk:
                        self._fail("negated-reflexive-equality")
                    self.neq.add((lk, rk))
                    self.neq.add((rk, lk))
            case Not(Exists(body)):
                self.empty_sets.append(Lambda(body))
            case ForAll(Implies(ante, cons)):
                self.rules.append((ante, cons))
            case Implies() if is_closed(f):
                self.ground_rules.append(f)
            case Falsum():
                self._fail("falsum-axiom")
            case _:
                pass  # richer shapes are stored but contribute no propagation

    def _build(self):
        for entry in self.theory.axiom_entries():
            self._ingest(entry.formula)
        self._propagate()
        if self.violation is None:
            self._check()

    # -- evaluation ---------------------------------------------------------

    def resolve_number(self, t: Formula) -> Optional[int]:
        if isinstance(t, Num):
            return t.value
        key = term_key(t)
        if key is None or key[0] != "@":
            return None
        values = [v for v in self.eq.get((key[1], key[2]), ()) if v[0] == "n"]
        if len(values) == 1:
            return values[0][1]
        return None

    def eval_lt(self, a: Atom) -> Optional[bool]:
        if len(a.args) != 2:
            return None
        x = self.resolve_number(a.args[0])
        y = self.resolve_number(a.args[1])
        if x is None or y is None:
            return None
        return x < y

    def eval(self, f: Formula, depth: int = 0) -> Optional[bool]:
        """Three-valued provability over the known constants (open world)."""
        if depth > 16:
            return None
        match f:
            case Atom():
                key = _ground_atom_key(f)
                if key is not None:
                    if key in self.pos:
                        return True
                    if key in self.neg:
                        return False
                if f.pred == self._lt_sym:
                    return self.eval_lt(f)
                return None
            case Not(b):
                v = self.eval(b, depth + 1)
                return None if v is None else (not v)
            case And(parts):
                out: Optional[bool] = True
                for part in parts:
                    v = self.eval(part, depth + 1)
                    if v is False:
                        return False
                    if v is None:
                        out = None
                return out
            case Or(parts):
                out = False
                for part in parts:
                    v = self.eval(part, depth + 1)
                    if v is True:
                        return True
                    if v is None:
                        out = None
                return out
            case Implies(a, b):
                va = self.eval(a, depth + 1)
                vb = self.eval(b, depth + 1)
                if va is False or vb is True:
                    return True
                if va is True:
                    return vb
                return None
            case Eq(lhs, rhs):
                return self._eval_eq(lhs, rhs)
            case Exists(body):
                witnessed = False
                for c in self.theory.known_constants():
                    v = self.eval(substitute(body, Const(c)), depth + 1)
                    if v is True:
                        witnessed = True
                        break
                return True if witnessed else None
            case Falsum():
                return False
            case _:
                return None

    def _eval_eq(self, lhs: Formula, rhs: Formula) -> Optional[bool]:
        lk, rk = term_key(lhs), term_key(rhs)
        if lk is None or rk is None:
            return None
        if (lk, rk) in self.neq:
            return False
        if lk == rk:
            return True
        if lk[0] == "@":
            values = self.eq.get((lk[1], lk[2]), set())
            if rk in values:
                return True
            if rk[0] == "n" and any(v[0] == "n" for v in values):
                return False  # numeric-valued functions are single-valued
            return None
        if lk[0] == "c" and rk[0] == "c":
            return False  # all constants are distinct entities
        if lk[0] == rk[0] and lk[0] in ("n", "s"):
            return False
        if rk[0] == "@":
            return self._eval_eq(rhs, lhs)
        return None

    # -- propagation and constraint checks -----------------------------------

    def _assert_fact(self, f: Formula) -> bool:
        """Record a derived ground consequence; True when something new."""
        match f:
            case Atom():
                key = _ground_atom_key(f)
                if key is not None and key not in self.pos:
                    self.pos.add(key)
                    return True
            case Not(Atom() as a):
                key = _ground_atom_key(a)
                if key is not None and key not in self.neg:
                    self.neg.add(key)
                    return True
            case And(parts):
                changed = False
                for part in parts:
                    changed |= self._assert_fact(part)
                return changed
            case Eq(lhs, rhs):
                lk = term_key(lhs)
                rk = term_key(rhs)
                if lk is not None and rk is not None and lk[0] == "@":
                    bucket = self.eq.setdefault((lk[1], lk[2]), set())
                    if rk not in bucket:
                        bucket.add(rk)
                        return True
            case Implies():
                if f not in self.ground_rules:
                    self.ground_rules.append(f)
                    return True
            case _:
                pass
        return False

    def _propagate(self):
        constants = self.theory.known_constants()
        for _ in range(64):
            changed = False
            for ante, cons in self.rules:
                for c in constants:
                    grounded_ante = substitute(ante, Const(c))
                    if self.eval(grounded_ante) is True:
                        grounded_cons = substitute(cons, Const(c))
                        changed |= self._assert_fact(grounded_cons)
            for rule in list(self.ground_rules):
                if self.eval(rule.antecedent) is True:
                    changed |= self._assert_fact(rule.consequent)
            if not changed:
                return
        self._fail("closure-diverged")

    def members(self, lam: Formula) -> set:
        out = set()
        for c in self.theory.known_constants():
            if self.eval(substitute(lam.body, Const(c))) is True:
                out.add((c,))
        return out

    def nonmembers(self, lam: Formula) -> set:
        out = set()
        for c in self.theory.known_constants():
            if self.eval(substitute(lam.body, Const(c))) is False:
                out.add((c,))
        return out

    def _check(self):
        clash = self.pos & self.neg
        if clash:
            self._fail("membership-clash")
            return
        for sign, atom in self.asserted_lt:
            v = self.eval_lt(atom)
            if v is not None and v != sign:
                self._fail("arithmetic-clash")
                return
        for (fn, args), values in self.eq.items():
            numerics = {v for v in values if v[0] == "n"}
            if len(numerics) > 1:
                self._fail("measure-clash")
                return
            for v in values:
                if ((("@", fn, args)), v) in self.neq:
                    self._fail("negated-equality-clash")
                    return
        for lam in self.empty_sets:
            if self.eval(Exists(lam.body)) is True:
                self._fail("nonempty-empty-set")
                return
        for key, by_size in self.sizes.items():
            for size, lam in by_size.items():
                if len(self.members(lam)) > size:
                    self._fail("set-size-exceeded")
                    return


class Theory:
    """Axiom multiset with CRP draw counts and derived set records."""

    def __init__(self, symbols: Optional[SymbolTable] = None):
        self.symbols = symbols if symbols is not None else SymbolTable()
        self._axioms: dict = {}
        self._seq = 0
        self._closure_cache: Optional[_Closure] = None

    # -- basic bookkeeping ----------------------------------------------------

    def axiom_entries(self) -> list:
        return sorted(self._axioms.values(), key=lambda e: e.first_seq)

    def axiom_count(self) -> int:
        return sum(e.count for e in self._axioms.values())

    def distinct_axioms(self) -> int:
        return len(self._axioms)

    def count_of(self, f: Formula) -> int:
        entry = self._axioms.get(canonical_key(f))
        return entry.count if entry else 0

    def has_axiom(self, f: Formula) -> bool:
        return canonical_key(f) in self._axioms

    def entry_for(self, f: Formula) -> Optional[AxiomEntry]:
        return self._axioms.get(canonical_key(f))

    def _invalidate(self):
        self._closure_cache = None
        self.__dict__.pop("_known_constants", None)
        self.__dict__.pop("_known_numbers", None)
        self.__dict__.pop("_known_strings", None)

    def add_axiom(self, f: Formula, check: bool = True):
        """Register one CRP draw of f; rejects on constraint violation."""
        if not is_closed(f):
            raise ConstraintViolation("open-axiom", "axioms must be closed formulas")
        key = canonical_key(f)
        entry = self._axioms.get(key)
        if entry is not None:
            entry.count += 1
            return entry
        entry = AxiomEntry(f, 1, self._seq)
        self._axioms[key] = entry
        self._seq += 1
        self._invalidate()
        if check:
            violation = self.violation()
            if violation is not None:
                del self._axioms[key]
                self._seq -= 1
                self._invalidate()
                raise ConstraintViolation(violation, print_formula(f, self.symbols))
        return entry

    def remove_axiom(self, f: Formula):
        key = canonical_key(f)
        entry = self._axioms.get(key)
        if entry is None:
            raise MissingAxiomError(print_formula(f, self.symbols))
        entry.count -= 1
        if entry.count == 0:
            del self._axioms[key]
            self._invalidate()

    def clone(self) -> "Theory":
        """Copy with shared symbols: one table per session, ids never reused."""
        out = Theory(self.symbols)
        out._axioms = {
            k: AxiomEntry(e.formula, e.count, e.first_seq) for k, e in self._axioms.items()
        }
        out._seq = self._seq
        return out

    def signature(self) -> tuple:
        return tuple(
            (canonical_key(e.formula), e.count) for e in self.axiom_entries()
        )

    # -- registries ------------------------------------------------------------

    def known_constants(self) -> list:
        cached = self.__dict__.get("_known_constants")
        if cached is None:
            out: set = set()
            for entry in self._axioms.values():
                out |= free_constants(entry.formula)
            cached = sorted(out)
            self.__dict__["_known_constants"] = cached
        return cached

    def known_numbers(self) -> list:
        cached = self.__dict__.get("_known_numbers")
        if cached is None:
            out = {n.value for e in self._axioms.values() for n in walk(e.formula) if isinstance(n, Num)}
            cached = sorted(out)
            self.__dict__["_known_numbers"] = cached
        return cached

    def known_strings(self) -> list:
        cached = self.__dict__.get("_known_strings")
        if cached is None:
            out = {n.value for e in self._axioms.values() for n in walk(e.formula) if isinstance(n, Str)}
            cached = sorted(out)
            self.__dict__["_known_strings"] = cached
        return cached

    def name_index(self) -> dict:
        """Map constant id -> sorted list of its name strings."""
        name_sym = self.symbols.lookup(NAME_FN)
        out: dict = {}
        for entry in self._axioms.values():
            f = entry.formula
            if (
                isinstance(f, Eq)
                and isinstance(f.lhs, Apply)
                and isinstance(f.lhs.fn, Const)
                and f.lhs.fn.sym == name_sym
                and len(f.lhs.args) == 1
                and isinstance(f.lhs.args[0], Const)
                and isinstance(f.rhs, Str)
            ):
                out.setdefault(f.lhs.args[0].sym, set()).add(f.rhs.value)
        return {c: sorted(names) for c, names in out.items()}

    # -- consistency -------------------------------------------------------------

    def closure(self) -> _Closure:
        if self._closure_cache is None:
            self._closure_cache = _Closure(self)
        return self._closure_cache

    def violation(self) -> Optional[str]:
        return self.closure().violation

    def is_consistent(self) -> bool:
        return self.violation() is None

    # -- set reasoning -------------------------------------------------------------

    def known_sets(self) -> dict:
        """Set records, keyed by the canonical key of the Lambda expression."""
        closure = self.closure()
        records: dict = {}

        def record_for(lam: Formula) -> SetRecord:
            key = canonical_key(lam)
            if key not in records:
                records[key] = SetRecord(expr=lam)
            return records[key]

        for key, by_size in closure.sizes.items():
            for size, lam in by_size.items():
                rec = record_for(lam)
                rec.declared_size = size
        for lam in closure.empty_sets:
            rec = record_for(lam)
            if rec.declared_size is None:
                rec.declared_size = 0
        for ante, cons in closure.rules:
            sub_lam = Lambda(ante)
            if isinstance(cons, Atom):
                super_lam = Lambda(cons)
                sub = record_for(sub_lam)
                sup = record_for(super_lam)
                sub.subset_of.add(canonical_key(super_lam))
                sup.superset_of.add(canonical_key(sub_lam))
        for rec in records.values():
            rec.provable_members = closure.members(rec.expr)
            rec.provable_nonmembers = closure.nonmembers(rec.expr)
        return records

    def provable_members(self, set_expr: Formula) -> set:
        if not isinstance(set_expr, Lambda):
            raise ValueError("set expressions are Lambda formulas")
        return self.closure().members(set_expr)

    def provable_nonmembers(self, set_expr: Formula) -> set:
        if not isinstance(set_expr, Lambda):
            raise ValueError("set expressions are Lambda formulas")
        return self.closure().nonmembers(set_expr)

    def set_size_bounds(self, set_expr: Formula) -> tuple:
        """(min, max) consistent sizes; the set's own declaration excluded.

        max is None when unbounded.  Bounds come from provable members and
        from declared sizes of transitive subsets/supersets.
        """
        records = self.known_sets()
        key = canonical_key(set_expr)
        lo = len(self.provable_members(set_expr))
        hi: Optional[int] = None

        def reach(start: str, attr: str) -> set:
            seen = set()
            frontier = [start]
            while frontier:
                k = frontier.pop()
                rec = records.get(k)
                if rec is None:
                    continue
                for nxt in getattr(rec, attr):
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            return seen

        for sub_key in reach(key, "superset_of"):
            rec = records.get(sub_key)
            if rec and rec.declared_size is not None:
                lo = max(lo, rec.declared_size)
        for sup_key in reach(key, "subset_of"):
            rec = records.get(sup_key)
            if rec and rec.declared_size is not None:
                hi = rec.declared_size if hi is None else min(hi, rec.declared_size)
        return (lo, hi)

    # -- dump -------------------------------------------------------------------

    def dump(self) -> str:
        """One axiom per line, draw count prefixed, in first-draw order."""
        lines = [
            f"{e.count}\t{print_formula(e.formula, self.symbols)}"
            for e in self.axiom_entries()
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def canonical_dump(self) -> str:
        """Order-insensitive dump used for sample-distinctness hashing."""
        items = sorted((canonical_key(e.formula), e.count) for e in self._axioms.values())
        return "\n".join(f"{c}\t{k}" for k, c in items)


def build_theory(formulas: Iterable[Formula], symbols: SymbolTable) -> Theory:
    """Replay a draw sequence with a single consistency check at the end."""
    t = Theory(symbols)
    for f in formulas:
        t.add_axiom(f, check=False)
    violation = t.violation()
    if violation is not None:
        raise ConstraintViolation(violation, "while rebuilding theory")
    return t
