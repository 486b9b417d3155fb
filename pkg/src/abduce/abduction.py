"""Proof initialization by abduction: construct some valid proof of a
target formula, minting new axioms as needed.

Dispatch follows the formula shape: conjunctions prove every conjunct,
disjunctions try shuffled disjuncts, negations route to disproof
construction, classical implications try antecedent-refutation or
consequent proof in shuffled order, existentials try known terms plus a
fresh constant ordered by the swap heuristic, and everything else
becomes an axiom.  Minted axioms are validated immediately; any failed
branch rolls the theory back to its entry state.

`score_construction` replays a finished subtree against a theory and
returns the log-probability of the direct (first-try) construction
trace; the sampler uses it for proposal densities.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .hol import (
    And,
    Apply,
    Atom,
    Const,
    Eq,
    Exists,
    FALSE,
    Falsum,
    ForAll,
    Formula,
    Implies,
    Lambda,
    Not,
    Num,
    Or,
    Str,
    substitute,
    walk,
)
from .proofs import CLASSICAL, INTUITIONISTIC, PNode, Rule, ax
from .theory import ConstraintViolation, Theory, term_key

NEG_INF = float("-inf")
MAX_DEPTH = 64


@dataclass
class AbductionContext:
    theory: Theory
    logic: str = CLASSICAL
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    fresh_budget: int = 8


def candidate_terms(theory: Theory) -> list:
    """Known constants, numbers, and strings as terms, in stable order."""
    out = [Const(c) for c in theory.known_constants()]
    out += [Num(n) for n in theory.known_numbers()]
    out += [Str(s) for s in theory.known_strings()]
    return out


def _axiom_inventory(theory: Theory):
    """Unary atom axioms by constant, and function-value axioms by (fn, constant)."""
    preds: dict = {}
    values: dict = {}
    for entry in theory.axiom_entries():
        f = entry.formula
        if isinstance(f, Atom) and len(f.args) == 1 and isinstance(f.args[0], Const):
            preds.setdefault(f.args[0].sym, set()).add(f.pred)
        elif (
            isinstance(f, Eq)
            and isinstance(f.lhs, Apply)
            and isinstance(f.lhs.fn, Const)
            and len(f.lhs.args) == 1
            and isinstance(f.lhs.args[0], Const)
        ):
            rk = term_key(f.rhs)
            if rk is not None:
                values.setdefault((f.lhs.fn.sym, f.lhs.args[0].sym), set()).add(rk)
    return preds, values


def swap_log_weight(term: Formula, scope: Formula, theory: Theory) -> float:
    """log of exp{n - 2m}: n matching provable atoms, m mismatching axioms.

    Atoms and function-value equalities of the instantiated scope that
    mention the candidate count toward n when provable in the theory;
    axioms about the same constant with a different predicate or a
    different function value count toward m.
    """
    grounded = substitute(scope, term)
    closure = theory.closure()
    cand_key = term_key(term)
    cand_sym = term.sym if isinstance(term, Const) else None
    preds, values = _axiom_inventory(theory)
    n = 0
    m = 0
    for node in walk(grounded):
        if isinstance(node, Atom):
            if not any(term_key(a) == cand_key for a in node.args):
                continue
            if closure.eval(node) is True:
                n += 1
            if cand_sym is not None and len(node.args) == 1:
                others = preds.get(cand_sym, set())
                m += len(others - {node.pred})
        elif isinstance(node, Eq) and isinstance(node.lhs, Apply):
            lhs = node.lhs
            if not (
                isinstance(lhs.fn, Const)
                and len(lhs.args) == 1
                and term_key(lhs.args[0]) == cand_key
            ):
                continue
            if closure.eval(node) is True:
                n += 1
            if cand_sym is not None:
                rk = term_key(node.rhs)
                others = values.get((lhs.fn.sym, cand_sym), set())
                m += len(others - ({rk} if rk is not None else set()))
    return float(n - 2 * m)


def swap_front(candidates: list, scope: Formula, theory: Theory, rng) -> list:
    """Move one candidate to the front, chosen with weight exp{n - 2m}."""
    if not candidates:
        raise ValueError("swap_front requires candidates")
    logs = [swap_log_weight(c, scope, theory) for c in candidates]
    top = max(logs)
    weights = [math.exp(x - top) for x in logs]
    pick = rng.choices(range(len(candidates)), weights=weights, k=1)[0]
    out = list(candidates)
    out.insert(0, out.pop(pick))
    return out


def swap_front_log_prob(candidates: list, chosen: int, scope: Formula, theory: Theory) -> float:
    logs = [swap_log_weight(c, scope, theory) for c in candidates]
    top = max(logs)
    total = sum(math.exp(x - top) for x in logs)
    return (logs[chosen] - top) - math.log(total)


def _negation_partner(parts: tuple, i: int) -> Optional[int]:
    """First j != i whose conjunct is the negation mate of conjunct i."""
    for j, p in enumerate(parts):
        if j == i:
            continue
        if p == Not(parts[i]) or parts[i] == Not(p):
            return j
    return None


class _Abductor:
    def __init__(self, ctx: AbductionContext):
        self.ctx = ctx
        self.theory = ctx.theory
        self.rng = ctx.rng
        self.undo: list = []
        self.fresh_used = 0

    # -- theory bookkeeping --------------------------------------------------

    def mark(self) -> int:
        return len(self.undo)

    def rollback(self, mark: int):
        while len(self.undo) > mark:
            f = self.undo.pop()
            self.theory.remove_axiom(f)

    def mint(self, f: Formula) -> Optional[PNode]:
        try:
            self.theory.add_axiom(f)
        except ConstraintViolation:
            return None
        self.undo.append(f)
        return ax(f)

    # -- proof construction ----------------------------------------------------

    def prove(self, a: Formula, depth: int) -> Optional[PNode]:
        if depth > MAX_DEPTH:
            return None
        match a:
            case And(parts):
                mark = self.mark()
                kids = []
                for part in parts:
                    k = self.prove(part, depth + 1)
                    if k is None:
                        self.rollback(mark)
                        return None
                    kids.append(k)
                return PNode(Rule.AND_I, kids, a)
            case Or(parts):
                order = list(range(len(parts)))
                self.rng.shuffle(order)
                for i in order:
                    mark = self.mark()
                    k = self.prove(parts[i], depth + 1)
                    if k is not None:
                        return PNode(Rule.OR_I, [k], a, index=i)
                    self.rollback(mark)
                return None
            case Not(b):
                return self.disprove(b, depth + 1)
            case Implies(ante, cons):
                if self.ctx.logic == INTUITIONISTIC:
                    return self.mint(a)
                order = [1, 2]
                self.rng.shuffle(order)
                for branch in order:
                    mark = self.mark()
                    if branch == 1:
                        d = self.disprove(ante, depth + 1)
                        if d is None:
                            self.rollback(mark)
                            continue
                        assume = ax(ante)
                        bottom = PNode(Rule.NOT_E, [assume, d], FALSE)
                        lifted = PNode(Rule.FALSE_E, [bottom], cons)
                        node = PNode(Rule.IMPLIES_I, [lifted], a)
                        node.discharges = [assume]
                        return node
                    k = self.prove(cons, depth + 1)
                    if k is None:
                        self.rollback(mark)
                        continue
                    return PNode(Rule.IMPLIES_I, [k], a)
                return None
            case Exists(body):
                cands = candidate_terms(self.theory)
                fresh: Optional[Formula] = None
                if self.fresh_used < self.ctx.fresh_budget:
                    fresh = Const(self.theory.symbols.fresh_constant())
                    self.fresh_used += 1
                    cands.append(fresh)
                if not cands:
                    return None
                self.rng.shuffle(cands)
                cands = swap_front(cands, body, self.theory, self.rng)
                for cand in cands:
                    mark = self.mark()
                    k = self.prove(substitute(body, cand), depth + 1)
                    if k is not None:
                        return PNode(Rule.EXISTS_I, [k], a, term=cand)
                    self.rollback(mark)
                return None
            case ForAll(_) | Eq(_, _) | Atom(_, _):
                return self.mint(a)
            case _:
                return None

    def disprove(self, a: Formula, depth: int) -> Optional[PNode]:
        """Construct a proof of Not(a)."""
        if depth > MAX_DEPTH:
            return None
        goal = Not(a)
        match a:
            case Atom(_, _) | Eq(_, _) | ForAll(_) | Exists(_):
                return self.mint(goal)
            case Not(b):
                k = self.prove(b, depth + 1)
                if k is None:
                    return None
                assume = ax(a)
                bottom = PNode(Rule.NOT_E, [k, assume], FALSE)
                node = PNode(Rule.NOT_I, [bottom], goal)
                node.discharges = [assume]
                return node
            case And(parts):
                order = list(range(len(parts)))
                self.rng.shuffle(order)
                for i in order:
                    j = _negation_partner(parts, i)
                    if j is not None:
                        pos, neg = (i, j) if parts[j] == Not(parts[i]) else (j, i)
                        assume_pos = ax(a)
                        take_pos = PNode(Rule.AND_E, [assume_pos], parts[pos], index=pos)
                        assume_neg = ax(a)
                        take_neg = PNode(Rule.AND_E, [assume_neg], parts[neg], index=neg)
                        bottom = PNode(Rule.NOT_E, [take_pos, take_neg], FALSE)
                        node = PNode(Rule.NOT_I, [bottom], goal)
                        node.discharges = [assume_pos, assume_neg]
                        return node
                    mark = self.mark()
                    d = self.disprove(parts[i], depth + 1)
                    if d is not None:
                        assume = ax(a)
                        take = PNode(Rule.AND_E, [assume], parts[i], index=i)
                        bottom = PNode(Rule.NOT_E, [take, d], FALSE)
                        node = PNode(Rule.NOT_I, [bottom], goal)
                        node.discharges = [assume]
                        return node
                    self.rollback(mark)
                return None
            case Or(parts):
                mark = self.mark()
                refuters = []
                for part in parts:
                    d = self.disprove(part, depth + 1)
                    if d is None:
                        self.rollback(mark)
                        return None
                    refuters.append(d)
                assume_or = ax(a)
                branches = []
                case_assumes = []
                for part, d in zip(parts, refuters):
                    assume_part = ax(part)
                    case_assumes.append(assume_part)
                    branches.append(PNode(Rule.NOT_E, [assume_part, d], FALSE))
                pooled = PNode(Rule.OR_E, [assume_or] + branches, FALSE)
                pooled.branch_discharges = [[leaf] for leaf in case_assumes]
                node = PNode(Rule.NOT_I, [pooled], goal)
                node.discharges = [assume_or]
                return node
            case Implies(ante, cons):
                if self.ctx.logic == INTUITIONISTIC:
                    return self.mint(goal)
                mark = self.mark()
                pa = self.prove(ante, depth + 1)
                if pa is None:
                    return None
                db = self.disprove(cons, depth + 1)
                if db is None:
                    self.rollback(mark)
                    return None
                assume = ax(a)
                detached = PNode(Rule.IMPLIES_E, [pa, assume], cons)
                bottom = PNode(Rule.NOT_E, [detached, db], FALSE)
                node = PNode(Rule.NOT_I, [bottom], goal)
                node.discharges = [assume]
                return node
            case Falsum():
                assume = ax(a)
                node = PNode(Rule.NOT_I, [assume], goal)
                node.discharges = [assume]
                return node
            case _:
                return None


def init_proof(a: Formula, ctx: AbductionContext) -> Optional[PNode]:
    """Some valid proof of `a` with its axioms committed to ctx.theory,
    or None with the theory rolled back to its entry state."""
    worker = _Abductor(ctx)
    node = worker.prove(a, 0)
    if node is None:
        worker.rollback(0)
    return node


def init_disproof(a: Formula, ctx: AbductionContext) -> Optional[PNode]:
    """Some valid proof of Not(a); mirrors init_proof."""
    worker = _Abductor(ctx)
    node = worker.disprove(a, 0)
    if node is None:
        worker.rollback(0)
    return node


# -- canonical trace scoring --------------------------------------------------


class _Scorer:
    """Replays a finished subtree, accumulating direct-trace log-probability.

    The working theory is mutated exactly as the construction would have
    mutated it, so swap weights and candidate sets match the forward run.
    """

    def __init__(self, theory: Theory, logic: str):
        self.theory = theory
        self.logic = logic

    def mint(self, node: PNode, expected: Formula) -> float:
        if node.rule is not Rule.AX or node.conclusion != expected:
            return NEG_INF
        try:
            self.theory.add_axiom(expected)
        except ConstraintViolation:
            return NEG_INF
        return 0.0

    def prove(self, a: Formula, node: PNode) -> float:
        match a:
            case And(parts):
                if node.rule is not Rule.AND_I or len(node.kids) != len(parts):
                    return NEG_INF
                out = 0.0
                for part, kid in zip(parts, node.kids):
                    out += self.prove(part, kid)
                    if out == NEG_INF:
                        return NEG_INF
                return out
            case Or(parts):
                if node.rule is not Rule.OR_I or node.index is None:
                    return NEG_INF
                return -math.log(len(parts)) + self.prove(parts[node.index], node.kids[0])
            case Not(b):
                return self.disprove(b, node)
            case Implies(ante, cons):
                if self.logic == INTUITIONISTIC:
                    return self.mint(node, a)
                if node.rule is not Rule.IMPLIES_I:
                    return NEG_INF
                half = -math.log(2)
                kid = node.kids[0]
                if kid.rule is Rule.FALSE_E:
                    bottom = kid.kids[0]
                    if bottom.rule is not Rule.NOT_E or len(bottom.kids) != 2:
                        return NEG_INF
                    assume, refuter = bottom.kids
                    if assume.rule is not Rule.AX or assume.conclusion != ante:
                        return NEG_INF
                    return half + self.disprove(ante, refuter)
                return half + self.prove(cons, kid)
            case Exists(body):
                if node.rule is not Rule.EXISTS_I or node.term is None:
                    return NEG_INF
                cands = candidate_terms(self.theory)
                chosen = None
                term = node.term
                if isinstance(term, Const) and term.sym not in self.theory.known_constants():
                    cands.append(term)  # the fresh-constant slot
                    chosen = len(cands) - 1
                else:
                    for i, c in enumerate(cands):
                        if c == term:
                            chosen = i
                            break
                    cands.append(Const(-1))  # stand-in for the untaken fresh slot
                if chosen is None:
                    return NEG_INF
                pick = swap_front_log_prob(cands, chosen, body, self.theory)
                return pick + self.prove(substitute(body, term), node.kids[0])
            case ForAll(_) | Eq(_, _) | Atom(_, _):
                return self.mint(node, a)
            case _:
                return NEG_INF

    def disprove(self, a: Formula, node: PNode) -> float:
        goal = Not(a)
        match a:
            case Atom(_, _) | Eq(_, _) | ForAll(_) | Exists(_):
                return self.mint(node, goal)
            case Not(b):
                if node.rule is not Rule.NOT_I or node.kids[0].rule is not Rule.NOT_E:
                    return NEG_INF
                inner, assume = node.kids[0].kids
                if assume.rule is not Rule.AX or assume.conclusion != a:
                    return NEG_INF
                return self.prove(b, inner)
            case And(parts):
                if node.rule is not Rule.NOT_I or node.kids[0].rule is not Rule.NOT_E:
                    return NEG_INF
                left, right = node.kids[0].kids
                n = len(parts)
                if left.rule is Rule.AND_E and right.rule is Rule.AND_E:
                    pos, neg = left.index, right.index
                    if pos is None or neg is None or parts[neg] != Not(parts[pos]):
                        return NEG_INF
                    matches = 0
                    for i in range(n):
                        j = _negation_partner(parts, i)
                        if j is None:
                            continue
                        cpos, cneg = (i, j) if parts[j] == Not(parts[i]) else (j, i)
                        if (cpos, cneg) == (pos, neg):
                            matches += 1
                    if matches == 0:
                        return NEG_INF
                    return math.log(matches / n)
                if left.rule is Rule.AND_E:
                    i = left.index
                    if i is None or _negation_partner(parts, i) is not None:
                        return NEG_INF
                    return -math.log(n) + self.disprove(parts[i], right)
                return NEG_INF
            case Or(parts):
                if node.rule is not Rule.NOT_I or node.kids[0].rule is not Rule.OR_E:
                    return NEG_INF
                pooled = node.kids[0]
                out = 0.0
                for part, branch in zip(parts, pooled.kids[1:]):
                    if branch.rule is not Rule.NOT_E or len(branch.kids) != 2:
                        return NEG_INF
                    out += self.disprove(part, branch.kids[1])
                    if out == NEG_INF:
                        return NEG_INF
                return out
            case Implies(ante, cons):
                if self.logic == INTUITIONISTIC:
                    return self.mint(node, goal)
                if node.rule is not Rule.NOT_I or node.kids[0].rule is not Rule.NOT_E:
                    return NEG_INF
                detached, refuter = node.kids[0].kids
                if detached.rule is not Rule.IMPLIES_E:
                    return NEG_INF
                out = self.prove(ante, detached.kids[0])
                if out == NEG_INF:
                    return NEG_INF
                tail = self.disprove(cons, refuter)
                return out + tail
            case Falsum():
                return 0.0 if node.rule is Rule.NOT_I else NEG_INF
            case _:
                return NEG_INF


def score_construction(a: Formula, node: PNode, theory: Theory, logic: str) -> float:
    """Log-probability of init_proof producing `node` for `a` on its first
    attempt, with `theory` mutated by the replayed axiom draws."""
    return _Scorer(theory, logic).prove(a, node)
