"""Natural-deduction proofs: step lists, tree view, checker, serialization.

A proof is a topologically ordered list of steps whose last step is the
root conclusion; every other step is a premise of exactly one later
step.  Shared sub-derivations are duplicated as separate steps.
Assumption leaves are Ax steps referenced by the discharge markers of a
later NotI/ImpliesI/OrE/ExistsE step; Ax leaves never discharged are
theory axioms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .hol import (
    And,
    Apply,
    Const,
    Eq,
    Exists,
    FALSE,
    Falsum,
    ForAll,
    Formula,
    FormulaError,
    Implies,
    Not,
    Or,
    SymbolTable,
    children,
    free_constants,
    is_closed,
    map_children,
    parse_formula,
    print_formula,
    substitute,
)

CLASSICAL = "classical"
INTUITIONISTIC = "intuitionistic"


class Rule(enum.Enum):
    AX = "Ax"
    AND_I = "AndI"
    AND_E = "AndE"
    OR_I = "OrI"
    OR_E = "OrE"
    NOT_I = "NotI"
    NOT_E = "NotE"
    IMPLIES_I = "ImpliesI"
    IMPLIES_E = "ImpliesE"
    FALSE_E = "FalseE"
    FORALL_E = "ForAllE"
    EXISTS_I = "ExistsI"
    EXISTS_E = "ExistsE"
    EQUALITY_E = "EqualityE"
    NOT_NOT_E = "NotNotE"  # classical double-negation elimination


_RULE_BY_NAME = {r.value: r for r in Rule}


@dataclass(frozen=True)
class StepParams:
    term: Optional[Formula] = None        # ForAllE/ExistsI instantiation, ExistsE witness
    index: Optional[int] = None           # AndE conjunct / OrI disjunct, 0-based
    discharges: tuple = ()                # NotI/ImpliesI/ExistsE: discharged Ax step indices
    branch_discharges: Optional[tuple] = None  # OrE: one tuple per case branch
    path: Optional[tuple] = None          # EqualityE: child-index path into the source formula
    flip: bool = False                    # EqualityE: rewrite right-to-left

    def is_empty(self) -> bool:
        return (
            self.term is None
            and self.index is None
            and not self.discharges
            and self.branch_discharges is None
            and self.path is None
            and not self.flip
        )


EMPTY_PARAMS = StepParams()


@dataclass(frozen=True)
class ProofStep:
    rule: Rule
    premises: tuple
    conclusion: Formula
    params: StepParams = EMPTY_PARAMS


@dataclass
class Proof:
    steps: list
    logic: str = CLASSICAL

    @property
    def conclusion(self) -> Formula:
        return self.steps[-1].conclusion


@dataclass(frozen=True)
class ProofViolation:
    step: int
    reason: str

    def __str__(self) -> str:
        return f"step {self.step}: {self.reason}"


def proof_length(p: Proof) -> int:
    return len(p.steps)


def _descendants(p: Proof) -> list:
    desc = []
    for i, step in enumerate(p.steps):
        here = {i}
        for q in step.premises:
            here |= desc[q]
        desc.append(here)
    return desc


def _subterm_at(f: Formula, path: tuple) -> Formula:
    for idx in path:
        kids = children(f)
        if idx >= len(kids):
            raise FormulaError("path out of range")
        f = kids[idx]
    return f


def _replace_at(f: Formula, path: tuple, new: Formula) -> Formula:
    if not path:
        return new
    kids = children(f)
    idx = path[0]
    if idx >= len(kids):
        raise FormulaError("path out of range")
    replaced = _replace_at(kids[idx], path[1:], new)
    out = [replaced if i == idx else k for i, k in enumerate(kids)]
    counter = [0]

    def sub(_c: Formula) -> Formula:
        v = out[counter[0]]
        counter[0] += 1
        return v

    return map_children(f, sub)


def check_proof(p: Proof) -> Optional[ProofViolation]:
    """Local validity of every step, tree shape, discharges, logic."""
    if not p.steps:
        return ProofViolation(0, "empty proof")
    n = len(p.steps)
    usage = [0] * n
    for i, step in enumerate(p.steps):
        for q in step.premises:
            if not (0 <= q < i):
                return ProofViolation(i, "premise does not precede step")
            usage[q] += 1
    for i in range(n - 1):
        if usage[i] != 1:
            return ProofViolation(i, "step is a premise of %d later steps, want 1" % usage[i])
    if usage[n - 1] != 0:
        return ProofViolation(n - 1, "root used as a premise")

    desc = _descendants(p)
    discharged_by: dict = {}

    def claim_discharges(i: int, targets, within: int, assumption: Formula):
        for d in targets:
            if not (0 <= d < i):
                return ProofViolation(i, "discharge target out of range")
            if p.steps[d].rule is not Rule.AX:
                return ProofViolation(i, "discharge target is not an Ax leaf")
            if d in discharged_by:
                return ProofViolation(i, "leaf discharged twice")
            if d not in desc[within]:
                return ProofViolation(i, "discharged leaf outside premise subtree")
            if p.steps[d].conclusion != assumption:
                return ProofViolation(i, "discharged leaf formula mismatch")
            discharged_by[d] = i
        return None

    for i, step in enumerate(p.steps):
        c = step.conclusion
        prem = [p.steps[q].conclusion for q in step.premises]
        r = step.rule
        if r is Rule.NOT_NOT_E and p.logic == INTUITIONISTIC:
            return ProofViolation(i, "double-negation elimination under intuitionistic logic")
        if r is Rule.AX:
            if step.premises:
                return ProofViolation(i, "Ax step with premises")
        elif r is Rule.AND_I:
            if len(prem) < 2 or not isinstance(c, And) or c.parts != tuple(prem):
                return ProofViolation(i, "AndI conclusion does not match premises")
        elif r is Rule.AND_E:
            if len(prem) != 1 or not isinstance(prem[0], And):
                return ProofViolation(i, "AndE premise is not a conjunction")
            k = step.params.index
            if k is None or not (0 <= k < len(prem[0].parts)):
                return ProofViolation(i, "AndE conjunct index out of range")
            if c != prem[0].parts[k]:
                return ProofViolation(i, "AndE conclusion is not the selected conjunct")
        elif r is Rule.OR_I:
            if len(prem) != 1 or not isinstance(c, Or):
                return ProofViolation(i, "OrI conclusion is not a disjunction")
            k = step.params.index
            if k is None or not (0 <= k < len(c.parts)):
                return ProofViolation(i, "OrI disjunct index out of range")
            if c.parts[k] != prem[0]:
                return ProofViolation(i, "OrI premise is not the selected disjunct")
        elif r is Rule.OR_E:
            if len(prem) < 2 or not isinstance(prem[0], Or):
                return ProofViolation(i, "OrE first premise is not a disjunction")
            cases = prem[1:]
            if len(cases) != len(prem[0].parts):
                return ProofViolation(i, "OrE case count mismatch")
            if any(b != c for b in cases):
                return ProofViolation(i, "OrE case conclusions differ")
            bd = step.params.branch_discharges
            if bd is None or len(bd) != len(cases):
                return ProofViolation(i, "OrE discharge lists missing")
            for targets, disjunct, q in zip(bd, prem[0].parts, step.premises[1:]):
                v = claim_discharges(i, targets, q, disjunct)
                if v:
                    return v
        elif r is Rule.NOT_I:
            if len(prem) != 1 or not isinstance(prem[0], Falsum) or not isinstance(c, Not):
                return ProofViolation(i, "NotI shape mismatch")
            v = claim_discharges(i, step.params.discharges, step.premises[0], c.body)
            if v:
                return v
        elif r is Rule.NOT_E:
            if len(prem) != 2 or not isinstance(c, Falsum):
                return ProofViolation(i, "NotE shape mismatch")
            a, b = prem
            if not ((isinstance(b, Not) and b.body == a) or (isinstance(a, Not) and a.body == b)):
                return ProofViolation(i, "NotE premises are not contradictory")
        elif r is Rule.IMPLIES_I:
            if len(prem) != 1 or not isinstance(c, Implies) or c.consequent != prem[0]:
                return ProofViolation(i, "ImpliesI conclusion mismatch")
            v = claim_discharges(i, step.params.discharges, step.premises[0], c.antecedent)
            if v:
                return v
        elif r is Rule.IMPLIES_E:
            if len(prem) != 2:
                return ProofViolation(i, "ImpliesE needs two premises")
            a, b = prem
            ok = (isinstance(b, Implies) and b.antecedent == a and b.consequent == c) or (
                isinstance(a, Implies) and a.antecedent == b and a.consequent == c
            )
            if not ok:
                return ProofViolation(i, "ImpliesE premises do not yield conclusion")
        elif r is Rule.FALSE_E:
            if len(prem) != 1 or not isinstance(prem[0], Falsum):
                return ProofViolation(i, "FalseE premise is not falsum")
        elif r is Rule.FORALL_E:
            if len(prem) != 1 or not isinstance(prem[0], ForAll):
                return ProofViolation(i, "ForAllE premise is not universal")
            t = step.params.term
            if t is None or not is_closed(t):
                return ProofViolation(i, "ForAllE instantiation term missing or open")
            if c != substitute(prem[0].body, t):
                return ProofViolation(i, "ForAllE conclusion is not the instantiation")
        elif r is Rule.EXISTS_I:
            if len(prem) != 1 or not isinstance(c, Exists):
                return ProofViolation(i, "ExistsI conclusion is not existential")
            t = step.params.term
            if t is None or not is_closed(t):
                return ProofViolation(i, "ExistsI witness term missing or open")
            if prem[0] != substitute(c.body, t):
                return ProofViolation(i, "ExistsI premise is not the witnessed body")
        elif r is Rule.EXISTS_E:
            if len(prem) != 2 or not isinstance(prem[0], Exists):
                return ProofViolation(i, "ExistsE first premise is not existential")
            t = step.params.term
            if not isinstance(t, Const):
                return ProofViolation(i, "ExistsE witness must be a constant")
            if prem[1] != c:
                return ProofViolation(i, "ExistsE case conclusion mismatch")
            assumption = substitute(prem[0].body, t)
            v = claim_discharges(i, step.params.discharges, step.premises[1], assumption)
            if v:
                return v
            # Eigenvariable condition: the witness escapes nothing.
            if t.sym in free_constants(c) or t.sym in free_constants(prem[0]):
                return ProofViolation(i, "ExistsE witness occurs in conclusion or premise")
            for leaf in desc[step.premises[1]]:
                st = p.steps[leaf]
                if st.rule is Rule.AX and leaf not in step.params.discharges:
                    if t.sym in free_constants(st.conclusion):
                        return ProofViolation(i, "ExistsE witness occurs in an open leaf")
        elif r is Rule.EQUALITY_E:
            if len(prem) != 2 or not isinstance(prem[0], Eq):
                return ProofViolation(i, "EqualityE first premise is not an equality")
            src, dst = (prem[0].rhs, prem[0].lhs) if step.params.flip else (
                prem[0].lhs,
                prem[0].rhs,
            )
            path = step.params.path
            if path is None:
                return ProofViolation(i, "EqualityE path missing")
            try:
                at = _subterm_at(prem[1], path)
            except FormulaError:
                return ProofViolation(i, "EqualityE path invalid")
            if at != src:
                return ProofViolation(i, "EqualityE path does not address the equated term")
            if c != _replace_at(prem[1], path, dst):
                return ProofViolation(i, "EqualityE conclusion mismatch")
        elif r is Rule.NOT_NOT_E:
            if (
                len(prem) != 1
                or not isinstance(prem[0], Not)
                or not isinstance(prem[0].body, Not)
                or prem[0].body.body != c
            ):
                return ProofViolation(i, "NotNotE premise is not a double negation")
        else:
            return ProofViolation(i, f"unknown rule {r}")
    return None


def is_valid(p: Proof) -> bool:
    return check_proof(p) is None


def discharged_leaves(p: Proof) -> set:
    out = set()
    for step in p.steps:
        out.update(step.params.discharges)
        if step.params.branch_discharges:
            for targets in step.params.branch_discharges:
                out.update(targets)
    return out


def axioms_of(p: Proof) -> list:
    """Conclusions of undischarged Ax leaves, in step order (a multiset)."""
    discharged = discharged_leaves(p)
    return [
        s.conclusion
        for i, s in enumerate(p.steps)
        if s.rule is Rule.AX and i not in discharged
    ]


# --- tree view -------------------------------------------------------------


@dataclass(eq=False)
class PNode:
    """Mutable tree form of a proof, used for surgery by the sampler.

    Nodes compare by identity; discharge lists hold node references."""

    rule: Rule
    kids: list
    conclusion: Formula
    term: Optional[Formula] = None
    index: Optional[int] = None
    discharges: list = field(default_factory=list)
    branch_discharges: Optional[list] = None
    path: Optional[tuple] = None
    flip: bool = False

    def iter_nodes(self):
        """Post-order traversal."""
        for k in self.kids:
            yield from k.iter_nodes()
        yield self


def ax(conclusion: Formula) -> PNode:
    return PNode(Rule.AX, [], conclusion)


def clone_tree(node: PNode, memo: Optional[dict] = None) -> PNode:
    if memo is None:
        memo = {}
    kids = [clone_tree(k, memo) for k in node.kids]
    out = PNode(
        node.rule,
        kids,
        node.conclusion,
        term=node.term,
        index=node.index,
        path=node.path,
        flip=node.flip,
    )
    memo[id(node)] = out
    out.discharges = [memo[id(d)] for d in node.discharges]
    if node.branch_discharges is not None:
        out.branch_discharges = [[memo[id(d)] for d in grp] for grp in node.branch_discharges]
    return out


def tree_to_proof(root: PNode, logic: str) -> Proof:
    order: list = []
    index: dict = {}

    def emit(node: PNode):
        for k in node.kids:
            emit(k)
        index[id(node)] = len(order)
        order.append(node)

    emit(root)
    steps = []
    for node in order:
        params = StepParams(
            term=node.term,
            index=node.index,
            discharges=tuple(index[id(d)] for d in node.discharges),
            branch_discharges=(
                tuple(tuple(index[id(d)] for d in grp) for grp in node.branch_discharges)
                if node.branch_discharges is not None
                else None
            ),
            path=node.path,
            flip=node.flip,
        )
        steps.append(
            ProofStep(node.rule, tuple(index[id(k)] for k in node.kids), node.conclusion, params)
        )
    return Proof(steps, logic)


def proof_to_tree(p: Proof) -> PNode:
    nodes: list = []
    for step in p.steps:
        node = PNode(
            step.rule,
            [nodes[q] for q in step.premises],
            step.conclusion,
            term=step.params.term,
            index=step.params.index,
            path=step.params.path,
            flip=step.params.flip,
        )
        node.discharges = [nodes[d] for d in step.params.discharges]
        if step.params.branch_discharges is not None:
            node.branch_discharges = [
                [nodes[d] for d in grp] for grp in step.params.branch_discharges
            ]
        nodes.append(node)
    return nodes[-1]


def tree_axioms(root: PNode) -> list:
    """Undischarged Ax leaf conclusions in post-order."""
    discharged = set()
    for node in root.iter_nodes():
        discharged.update(id(d) for d in node.discharges)
        if node.branch_discharges:
            for grp in node.branch_discharges:
                discharged.update(id(d) for d in grp)
    return [
        n.conclusion
        for n in root.iter_nodes()
        if n.rule is Rule.AX and id(n) not in discharged
    ]


# --- serialization ---------------------------------------------------------
#
# One step per line:  <idx>. <rule> [<premise idxs>] [<params>] |- <formula>
# Indices are 1-based.  Params are `key=value` pairs joined by "; ";
# OrE discharge lists are |-separated groups.


def _format_params(params: StepParams, symbols: SymbolTable) -> str:
    parts = []
    if params.term is not None:
        parts.append("term=" + print_formula(params.term, symbols))
    if params.index is not None:
        parts.append(f"index={params.index}")
    if params.discharges:
        parts.append("discharge=" + ",".join(str(d + 1) for d in params.discharges))
    if params.branch_discharges is not None:
        groups = "|".join(
            ",".join(str(d + 1) for d in grp) for grp in params.branch_discharges
        )
        parts.append("cases=" + groups)
    if params.path is not None:
        parts.append("path=" + ".".join(str(x) for x in params.path))
    if params.flip:
        parts.append("flip=1")
    return "; ".join(parts)


def serialize_proof(p: Proof, symbols: SymbolTable) -> str:
    lines = []
    for i, step in enumerate(p.steps):
        prem = ",".join(str(q + 1) for q in step.premises)
        par = _format_params(step.params, symbols)
        lines.append(
            f"{i + 1}. {step.rule.value} [{prem}] [{par}] |- "
            + print_formula(step.conclusion, symbols)
        )
    return "\n".join(lines) + "\n"


class ProofParseError(Exception):
    pass


def parse_proof(text: str, symbols: SymbolTable, logic: str = CLASSICAL) -> Proof:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            head, formula_text = line.split("|-", 1)
            idx_part, rest = head.split(".", 1)
            idx = int(idx_part.strip())
            rest = rest.strip()
            rule_name, rest = rest.split(" ", 1)
            rule = _RULE_BY_NAME[rule_name]
            lb = rest.index("[")
            rb = rest.index("]")
            prem_text = rest[lb + 1 : rb]
            rest2 = rest[rb + 1 :].strip()
            if not (rest2.startswith("[") and rest2.endswith("]")):
                raise ValueError("missing params block")
            params_text = rest2[1:-1]
        except (ValueError, KeyError, IndexError) as exc:
            raise ProofParseError(f"line {lineno}: malformed step ({exc})") from exc
        if idx != len(steps) + 1:
            raise ProofParseError(f"line {lineno}: step index {idx} out of order")
        premises = tuple(int(t) - 1 for t in prem_text.split(",") if t.strip())
        term = None
        index = None
        discharges: tuple = ()
        branch_discharges = None
        path = None
        flip = False
        for chunk in params_text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            key, _, value = chunk.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "term":
                term = parse_formula(value, symbols)
            elif key == "index":
                index = int(value)
            elif key == "discharge":
                discharges = tuple(int(t) - 1 for t in value.split(",") if t.strip())
            elif key == "cases":
                branch_discharges = tuple(
                    tuple(int(t) - 1 for t in grp.split(",") if t.strip())
                    for grp in value.split("|")
                )
            elif key == "path":
                path = tuple(int(t) for t in value.split(".") if t.strip())
            elif key == "flip":
                flip = value == "1"
            else:
                raise ProofParseError(f"line {lineno}: unknown param {key!r}")
        conclusion = parse_formula(formula_text.strip(), symbols)
        steps.append(
            ProofStep(
                rule,
                premises,
                conclusion,
                StepParams(
                    term=term,
                    index=index,
                    discharges=discharges,
                    branch_discharges=branch_discharges,
                    path=path,
                    flip=flip,
                ),
            )
        )
    if not steps:
        raise ProofParseError("empty proof text")
    return Proof(steps, logic)
