"""Metropolis-Hastings over (theory, proofs).

The state is one posterior sample: a proof tree per observed logical
form plus the theory derived from their undischarged axiom leaves.  Six
proposal kinds mutate the state: grounded-atom generalization to a
universal, its inverse, set-size resampling, proof-node re-initialization,
and event merge/split.  Sites are selected with probability 1/N (alpha/N
for merges, beta/N for splits) where N = |A| + |U| + |C| + |P| +
alpha |M| + beta |S|.  Forward and reverse probabilities are computed
exactly; proposals whose exact inverse is not representable report a
-inf reverse weight and therefore self-reject.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .abduction import (
    AbductionContext,
    init_proof,
    score_construction,
)
from .hol import (
    And,
    Apply,
    Atom,
    Const,
    Eq,
    Exists,
    Formula,
    ForAll,
    Implies,
    Lambda,
    Not,
    Num,
    SymbolTable,
    Var,
    canonical_key,
    free_constants,
    formula_key,
    replace_constants,
    substitute,
)
from .priors import NEG_INF, PriorConfig, log_geometric, log_joint
from .proofs import (
    CLASSICAL,
    PNode,
    Rule,
    ax,
    check_proof,
    clone_tree,
    serialize_proof,
    tree_axioms,
    tree_to_proof,
)
from .theory import ConstraintViolation, Theory, build_theory

LOG_HALF = -math.log(2.0)

ATOM_TO_UNIVERSAL = "atom-to-universal"
UNIVERSAL_TO_ATOM = "universal-to-atom"
RESAMPLE_SET_SIZE = "resample-set-size"
RESAMPLE_PROOF_NODE = "resample-proof-node"
MERGE_EVENTS = "merge-events"
SPLIT_EVENTS = "split-events"


class InferenceError(Exception):
    pass


@dataclass(frozen=True)
class ProposalWeights:
    merge_alpha: float = 2.0
    split_beta: float = 0.001


@dataclass
class MHState:
    symbols: SymbolTable
    logic: str
    observed: list = field(default_factory=list)   # logical forms x_i
    trees: list = field(default_factory=list)      # proof trees, one per x_i
    theory: Theory = None
    _log_joint: Optional[float] = None
    _key: Optional[str] = None

    @classmethod
    def empty(cls, symbols: SymbolTable, logic: str = CLASSICAL) -> "MHState":
        return cls(symbols=symbols, logic=logic, theory=Theory(symbols))

    def clone(self) -> "MHState":
        theory = self.theory.clone()
        out = MHState(
            symbols=theory.symbols,
            logic=self.logic,
            observed=list(self.observed),
            trees=[clone_tree(t) for t in self.trees],
            theory=theory,
        )
        out._log_joint = self._log_joint
        out._key = self._key
        return out

    def proofs(self) -> list:
        return [tree_to_proof(t, self.logic) for t in self.trees]

    def log_joint(self, cfg: PriorConfig) -> float:
        if self._log_joint is None:
            self._log_joint = log_joint(self.theory, self.proofs(), cfg)
        return self._log_joint

    def invalidate(self):
        self._log_joint = None
        self._key = None

    def key(self) -> str:
        if self._key is None:
            blob = self.theory.canonical_dump() + "\n===\n"
            blob += "\n---\n".join(serialize_proof(p, self.symbols) for p in self.proofs())
            self._key = hashlib.sha1(blob.encode("utf-8")).hexdigest()
        return self._key

    def axiom_draws(self) -> list:
        out = []
        for tree in self.trees:
            out.extend(tree_axioms(tree))
        return out


def rebuild_state(old: MHState, trees: list) -> MHState:
    """Fresh state from mutated proof trees; theory derived from leaves."""
    symbols = old.theory.symbols
    draws = []
    for tree in trees:
        draws.extend(tree_axioms(tree))
    theory = build_theory(draws, symbols)
    return MHState(
        symbols=symbols,
        logic=old.logic,
        observed=list(old.observed),
        trees=trees,
        theory=theory,
    )


def validate_state(state: MHState, cfg: Optional[PriorConfig] = None) -> Optional[str]:
    """Invariant check used by tests and the fuzzer; None when healthy."""
    if len(state.observed) != len(state.trees):
        return "observed/proof count mismatch"
    for i, (x, tree) in enumerate(zip(state.observed, state.trees)):
        if tree.conclusion != x:
            return f"proof {i} conclusion differs from observed form"
        violation = check_proof(tree_to_proof(tree, state.logic))
        if violation is not None:
            return f"proof {i}: {violation}"
    counts: dict = {}
    for f in state.axiom_draws():
        key = canonical_key(f)
        counts[key] = counts.get(key, 0) + 1
    theory_counts = {
        canonical_key(e.formula): e.count for e in state.theory.axiom_entries()
    }
    if counts != theory_counts:
        return "theory draw counts out of sync with proof leaves"
    if not state.theory.is_consistent():
        return f"inconsistent theory: {state.theory.violation()}"
    if cfg is not None and state._log_joint is not None:
        fresh = log_joint(state.theory, state.proofs(), cfg)
        if not math.isclose(fresh, state._log_joint, rel_tol=0, abs_tol=1e-9):
            return "cached log joint stale"
    return None


# --- site enumeration --------------------------------------------------------


def _tree_discharged_ids(root: PNode) -> set:
    out = set()
    for node in root.iter_nodes():
        out.update(id(d) for d in node.discharges)
        if node.branch_discharges:
            for grp in node.branch_discharges:
                out.update(id(d) for d in grp)
    return out


def _undischarged_leaves(root: PNode) -> list:
    discharged = _tree_discharged_ids(root)
    return [
        n for n in root.iter_nodes() if n.rule is Rule.AX and id(n) not in discharged
    ]


def _is_unary_ground_atom(f: Formula) -> bool:
    return isinstance(f, Atom) and len(f.args) == 1 and isinstance(f.args[0], Const)


def _row1_shape(f: Formula):
    """(antecedent preds tuple, consequent pred) for eliminable universals."""
    if not (isinstance(f, ForAll) and isinstance(f.body, Implies)):
        return None
    ante, cons = f.body.antecedent, f.body.consequent
    if not (isinstance(cons, Atom) and cons.args == (Var(0),)):
        return None
    parts = ante.parts if isinstance(ante, And) else (ante,)
    preds = []
    for p in parts:
        if not (isinstance(p, Atom) and p.args == (Var(0),)):
            return None
        preds.append(p.pred)
    return tuple(preds), cons.pred


@dataclass
class _Parent:
    node: Optional[PNode]
    tree_idx: int


def _parent_map(trees: list) -> dict:
    out: dict = {}
    for ti, tree in enumerate(trees):
        out[id(tree)] = _Parent(None, ti)
        stack = [tree]
        while stack:
            node = stack.pop()
            for kid in node.kids:
                out[id(kid)] = _Parent(node, ti)
                stack.append(kid)
    return out


@dataclass
class _UniversalUsage:
    tree_idx: int
    implies_node: PNode   # the ImpliesE combining antecedent and instantiation
    forall_leaf: PNode
    ante_leaves: list


@dataclass
class Sites:
    atoms: list               # A: unary grounded atomic axiom entries
    universals: list          # U: (entry, constant, [usages]) eliminable pairs
    sizes: list               # C: (entry, [(leaf, exists_parent)]) rewritable size axioms
    pnodes: list              # P: (tree_idx, node)
    merges: list              # M: (triple, triple) with a shared event type
    splits: list              # S: (triple, tree_idx)

    def counts(self) -> tuple:
        return (
            len(self.atoms),
            len(self.universals),
            len(self.sizes),
            len(self.pnodes),
            len(self.merges),
            len(self.splits),
        )

    def normalizer(self, w: ProposalWeights) -> float:
        a_, u_, c_, p_, m_, s_ = self.counts()
        return a_ + u_ + c_ + p_ + w.merge_alpha * m_ + w.split_beta * s_


def _size_axiom_parts(f: Formula, theory: Theory):
    size_sym = theory.symbols.lookup("size")
    if (
        isinstance(f, Eq)
        and isinstance(f.lhs, Apply)
        and isinstance(f.lhs.fn, Const)
        and f.lhs.fn.sym == size_sym
        and len(f.lhs.args) == 1
        and isinstance(f.lhs.args[0], Lambda)
        and isinstance(f.rhs, Num)
    ):
        return f.lhs.args[0], f.rhs.value
    return None


def enumerate_sites(state: MHState) -> Sites:
    theory = state.theory
    entries = theory.axiom_entries()
    parents = _parent_map(state.trees)

    atoms = [e for e in entries if _is_unary_ground_atom(e.formula)]
    sizes = []

    # Axiom key -> undischarged leaves, per tree.
    leaves_by_key: dict = {}
    for ti, tree in enumerate(state.trees):
        for leaf in _undischarged_leaves(tree):
            leaves_by_key.setdefault(canonical_key(leaf.conclusion), []).append((ti, leaf))

    for e in entries:
        parts = _size_axiom_parts(e.formula, theory)
        if parts is None:
            continue
        witness_shape = Exists(Eq(e.formula.lhs, Var(0)))
        usable = []
        for ti, leaf in leaves_by_key.get(canonical_key(e.formula), ()):
            par = parents[id(leaf)].node
            if (
                par is not None
                and par.rule is Rule.EXISTS_I
                and par.term == Num(parts[1])
                and len(par.kids) == 1
                and par.conclusion == witness_shape
            ):
                usable.append((leaf, par))
            else:
                usable = None
                break
        if usable:
            sizes.append((e, usable))

    universals = []
    for e in entries:
        shape = _row1_shape(e.formula)
        if shape is None:
            continue
        ante_preds, cons_pred = shape
        by_constant: dict = {}
        bad_constants: set = set()
        for ti, leaf in leaves_by_key.get(canonical_key(e.formula), ()):
            par = parents[id(leaf)].node
            if par is None or par.rule is not Rule.FORALL_E or not isinstance(par.term, Const):
                continue
            c0 = par.term.sym
            gpar = parents[id(par)].node
            usage = None
            if gpar is not None and gpar.rule is Rule.IMPLIES_E and len(gpar.kids) == 2:
                ante_node = gpar.kids[0] if gpar.kids[1] is par else gpar.kids[1]
                ante_leaves = (
                    ante_node.kids
                    if ante_node.rule is Rule.AND_I
                    else [ante_node]
                )
                want = [Atom(pr, (Const(c0),)) for pr in ante_preds]
                good = (
                    len(ante_leaves) == len(want)
                    and all(
                        k.rule is Rule.AX and k.conclusion == wf
                        for k, wf in zip(ante_leaves, want)
                    )
                    and (ante_node.rule is Rule.AX or len(want) > 1)
                )
                if good:
                    usage = _UniversalUsage(ti, gpar, leaf, list(ante_leaves))
            if usage is None:
                bad_constants.add(c0)
            else:
                by_constant.setdefault(c0, []).append(usage)
        for c0 in sorted(by_constant):
            if c0 not in bad_constants:
                universals.append((e, c0, by_constant[c0]))

    pnodes = []
    for ti, tree in enumerate(state.trees):
        for node in tree.iter_nodes():
            if node.rule in (Rule.OR_I, Rule.IMPLIES_I, Rule.EXISTS_I):
                pnodes.append((ti, node))
            elif (
                state.logic == CLASSICAL
                and node.rule is Rule.NOT_I
                and isinstance(node.conclusion, Not)
                and isinstance(node.conclusion.body, And)
            ):
                pnodes.append((ti, node))

    # Event triples from axioms: t(e), arg1(e)=j, arg2(e)=k.
    arg1_syms = theory.symbols.lookup("arg1")
    arg2_syms = theory.symbols.lookup("arg2")
    arg_vals: dict = {}
    types: dict = {}
    for e in entries:
        f = e.formula
        if _is_unary_ground_atom(f):
            types.setdefault(f.args[0].sym, set()).add(f.pred)
        elif (
            isinstance(f, Eq)
            and isinstance(f.lhs, Apply)
            and isinstance(f.lhs.fn, Const)
            and f.lhs.fn.sym in (arg1_syms, arg2_syms)
            and len(f.lhs.args) == 1
            and isinstance(f.lhs.args[0], Const)
            and isinstance(f.rhs, Const)
        ):
            slot = 0 if f.lhs.fn.sym == arg1_syms else 1
            arg_vals.setdefault(f.lhs.args[0].sym, ({}, {}))[slot][f.rhs.sym] = True
    triples = []
    for ev in sorted(arg_vals):
        firsts, seconds = arg_vals[ev]
        if ev not in types or not firsts or not seconds:
            continue
        for j in sorted(firsts):
            for k in sorted(seconds):
                triples.append((ev, j, k))

    merges = []
    for a in triples:
        for b in triples:
            if a[0] < b[0] and types[a[0]] & types[b[0]]:
                merges.append((a, b))

    # Split sites: (triple, proof) where both the chosen proof and the rest
    # retain a full triple after separation.
    refs_by_event: dict = {}
    draws_by_tree: list = []
    for ti, tree in enumerate(state.trees):
        tree_draws: dict = {}
        for leaf in _undischarged_leaves(tree):
            key = canonical_key(leaf.conclusion)
            tree_draws[key] = tree_draws.get(key, 0) + 1
            for c in free_constants(leaf.conclusion):
                refs_by_event.setdefault(c, set()).add(ti)
        draws_by_tree.append(tree_draws)

    splits = []
    for (ev, j, k) in triples:
        if j == k or j == ev or k == ev:
            continue  # degenerate triples have no clean reverse merge
        trees_with_ev = sorted(refs_by_event.get(ev, ()))
        if len(trees_with_ev) < 2:
            continue
        arg1_f = Eq(Apply(Const(arg1_syms), (Const(ev),)), Const(j))
        arg2_f = Eq(Apply(Const(arg2_syms), (Const(ev),)), Const(k))
        arg1_key, arg2_key = canonical_key(arg1_f), canonical_key(arg2_f)
        type_keys = [
            canonical_key(Atom(t, (Const(ev),))) for t in sorted(types.get(ev, ()))
        ]
        total = {}
        for td in draws_by_tree:
            for key, cnt in td.items():
                total[key] = total.get(key, 0) + cnt
        for ti in trees_with_ev:
            td = draws_by_tree[ti]

            def covered(key):
                inside = td.get(key, 0)
                return inside >= 1 and total.get(key, 0) - inside >= 1

            if (
                covered(arg1_key)
                and covered(arg2_key)
                and any(covered(tk) for tk in type_keys)
            ):
                splits.append(((ev, j, k), ti))

    return Sites(atoms, universals, sizes, pnodes, merges, splits)


# --- proposal machinery -------------------------------------------------------


@dataclass
class ProposalOutcome:
    kind: str
    new_state: Optional[MHState]
    log_forward: float
    log_reverse: float
    ok: bool = True


def _abort(kind: str) -> ProposalOutcome:
    return ProposalOutcome(kind, None, NEG_INF, NEG_INF, ok=False)


def _replace_node(trees: list, parents: dict, old: PNode, new: PNode) -> list:
    info = parents[id(old)]
    if info.node is None:
        trees[info.tree_idx] = new
    else:
        info.node.kids = [new if k is old else k for k in info.node.kids]
    return trees


def _subset_log_prob(chosen: int, m: int) -> float:
    """log P(this subset) under independent 1/2 inclusion, empty rejected."""
    if m == 0 or chosen == 0:
        return NEG_INF
    return m * LOG_HALF - math.log1p(-(0.5 ** m))


def _universal_formula(ante_preds, cons_pred) -> Formula:
    parts = tuple(Atom(p, (Var(0),)) for p in ante_preds)
    ante = parts[0] if len(parts) == 1 else And(parts)
    return ForAll(Implies(ante, Atom(cons_pred, (Var(0),))))


def _instantiation_subtree(u_formula: Formula, ante_preds, cons_pred, c0: int) -> PNode:
    leaf_u = ax(u_formula)
    inst = substitute(u_formula.body, Const(c0))
    fe = PNode(Rule.FORALL_E, [leaf_u], inst, term=Const(c0))
    ante_leaves = [ax(Atom(p, (Const(c0),))) for p in ante_preds]
    if len(ante_leaves) == 1:
        ante_node = ante_leaves[0]
    else:
        ante_node = PNode(Rule.AND_I, ante_leaves, And(tuple(l.conclusion for l in ante_leaves)))
    return PNode(Rule.IMPLIES_E, [ante_node, fe], Atom(cons_pred, (Const(c0),)))


def _propose_atom_to_universal(state, sites, entry, w, rng) -> ProposalOutcome:
    kind = ATOM_TO_UNIVERSAL
    theory = state.theory
    psi = entry.formula            # psi(c0)
    c0 = psi.args[0].sym
    others = [
        e
        for e in theory.axiom_entries()
        if _is_unary_ground_atom(e.formula)
        and e.formula.args[0].sym == c0
        and e.formula.pred != psi.pred
    ]
    m = len(others)
    if m == 0:
        return _abort(kind)
    while True:
        chosen = [e for e in others if rng.random() < 0.5]
        if chosen:
            break
    ante_preds = tuple(e.formula.pred for e in chosen)
    u_formula = _universal_formula(ante_preds, psi.pred)

    # Exact reverse requires the universal to have no prior pattern usages
    # at c0 (row 2 would rewrite those too).
    reverse_ok = True
    u_key = canonical_key(u_formula)
    for ue, uc, _usages in sites.universals:
        if canonical_key(ue.formula) == u_key and uc == c0:
            reverse_ok = False

    trees = [clone_tree(t) for t in state.trees]
    parents = _parent_map(trees)
    replaced = 0
    for tree in list(trees):
        for leaf in _undischarged_leaves(tree):
            if leaf.conclusion == psi:
                sub = _instantiation_subtree(u_formula, ante_preds, psi.pred, c0)
                _replace_node(trees, parents, leaf, sub)
                parents = _parent_map(trees)
                replaced += 1
    if replaced == 0:
        return _abort(kind)
    try:
        new_state = rebuild_state(state, trees)
    except ConstraintViolation:
        return _abort(kind)
    log_forward = -math.log(sites.normalizer(w)) + _subset_log_prob(len(chosen), m)
    new_sites = enumerate_sites(new_state)
    if reverse_ok:
        reverse_ok = any(
            canonical_key(ue.formula) == u_key and uc == c0 and len(us) == replaced
            for ue, uc, us in new_sites.universals
        )
    log_reverse = (
        -math.log(new_sites.normalizer(w)) if reverse_ok else NEG_INF
    )
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def _propose_universal_to_atom(state, sites, entry, c0, usages, w, rng) -> ProposalOutcome:
    kind = UNIVERSAL_TO_ATOM
    shape = _row1_shape(entry.formula)
    ante_preds, cons_pred = shape
    psi = Atom(cons_pred, (Const(c0),))
    reverse_ok = not state.theory.has_axiom(psi)
    # Each removed usage deletes one draw of every antecedent atom; the
    # reverse re-selection needs them all to survive as axioms.
    k = len(usages)
    for pred in ante_preds:
        if state.theory.count_of(Atom(pred, (Const(c0),))) < k + 1:
            reverse_ok = False

    trees = [clone_tree(t) for t in state.trees]
    parents = _parent_map(trees)
    # Recollect the usages inside the cloned trees.
    new_sites_before = enumerate_sites(
        MHState(
            symbols=state.symbols,
            logic=state.logic,
            observed=list(state.observed),
            trees=trees,
            theory=state.theory,
        )
    )
    cloned = None
    for ue, uc, us in new_sites_before.universals:
        if canonical_key(ue.formula) == canonical_key(entry.formula) and uc == c0:
            cloned = us
    if cloned is None or len(cloned) != k:
        return _abort(kind)
    for usage in cloned:
        _replace_node(trees, parents, usage.implies_node, ax(psi))
        parents = _parent_map(trees)
    try:
        new_state = rebuild_state(state, trees)
    except ConstraintViolation:
        return _abort(kind)
    log_forward = -math.log(sites.normalizer(w))
    new_sites = enumerate_sites(new_state)
    if reverse_ok:
        others = [
            e
            for e in new_state.theory.axiom_entries()
            if _is_unary_ground_atom(e.formula)
            and e.formula.args[0].sym == c0
            and e.formula.pred != cons_pred
        ]
        m_rev = len(others)
        present = {e.formula.pred for e in others}
        if all(p in present for p in ante_preds):
            log_reverse = -math.log(new_sites.normalizer(w)) + _subset_log_prob(
                len(ante_preds), m_rev
            )
        else:
            log_reverse = NEG_INF
    else:
        log_reverse = NEG_INF
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def _truncated_geometric(rng, p: float, lo: int, hi: Optional[int]) -> int:
    """Sample Geometric(p) conditioned on lo <= n <= hi (memorylessness)."""
    u = rng.random()
    if hi is None:
        return lo + _geom_quantile(u, p)
    span = 1.0 - (1.0 - p) ** (hi - lo + 1)
    return lo + _geom_quantile(u * span, p, cap=hi - lo)


def _geom_quantile(u: float, p: float, cap: Optional[int] = None) -> int:
    k = int(math.floor(math.log1p(-u) / math.log1p(-p)))
    if cap is not None:
        k = min(k, cap)
    return max(k, 0)


def _log_truncated_geometric(n: int, p: float, lo: int, hi: Optional[int]) -> float:
    if n < lo or (hi is not None and n > hi):
        return NEG_INF
    norm = lo * math.log1p(-p)
    if hi is not None:
        norm += math.log1p(-((1.0 - p) ** (hi - lo + 1)))
    return log_geometric(n, p) - norm


def _propose_resample_set_size(state, sites, entry, usable, w, cfg, rng) -> ProposalOutcome:
    kind = RESAMPLE_SET_SIZE
    lam, old_n = _size_axiom_parts(entry.formula, state.theory)
    lo, hi = state.theory.set_size_bounds(lam)
    p = cfg.set_size_geometric_p
    new_n = _truncated_geometric(rng, p, lo, hi)
    new_formula = Eq(entry.formula.lhs, Num(new_n))

    trees = [clone_tree(t) for t in state.trees]
    rewritten = 0
    target_key = canonical_key(entry.formula)
    for tree in trees:
        parents = _parent_map([tree])
        for leaf in _undischarged_leaves(tree):
            if canonical_key(leaf.conclusion) == target_key:
                par = parents[id(leaf)].node
                if not (
                    par is not None
                    and par.rule is Rule.EXISTS_I
                    and par.term == Num(old_n)
                ):
                    return _abort(kind)
                leaf.conclusion = new_formula
                par.term = Num(new_n)
                rewritten += 1
    if rewritten == 0:
        return _abort(kind)
    try:
        new_state = rebuild_state(state, trees)
    except ConstraintViolation:
        return _abort(kind)
    log_forward = -math.log(sites.normalizer(w)) + _log_truncated_geometric(new_n, p, lo, hi)
    new_sites = enumerate_sites(new_state)
    rev_lo, rev_hi = new_state.theory.set_size_bounds(lam)
    log_reverse = -math.log(new_sites.normalizer(w)) + _log_truncated_geometric(
        old_n, p, rev_lo, rev_hi
    )
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def _subtree_discharge_closed(node: PNode) -> bool:
    inside = {id(n) for n in node.iter_nodes()}
    for n in node.iter_nodes():
        for d in n.discharges:
            if id(d) not in inside:
                return False
        if n.branch_discharges:
            for grp in n.branch_discharges:
                if any(id(d) not in inside for d in grp):
                    return False
    return True


def _propose_resample_proof_node(state, sites, tree_idx, node, w, cfg, rng) -> ProposalOutcome:
    kind = RESAMPLE_PROOF_NODE
    if not _subtree_discharge_closed(node):
        return _abort(kind)
    target = node.conclusion
    base = state.theory.clone()
    for f in tree_axioms(node):
        base.remove_axiom(f)

    ctx = AbductionContext(base.clone(), state.logic, rng)
    new_node = init_proof(target, ctx)
    if new_node is None:
        return _abort(kind)

    log_f_construct = score_construction(target, new_node, base.clone(), state.logic)
    log_r_construct = score_construction(target, node, base.clone(), state.logic)
    if log_f_construct == NEG_INF:
        return _abort(kind)

    trees = [clone_tree(t) for t in state.trees]
    # Locate the clone of `node` by position: re-walk in the same order.
    order_old = list(state.trees[tree_idx].iter_nodes())
    order_new = list(trees[tree_idx].iter_nodes())
    position = next(i for i, n in enumerate(order_old) if n is node)
    clone_of = order_new[position]
    parents = _parent_map(trees)
    _replace_node(trees, parents, clone_of, new_node)
    try:
        new_state = rebuild_state(state, trees)
    except ConstraintViolation:
        return _abort(kind)
    log_forward = -math.log(sites.normalizer(w)) + log_f_construct
    new_sites = enumerate_sites(new_state)
    log_reverse = (
        -math.log(new_sites.normalizer(w)) + log_r_construct
        if log_r_construct != NEG_INF
        else NEG_INF
    )
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def _constant_refs_by_tree(state: MHState, sym: int) -> list:
    out = []
    for ti, tree in enumerate(state.trees):
        for leaf in _undischarged_leaves(tree):
            if sym in free_constants(leaf.conclusion):
                out.append(ti)
                break
    return out


def _propose_merge(state, sites, pair, w, rng) -> ProposalOutcome:
    kind = MERGE_EVENTS
    (e1, j1, k1), (e2, j2, k2) = pair
    mapping = {e2: e1}
    if j2 != j1:
        mapping[j2] = j1
    if k2 != k1:
        mapping[k2] = k1
    if set(mapping.values()) & set(mapping):
        return _abort(kind)  # degenerate sharing between the two triples

    # Reverse representability: the absorbed constants must live in exactly
    # one proof that does not already mention their replacements.
    revs = _constant_refs_by_tree(state, e2)
    reverse_ok = len(revs) == 1
    if reverse_ok:
        p_idx = revs[0]
        if p_idx in _constant_refs_by_tree(state, e1):
            reverse_ok = False
        for old, new in ((j2, j1), (k2, k1)):
            if old == new:
                continue
            old_refs = _constant_refs_by_tree(state, old)
            if old_refs != [p_idx] or p_idx in _constant_refs_by_tree(state, new):
                reverse_ok = False

    trees = [clone_tree(t) for t in state.trees]
    for tree in trees:
        for n in tree.iter_nodes():
            n.conclusion = replace_constants(n.conclusion, mapping)
            if n.term is not None:
                n.term = replace_constants(n.term, mapping)
    try:
        new_state = rebuild_state(state, trees)
    except ConstraintViolation:
        return _abort(kind)
    log_forward = math.log(w.merge_alpha) - math.log(sites.normalizer(w))
    new_sites = enumerate_sites(new_state)
    if reverse_ok:
        target = ((e1, j1, k1), revs[0])
        if target in new_sites.splits:
            log_reverse = (
                math.log(w.split_beta)
                - math.log(new_sites.normalizer(w))
                + 2 * LOG_HALF
            )
        else:
            log_reverse = NEG_INF
    else:
        log_reverse = NEG_INF
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def _propose_split(state, sites, triple, tree_idx, w, rng) -> ProposalOutcome:
    kind = SPLIT_EVENTS
    (ev, j, k) = triple
    trees = [clone_tree(t) for t in state.trees]
    new_symbols = state.theory.symbols
    fresh_ev = new_symbols.fresh_constant("e")
    mapping = {ev: fresh_ev}
    for arg in (j, k):
        share = rng.random() < 0.5
        if not share and arg not in mapping:
            mapping[arg] = new_symbols.fresh_constant()

    tree = trees[tree_idx]
    for n in tree.iter_nodes():
        n.conclusion = replace_constants(n.conclusion, mapping)
        if n.term is not None:
            n.term = replace_constants(n.term, mapping)
    draws = []
    for t in trees:
        draws.extend(tree_axioms(t))
    try:
        theory = build_theory(draws, new_symbols)
    except ConstraintViolation:
        return _abort(kind)
    new_state = MHState(
        symbols=new_symbols,
        logic=state.logic,
        observed=list(state.observed),
        trees=trees,
        theory=theory,
    )
    log_forward = (
        math.log(w.split_beta) - math.log(sites.normalizer(w)) + 2 * LOG_HALF
    )
    new_sites = enumerate_sites(new_state)
    new_j = mapping.get(j, j)
    new_k = mapping.get(k, k)
    merge_pair = ((ev, j, k), (fresh_ev, new_j, new_k))
    if merge_pair in new_sites.merges:
        log_reverse = math.log(w.merge_alpha) - math.log(new_sites.normalizer(w))
    else:
        log_reverse = NEG_INF
    return ProposalOutcome(kind, new_state, log_forward, log_reverse)


def propose(
    state: MHState,
    w: ProposalWeights,
    cfg: PriorConfig,
    rng,
    restrict: Optional[tuple] = None,
) -> Optional[ProposalOutcome]:
    """One proposal drawn from the Table-2 menu; None when no sites exist.

    `restrict` limits the menu to a subset of kinds (exploratory steps use
    only resample-set-size and resample-proof-node).
    """
    sites = enumerate_sites(state)
    menu: list = []
    weights: list = []

    def allow(kind):
        return restrict is None or kind in restrict

    if allow(ATOM_TO_UNIVERSAL):
        for e in sites.atoms:
            menu.append((ATOM_TO_UNIVERSAL, e))
            weights.append(1.0)
    if allow(UNIVERSAL_TO_ATOM):
        for item in sites.universals:
            menu.append((UNIVERSAL_TO_ATOM, item))
            weights.append(1.0)
    if allow(RESAMPLE_SET_SIZE):
        for item in sites.sizes:
            menu.append((RESAMPLE_SET_SIZE, item))
            weights.append(1.0)
    if allow(RESAMPLE_PROOF_NODE):
        for item in sites.pnodes:
            menu.append((RESAMPLE_PROOF_NODE, item))
            weights.append(1.0)
    if allow(MERGE_EVENTS):
        for item in sites.merges:
            menu.append((MERGE_EVENTS, item))
            weights.append(w.merge_alpha)
    if allow(SPLIT_EVENTS):
        for item in sites.splits:
            menu.append((SPLIT_EVENTS, item))
            weights.append(w.split_beta)
    if not menu:
        return None
    kind, payload = menu[rng.choices(range(len(menu)), weights=weights, k=1)[0]]
    if kind == ATOM_TO_UNIVERSAL:
        return _propose_atom_to_universal(state, sites, payload, w, rng)
    if kind == UNIVERSAL_TO_ATOM:
        entry, c0, usages = payload
        return _propose_universal_to_atom(state, sites, entry, c0, usages, w, rng)
    if kind == RESAMPLE_SET_SIZE:
        entry, usable = payload
        return _propose_resample_set_size(state, sites, entry, usable, w, cfg, rng)
    if kind == RESAMPLE_PROOF_NODE:
        ti, node = payload
        return _propose_resample_proof_node(state, sites, ti, node, w, cfg, rng)
    if kind == MERGE_EVENTS:
        return _propose_merge(state, sites, payload, w, rng)
    triple, ti = payload
    return _propose_split(state, sites, triple, ti, w, rng)


def acceptance_log_ratio(cur: MHState, out: ProposalOutcome, cfg: PriorConfig) -> float:
    """log of the Eq.-10 Metropolis-Hastings ratio (unclamped)."""
    if not out.ok or out.new_state is None:
        return NEG_INF
    if not math.isfinite(out.log_forward) or out.log_reverse == NEG_INF:
        return NEG_INF
    new_joint = out.new_state.log_joint(cfg)
    if new_joint == NEG_INF:
        return NEG_INF
    return (new_joint - cur.log_joint(cfg)) + out.log_reverse - out.log_forward


def step(
    state: MHState,
    w: ProposalWeights,
    cfg: PriorConfig,
    rng,
    trace: Optional[Callable] = None,
) -> MHState:
    out = propose(state, w, cfg, rng)
    if out is None:
        if trace:
            trace("none", False, state.log_joint(cfg))
        return state
    ratio = acceptance_log_ratio(state, out, cfg)
    accept = ratio >= 0 or (
        ratio > NEG_INF and math.log(max(rng.random(), 1e-300)) < ratio
    )
    if trace:
        trace(out.kind, accept, (out.new_state.log_joint(cfg) if accept else state.log_joint(cfg)))
    return out.new_state if accept else state


def exploratory_step(state: MHState, w: ProposalWeights, cfg: PriorConfig, rng) -> MHState:
    """Restricted-menu step that accepts whenever the result is valid."""
    out = propose(
        state, w, cfg, rng, restrict=(RESAMPLE_SET_SIZE, RESAMPLE_PROOF_NODE)
    )
    if out is None or not out.ok or out.new_state is None:
        return state
    if out.new_state.log_joint(cfg) == NEG_INF:
        return state
    return out.new_state


def read_logical_form(
    state: MHState,
    x: Formula,
    cfg: PriorConfig,
    w: ProposalWeights,
    rng,
    iters: int = 0,
    retries: int = 32,
) -> MHState:
    """Warm-start extension: prove the new form, then run `iters` MH steps.

    When initialization fails (the current theory has painted itself into
    a corner), a few MH shake steps run between retries so earlier
    commitments can be revised; a hard error follows exhausted retries.
    """
    current = state.clone()
    current.invalidate()
    node = None
    for attempt in range(retries):
        ctx = AbductionContext(current.theory, current.logic, rng)
        node = init_proof(x, ctx)
        if node is not None:
            break
        for _ in range(16):
            current = step(current, w, cfg, rng)
    if node is None:
        raise InferenceError("unreadable sentence: no valid proof found")
    current.observed.append(x)
    current.trees.append(node)
    current.invalidate()
    for _ in range(iters):
        current = step(current, w, cfg, rng)
    return current


@dataclass
class SampleRecord:
    key: str
    log_joint: float


@dataclass
class ScheduleResult:
    samples: list
    final_state: MHState
    best_log_joint: float
    best_iteration: int
    converged: bool


def run_schedule(
    state: MHState,
    cfg: PriorConfig,
    w: ProposalWeights,
    rng,
    iters: int = 400,
    exploratory_every: int = 100,
    exploratory_steps: int = 20,
    trace: Optional[Callable] = None,
) -> ScheduleResult:
    """The evaluation schedule: `iters` regular MH iterations with
    exploratory re-initializations every `exploratory_every` iterations."""
    samples = []
    best = state.log_joint(cfg)
    best_iter = 0
    current = state
    for t in range(1, iters + 1):
        if trace:
            current = step(current, w, cfg, rng, trace=lambda k, a, lj: trace(t, k, a, lj))
        else:
            current = step(current, w, cfg, rng)
        lj = current.log_joint(cfg)
        samples.append(SampleRecord(current.key(), lj))
        if lj > best + 1e-12:
            best = lj
            best_iter = t
        if exploratory_every and t % exploratory_every == 0 and t < iters:
            for _ in range(exploratory_steps):
                current = exploratory_step(current, w, cfg, rng)
    converged = best_iter <= max(0, iters - 100)
    return ScheduleResult(samples, current, best, best_iter, converged)
