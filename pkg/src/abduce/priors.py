"""Log-density computation and sampling for the generative model.

Log-weights are plain floats in nats; float("-inf") marks impossible
events and NaN never appears.  Everything here is unnormalized exactly
where the validity conditioning cancels in ratios.

The base distribution over axioms generates formula trees top-down: a
node-type categorical at each formula node, within-formula Chinese
restaurant processes for predicate and constant symbols, the
variable-versus-constant split 1/(n_V + 1) at argument positions, and a
small kind categorical for non-variable arguments.  Set-size values and
per-entity name counts carry their own prior terms at the theory level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

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
    Var,
)
from .proofs import INTUITIONISTIC, Proof, Rule
from .theory import NAME_FN, SIZE_FN, Theory

NEG_INF = float("-inf")
LOG_HALF = -math.log(2.0)

NODE_TYPES = ("atom", "equality", "not", "and", "or", "implies", "forall", "exists")

# Sub-choices of the generative process that the paper leaves to code.
EQ_KIND_SIZE = 0.2            # equality node declares a set size
EQ_KIND_FN = 0.8              # equality node is a function-value equation
ARG_KINDS = (("constant", 0.85), ("number", 0.05), ("string", 0.05), ("apply", 0.05))
MAX_GEN_DEPTH = 24


class ConfigError(Exception):
    pass


def _uniform(keys) -> dict:
    w = 1.0 / len(keys)
    return {k: w for k in keys}


@dataclass(frozen=True)
class PriorConfig:
    crp_alpha: float = 0.1
    node_type_weights: dict = field(default_factory=lambda: _uniform(NODE_TYPES))
    predicate_concentration: float = 1.0
    constant_concentration: float = 1.0
    name_lambda: float = math.exp(-1.0)
    name_collision_penalty: float = 2000.0
    set_size_geometric_p: float = 1e-4
    proof_length_rate: float = 20.0
    deduction_rule_weights: dict = field(
        default_factory=lambda: _uniform(tuple(r.value for r in Rule))
    )

    def __post_init__(self):
        if not (0.0 < self.set_size_geometric_p < 1.0):
            raise ConfigError("set_size_geometric_p must lie in (0, 1)")
        for name, weights in (
            ("node_type_weights", self.node_type_weights),
            ("deduction_rule_weights", self.deduction_rule_weights),
        ):
            for key, w in weights.items():
                if not (w > 0.0 and math.isfinite(w)):
                    raise ConfigError(f"{name}[{key!r}] must be positive and finite")
        for name in ("crp_alpha", "predicate_concentration", "constant_concentration",
                     "name_lambda", "proof_length_rate"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive and finite")

    def rule_log_weight(self, rule: Rule, logic: str) -> float:
        active = [r for r in Rule if not (logic == INTUITIONISTIC and r is Rule.NOT_NOT_E)]
        total = sum(self.deduction_rule_weights[r.value] for r in active)
        if logic == INTUITIONISTIC and rule is Rule.NOT_NOT_E:
            return NEG_INF
        return math.log(self.deduction_rule_weights[rule.value] / total)

    def node_log_weight(self, node_type: str, depth: int) -> float:
        weights = self.node_type_weights
        if depth >= MAX_GEN_DEPTH:
            allowed = {k: v for k, v in weights.items() if k in ("atom", "equality")}
        else:
            allowed = weights
        if node_type not in allowed:
            return NEG_INF
        return math.log(allowed[node_type] / sum(allowed.values()))


def load_config(path: str) -> PriorConfig:
    """Load a PriorConfig from JSON; unknown keys are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    known = set(PriorConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    defaults = PriorConfig()
    merged = {}
    for key, value in raw.items():
        if key in ("node_type_weights", "deduction_rule_weights"):
            base = dict(getattr(defaults, key))
            bad = set(value) - set(base)
            if bad:
                raise ConfigError(f"unknown {key} entries: {sorted(bad)}")
            base.update(value)
            merged[key] = base
        else:
            merged[key] = value
    return replace(defaults, **merged)


def log_poisson(k: int, rate: float) -> float:
    if k < 0:
        return NEG_INF
    return k * math.log(rate) - rate - math.lgamma(k + 1)


def log_geometric(n: int, p: float) -> float:
    if n < 0:
        return NEG_INF
    return n * math.log1p(-p) + math.log(p)


def log_sum_exp(values) -> float:
    best = NEG_INF
    for v in values:
        if v > best:
            best = v
    if best == NEG_INF:
        return NEG_INF
    return best + math.log(sum(math.exp(v - best) for v in values))


class _SymbolCrp:
    """Within-formula Chinese restaurant process over symbol ids."""

    def __init__(self, concentration: float):
        self.gamma = concentration
        self.counts: dict = {}
        self.total = 0

    def log_observe(self, sym: int) -> float:
        seen = self.counts.get(sym, 0)
        if seen:
            out = math.log(seen / (self.gamma + self.total))
        else:
            out = math.log(self.gamma / (self.gamma + self.total))
        self.counts[sym] = seen + 1
        self.total += 1
        return out

    def sample(self, rng, mint_fresh) -> int:
        r = rng.random() * (self.gamma + self.total)
        for sym in self.counts:
            r -= self.counts[sym]
            if r < 0:
                self.counts[sym] += 1
                self.total += 1
                return sym
        sym = mint_fresh()
        self.log_observe(sym)
        return sym


class _BaseWalk:
    """Shared bookkeeping for the top-down generation of one formula."""

    def __init__(self, cfg: PriorConfig, size_sym: Optional[int]):
        self.cfg = cfg
        self.preds = _SymbolCrp(cfg.predicate_concentration)
        self.consts = _SymbolCrp(cfg.constant_concentration)
        self.size_sym = size_sym

    # -- density -------------------------------------------------------------

    def arg_density(self, t: Formula, n_vars: int) -> float:
        pick = -math.log(n_vars + 1)
        match t:
            case Var(k):
                return pick if k < n_vars else NEG_INF
            case Const(s):
                return pick + math.log(0.85) + self.consts.log_observe(s)
            case Num(_):
                return pick + math.log(0.05)
            case Str(_):
                return pick + math.log(0.05)
            case Apply(Const(fn), args) if args:
                out = pick + math.log(0.05)
                out += self.preds.log_observe(fn)
                out += len(args) * LOG_HALF
                for a in args:
                    out += self.arg_density(a, n_vars)
                return out
            case _:
                return NEG_INF

    def eq_rhs_density(self, rhs: Formula, n_vars: int) -> float:
        kinds = 4 if n_vars else 3
        kind = -math.log(kinds)
        match rhs:
            case Var(k):
                if n_vars and 0 <= k < n_vars:
                    return kind - math.log(n_vars)
                return NEG_INF
            case Const(s):
                return kind + self.consts.log_observe(s)
            case Num(_) | Str(_):
                return kind
            case _:
                return NEG_INF

    def density(self, f: Formula, n_vars: int, depth: int) -> float:
        w = self.cfg.node_log_weight
        match f:
            case Atom(pred, args):
                if not args:
                    return NEG_INF
                out = w("atom", depth) + self.preds.log_observe(pred)
                out += len(args) * LOG_HALF
                for a in args:
                    out += self.arg_density(a, n_vars)
                return out
            case Eq(Apply(Const(fn), (Lambda(body),)), Num(_)) if fn == self.size_sym:
                out = w("equality", depth) + math.log(EQ_KIND_SIZE)
                return out + self.density(body, n_vars + 1, depth + 1)
            case Eq(Apply(Const(fn), args), rhs) if args:
                out = w("equality", depth) + math.log(EQ_KIND_FN)
                out += self.preds.log_observe(fn)
                out += len(args) * LOG_HALF
                for a in args:
                    out += self.arg_density(a, n_vars)
                return out + self.eq_rhs_density(rhs, n_vars)
            case Not(body):
                return w("not", depth) + self.density(body, n_vars, depth + 1)
            case And(parts) | Or(parts):
                kind = "and" if isinstance(f, And) else "or"
                out = w(kind, depth) + (len(parts) - 1) * LOG_HALF
                for p in parts:
                    out += self.density(p, n_vars, depth + 1)
                return out
            case Implies(a, b):
                return (
                    w("implies", depth)
                    + self.density(a, n_vars, depth + 1)
                    + self.density(b, n_vars, depth + 1)
                )
            case ForAll(body):
                return w("forall", depth) + self.density(body, n_vars + 1, depth + 1)
            case Exists(body):
                return w("exists", depth) + self.density(body, n_vars + 1, depth + 1)
            case _:
                return NEG_INF


def log_base_density(a: Formula, cfg: PriorConfig, theory: Optional[Theory] = None) -> float:
    """Density of one axiom under the recursive top-down base distribution."""
    size_sym = theory.symbols.lookup(SIZE_FN) if theory is not None else None
    walk = _BaseWalk(cfg, size_sym)
    return walk.density(a, 0, 0)


class _Sampler:
    def __init__(self, cfg: PriorConfig, theory: Theory, rng):
        self.cfg = cfg
        self.theory = theory
        self.rng = rng
        self.walk = _BaseWalk(cfg, theory.symbols.lookup(SIZE_FN))

    def _mint_pred(self) -> int:
        return self.theory.symbols.fresh_constant("p")

    def _mint_const(self) -> int:
        return self.theory.symbols.fresh_constant("c")

    def _node_type(self, depth: int) -> str:
        weights = self.cfg.node_type_weights
        if depth >= MAX_GEN_DEPTH:
            weights = {k: v for k, v in weights.items() if k in ("atom", "equality")}
        keys = list(weights)
        total = sum(weights.values())
        r = self.rng.random() * total
        for k in keys:
            r -= weights[k]
            if r < 0:
                return k
        return keys[-1]

    def _geometric_children(self) -> int:
        n = 2
        while self.rng.random() < 0.5:
            n += 1
        return n

    def _arity(self) -> int:
        n = 1
        while self.rng.random() < 0.5:
            n += 1
        return n

    def _arg(self, n_vars: int) -> Formula:
        r = self.rng.random() * (n_vars + 1)
        if r < n_vars:
            return Var(int(r))
        roll = self.rng.random()
        acc = 0.0
        for kind, w in ARG_KINDS:
            acc += w
            if roll < acc:
                break
        if kind == "constant":
            return Const(self.walk.consts.sample(self.rng, self._mint_const))
        if kind == "number":
            return Num(self.rng.randrange(0, 100))
        if kind == "string":
            return Str(f"s{self.rng.randrange(0, 100)}")
        fn = self.walk.preds.sample(self.rng, self._mint_pred)
        return Apply(Const(fn), tuple(self._arg(n_vars) for _ in range(self._arity())))

    def _sample_size(self) -> int:
        p = self.cfg.set_size_geometric_p
        u = self.rng.random()
        return int(math.log1p(-u) / math.log1p(-p))

    def formula(self, n_vars: int, depth: int) -> Formula:
        t = self._node_type(depth)
        if t == "atom":
            pred = self.walk.preds.sample(self.rng, self._mint_pred)
            return Atom(pred, tuple(self._arg(n_vars) for _ in range(self._arity())))
        if t == "equality":
            size_sym = self.theory.symbols.intern(SIZE_FN)
            if self.rng.random() < EQ_KIND_SIZE:
                body = self.formula(n_vars + 1, depth + 1)
                return Eq(Apply(Const(size_sym), (Lambda(body),)), Num(self._sample_size()))
            fn = self.walk.preds.sample(self.rng, self._mint_pred)
            args = tuple(self._arg(n_vars) for _ in range(self._arity()))
            kinds = ["constant", "number", "string"] + (["variable"] if n_vars else [])
            kind = kinds[self.rng.randrange(len(kinds))]
            if kind == "variable":
                rhs: Formula = Var(self.rng.randrange(n_vars))
            elif kind == "constant":
                rhs = Const(self.walk.consts.sample(self.rng, self._mint_const))
            elif kind == "number":
                rhs = Num(self.rng.randrange(0, 100))
            else:
                rhs = Str(f"s{self.rng.randrange(0, 100)}")
            return Eq(Apply(Const(fn), args), rhs)
        if t == "not":
            return Not(self.formula(n_vars, depth + 1))
        if t == "and":
            return And(tuple(self.formula(n_vars, depth + 1) for _ in range(self._geometric_children())))
        if t == "or":
            return Or(tuple(self.formula(n_vars, depth + 1) for _ in range(self._geometric_children())))
        if t == "implies":
            return Implies(self.formula(n_vars, depth + 1), self.formula(n_vars, depth + 1))
        if t == "forall":
            return ForAll(self.formula(n_vars + 1, depth + 1))
        return Exists(self.formula(n_vars + 1, depth + 1))


def sample_axiom(cfg: PriorConfig, theory: Theory, rng) -> Formula:
    """Draw one axiom from the base distribution, minting fresh symbols."""
    return _Sampler(cfg, theory, rng).formula(0, 0)


def _is_size_axiom(f: Formula, theory: Theory) -> Optional[int]:
    size_sym = theory.symbols.lookup(SIZE_FN)
    if (
        isinstance(f, Eq)
        and isinstance(f.lhs, Apply)
        and isinstance(f.lhs.fn, Const)
        and f.lhs.fn.sym == size_sym
        and len(f.lhs.args) == 1
        and isinstance(f.lhs.args[0], Lambda)
        and isinstance(f.rhs, Num)
    ):
        return f.rhs.value
    return None


def log_crp_seating(counts, alpha: float) -> float:
    """Exchangeable CRP probability of a seating with the given table sizes."""
    n = sum(counts)
    if n == 0:
        return 0.0
    out = len(counts) * math.log(alpha)
    for c in counts:
        out += math.lgamma(c)
    out -= math.lgamma(alpha + n) - math.lgamma(alpha)
    return out


def log_prior_theory(theory: Theory, cfg: PriorConfig) -> float:
    """Unnormalized log p(T): CRP seating, base densities, names, set sizes.

    The validity normalizer p(T valid) is omitted; it cancels in every
    ratio the sampler needs.  Inconsistent theories score -inf.
    """
    if not theory.is_consistent():
        return NEG_INF
    entries = theory.axiom_entries()
    out = log_crp_seating([e.count for e in entries], cfg.crp_alpha)
    for e in entries:
        out += log_base_density(e.formula, cfg, theory)
        size = _is_size_axiom(e.formula, theory)
        if size is not None:
            out += log_geometric(size, cfg.set_size_geometric_p)
    log_lambda = math.log(cfg.name_lambda)
    by_name: dict = {}
    for entity, names in theory.name_index().items():
        out += (len(names) ** 2) * log_lambda
        for s in names:
            by_name[s] = by_name.get(s, 0) + 1
    for s, entity_count in sorted(by_name.items()):
        if entity_count > 1:
            out -= (entity_count - 1) * cfg.name_collision_penalty
    return out


def candidate_term_count(theory: Theory) -> int:
    """Known constants, numbers, and strings, plus one fresh constant."""
    return (
        len(theory.known_constants())
        + len(theory.known_numbers())
        + len(theory.known_strings())
        + 1
    )


def log_prior_proof(p: Proof, theory: Theory, cfg: PriorConfig) -> float:
    """Unnormalized log p(pi | T) for a valid proof.

    Poisson length term, a rule categorical per step, uniform premise
    selection over the preceding steps, and uniform parameter choices
    where a rule takes one.  Ax steps consume theory axioms and add no
    choice term; validity conditioning cancels in ratios.
    """
    k = len(p.steps)
    out = log_poisson(k, cfg.proof_length_rate)
    n_terms = candidate_term_count(theory)
    for j, step in enumerate(p.steps, start=1):
        w = cfg.rule_log_weight(step.rule, p.logic)
        if w == NEG_INF:
            return NEG_INF
        out += w
        if step.premises:
            if j == 1:
                return NEG_INF
            out += len(step.premises) * -math.log(j - 1)
        rule = step.rule
        if rule in (Rule.FORALL_E, Rule.EXISTS_I):
            out += -math.log(n_terms)
        elif rule is Rule.AND_E:
            parts = p.steps[step.premises[0]].conclusion
            out += -math.log(len(parts.parts))
        elif rule is Rule.OR_I:
            out += -math.log(len(step.conclusion.parts))
    return out


def log_joint(theory: Theory, proofs, cfg: PriorConfig) -> float:
    """log p(T) + sum_i log p(pi_i | T); -inf propagates."""
    out = log_prior_theory(theory, cfg)
    if out == NEG_INF:
        return NEG_INF
    for p in proofs:
        term = log_prior_proof(p, theory, cfg)
        if term == NEG_INF:
            return NEG_INF
        out += term
    return out
