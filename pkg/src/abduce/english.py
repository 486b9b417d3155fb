"""Deterministic parser from the controlled English fragment to
neo-Davidsonian logical forms.

Entity mentions (proper names and definite descriptions) take widest
scope: each distinct mention becomes one existential binder wrapping the
sentence body, carrying a name equality (and a type atom for definites)
as presuppositions.  Verbs reify events with arg1/arg2 equalities;
copular predications are plain atoms; numeric comparatives become a
binary `lt` atom over a measure term.  Reference resolution is left to
the reasoning module.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from typing import Optional

from .hol import (
    And,
    Apply,
    Atom,
    Const,
    Eq,
    Exists,
    ForAll,
    Formula,
    Implies,
    Lambda,
    Not,
    Num,
    Str,
    SymbolTable,
    Var,
    conj,
    map_children,
)

DECLARATIVE = "declarative"
POLAR = "polar-question"
WH = "wh-question"

_WH_WORDS = ("what", "which")
_AUX_INVERT = ("is", "are", "does", "do", "was", "were")
_UNITS = ("kilometers", "kilometer", "km", "meters", "miles")


class UnsupportedSentence(Exception):
    def __init__(self, message: str, span: str = ""):
        super().__init__(f"{message}: {span!r}" if span else message)
        self.span = span


@dataclass(frozen=True)
class Sentence:
    text: str
    kind: str

    @classmethod
    def classify(cls, text: str) -> "Sentence":
        stripped = text.strip()
        if not stripped:
            raise UnsupportedSentence("empty sentence")
        first = stripped.split()[0].lower()
        if stripped.endswith("?"):
            kind = WH if first in _WH_WORDS else POLAR
        else:
            kind = DECLARATIVE
        return cls(stripped, kind)


@dataclass(frozen=True)
class ParsedForm:
    formula: Formula
    kind: str


class Lexicon:
    """surface -> (predicate, pos) map with identifier fallback."""

    def __init__(self, entries: Optional[dict] = None):
        self.entries = dict(entries or {})

    @classmethod
    def from_text(cls, text: str) -> "Lexicon":
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise UnsupportedSentence(f"lexicon line {lineno} malformed", raw)
            surface, predicate, pos = parts
            entries[surface.lower()] = (predicate, pos)
        return cls(entries)

    @classmethod
    def default(cls) -> "Lexicon":
        text = (
            importlib.resources.files("abduce").joinpath("lexicon.txt").read_text("utf-8")
        )
        return cls.from_text(text)

    def lookup(self, word: str):
        return self.entries.get(word.lower())

    def predicate(self, word: str) -> str:
        hit = self.entries.get(word.lower())
        if hit:
            return hit[0]
        return _identifier(word)

    def pos(self, word: str) -> Optional[str]:
        hit = self.entries.get(word.lower())
        return hit[1] if hit else None


def _identifier(word: str) -> str:
    out = "".join(ch if ch.isalnum() else "_" for ch in word.lower())
    if not out or not out[0].isalpha():
        out = "w_" + out
    return out


def singularize(word: str) -> str:
    w = word
    if w.endswith("ies") and len(w) > 3:
        return w[:-3] + "y"
    for suffix in ("ches", "shes", "sses", "xes", "zes"):
        if w.endswith(suffix):
            return w[:-2]
    if w.endswith("s") and not w.endswith("ss") and len(w) > 2:
        return w[:-1]
    return w


def _tokenize(text: str):
    out = []
    for raw in text.replace(",", " , ").split():
        word = raw.strip(".?!")
        if word:
            out.append(word)
    return out


# Sentinel constants stand in for spine-bound variables until the final
# de-Bruijn resolution pass; sentinel i is Const(-1 - i).


def _sentinel(i: int) -> Const:
    return Const(-1 - i)


def _resolve(f: Formula, depth: int) -> Formula:
    match f:
        case Const(s) if s < 0:
            return Var(depth - 1 - (-1 - s))
        case ForAll(b):
            return ForAll(_resolve(b, depth + 1))
        case Exists(b):
            return Exists(_resolve(b, depth + 1))
        case Lambda(b):
            return Lambda(_resolve(b, depth + 1))
        case _:
            return map_children(f, lambda c: _resolve(c, depth))


class _Mentions:
    """Entity registry: one spine binder per distinct mention key."""

    def __init__(self, base_index: int = 0):
        self.base = base_index
        self.presupps: list = []
        self.index: dict = {}

    def ref(self, key: tuple, make_presupps) -> Const:
        if key not in self.index:
            slot = self.base + len(self.presupps)
            self.index[key] = slot
            self.presupps.append(make_presupps(_sentinel(slot)))
        return _sentinel(self.index[key])

    def __len__(self) -> int:
        return len(self.presupps)

    def wrap(self, core: Formula) -> Formula:
        out = core
        for i in range(len(self.presupps) - 1, -1, -1):
            out = Exists(conj(list(self.presupps[i]) + [out]))
        return out


class FragmentParser:
    """Template parser for the supported declaratives and questions."""

    def __init__(self, symbols: SymbolTable, lexicon: Optional[Lexicon] = None):
        self.symbols = symbols
        self.lexicon = lexicon if lexicon is not None else Lexicon.default()

    # -- symbol helpers -------------------------------------------------------

    def _pred(self, word: str) -> int:
        return self.symbols.intern(self.lexicon.predicate(word))

    def _noun_pred(self, word: str) -> int:
        return self.symbols.intern(self.lexicon.predicate(singularize(word)))

    def _fn(self, name: str) -> Const:
        return Const(self.symbols.intern(name))

    # -- public API -----------------------------------------------------------

    def parse_sentence(self, s: Sentence) -> ParsedForm:
        if s.kind != DECLARATIVE:
            return self.parse_question(s)
        formula = self._declarative(_tokenize(s.text))
        return ParsedForm(formula, DECLARATIVE)

    def parse_question(self, s: Sentence) -> ParsedForm:
        tokens = _tokenize(s.text)
        if s.kind == WH or (tokens and tokens[0].lower() in _WH_WORDS):
            return ParsedForm(self._wh(tokens), WH)
        if tokens and tokens[0].lower() in _AUX_INVERT:
            tokens = self._deinvert(tokens)
        return ParsedForm(self._declarative(tokens), POLAR)

    # -- declaratives ----------------------------------------------------------

    def _declarative(self, tokens: list) -> Formula:
        if not tokens:
            raise UnsupportedSentence("empty sentence")
        head = tokens[0].lower()
        mentions = _Mentions()
        if head == "if":
            core = self._conditional(tokens, mentions)
        elif head in ("every", "all", "each"):
            core = self._universal(tokens, mentions)
        elif (
            head == "the"
            and len(tokens) > 2
            and self.lexicon.pos(tokens[1]) == "measure"
            and tokens[2].lower() == "of"
        ):
            core = self._measure(tokens, mentions)
        else:
            core, rest = self._clause(tokens, 0, mentions, None)
            if rest != len(tokens):
                raise UnsupportedSentence(
                    "unsupported construction", " ".join(tokens[rest:])
                )
        return _resolve(mentions.wrap(core), 0)

    def _conditional(self, tokens: list, mentions) -> Formula:
        try:
            split = tokens.index("then")
        except ValueError:
            raise UnsupportedSentence("conditional without 'then'", " ".join(tokens))
        ante_tokens = tokens[1:split]
        cons_tokens = tokens[split + 1 :]
        ante_parts = []
        i = 0
        while i < len(ante_tokens):
            part, i = self._clause(ante_tokens, i, mentions, None)
            ante_parts.append(part)
            if i < len(ante_tokens):
                if ante_tokens[i].lower() != "and":
                    raise UnsupportedSentence(
                        "expected 'and' between antecedent clauses",
                        " ".join(ante_tokens[i:]),
                    )
                i += 1
        cons, j = self._clause(cons_tokens, 0, mentions, None)
        if j != len(cons_tokens):
            raise UnsupportedSentence("unsupported consequent", " ".join(cons_tokens[j:]))
        return Implies(conj(ante_parts), cons)

    def _universal(self, tokens: list, mentions) -> Formula:
        # Every/All NOUN [in ENTITY] [that VP [and VP]*] is/are COMPLEMENT
        subject = _sentinel(1_000_000)  # placeholder; re-indexed below
        i = 1
        if i >= len(tokens):
            raise UnsupportedSentence("bare quantifier", " ".join(tokens))
        noun = tokens[i]
        i += 1
        ante = [Atom(self._noun_pred(noun), (subject,))]
        if i < len(tokens) and tokens[i].lower() == "in":
            obj, i = self._entity(tokens, i + 1, mentions)
            ante.append(Atom(self.symbols.intern("in"), (subject, obj)))
        if i < len(tokens) and tokens[i].lower() == "that":
            i += 1
            while True:
                part, i = self._verb_phrase(tokens, i, mentions, subject)
                ante.append(part)
                if i < len(tokens) and tokens[i].lower() == "and":
                    i += 1
                    continue
                break
        cons, i = self._verb_phrase(tokens, i, mentions, subject)
        if i != len(tokens):
            raise UnsupportedSentence("unsupported construction", " ".join(tokens[i:]))
        body = ForAll(Implies(conj(ante), cons))
        # The rule binder sits after all entity binders in the spine: give
        # the subject the next sentinel index past the mentions.
        rule_index = len(mentions)

        def fix(f: Formula) -> Formula:
            if isinstance(f, Const) and f.sym == subject.sym:
                return _sentinel(rule_index)
            return map_children(f, fix)

        return fix(body)

    def _measure(self, tokens: list, mentions) -> Formula:
        measure = self.lexicon.predicate(tokens[1])
        entity, i = self._entity(tokens, 3, mentions)
        if i >= len(tokens) or tokens[i].lower() not in ("is", "was"):
            raise UnsupportedSentence("measure sentence without copula", " ".join(tokens))
        i += 1
        value, i = self._number(tokens, i)
        if i != len(tokens):
            raise UnsupportedSentence("unsupported construction", " ".join(tokens[i:]))
        return Eq(Apply(self._fn(measure), (entity,)), Num(value))

    # -- clause pieces ----------------------------------------------------------

    def _clause(self, tokens, i, mentions, subject):
        if subject is None:
            subject, i = self._entity(tokens, i, mentions)
        return self._verb_phrase(tokens, i, mentions, subject)

    def _entity(self, tokens, i, mentions):
        if i >= len(tokens):
            raise UnsupportedSentence("expected an entity", " ".join(tokens))
        word = tokens[i]
        name_fn = self._fn("name")
        if word.lower() == "the":
            if i + 1 >= len(tokens):
                raise UnsupportedSentence("bare definite article", " ".join(tokens))
            # "the state of Wulstershire" names the entity and types it.
            if i + 3 < len(tokens) and tokens[i + 2].lower() == "of" and tokens[i + 3][0].isupper():
                pred = self._noun_pred(tokens[i + 1])
                name, j = self._proper_name(tokens, i + 3)
                ref = mentions.ref(
                    ("named", name),
                    lambda v: [
                        Eq(Apply(name_fn, (v,)), Str(name)),
                        Atom(pred, (v,)),
                    ],
                )
                return ref, j
            noun = singularize(tokens[i + 1].lower())
            pred = self.symbols.intern(self.lexicon.predicate(noun))
            ref = mentions.ref(
                ("definite", noun),
                lambda v: [
                    Eq(Apply(name_fn, (v,)), Str(noun)),
                    Atom(pred, (v,)),
                ],
            )
            return ref, i + 2
        if word[0].isupper():
            name, j = self._proper_name(tokens, i)
            ref = mentions.ref(
                ("named", name),
                lambda v: [Eq(Apply(name_fn, (v,)), Str(name))],
            )
            return ref, j
        raise UnsupportedSentence("expected an entity", " ".join(tokens[i : i + 3]))

    def _proper_name(self, tokens, i):
        words = []
        while i < len(tokens) and tokens[i][0].isupper():
            words.append(tokens[i])
            i += 1
        if not words:
            raise UnsupportedSentence("expected a proper name", " ".join(tokens[i : i + 2]))
        return " ".join(words), i

    def _number(self, tokens, i):
        if i >= len(tokens):
            raise UnsupportedSentence("expected a number", " ".join(tokens))
        try:
            value = int(tokens[i])
        except ValueError:
            raise UnsupportedSentence("expected a number", tokens[i])
        i += 1
        if i < len(tokens) and tokens[i].lower() in _UNITS:
            i += 1
        return value, i

    def _verb_phrase(self, tokens, i, mentions, subject):
        if i >= len(tokens):
            raise UnsupportedSentence("expected a verb phrase", " ".join(tokens))
        word = tokens[i].lower()
        if word in ("is", "are", "was", "were"):
            return self._copula(tokens, i + 1, mentions, subject)
        if word in ("does", "do") and i + 2 < len(tokens) and tokens[i + 1].lower() == "not":
            verb = tokens[i + 2].lower()
            if self.lexicon.pos(verb) == "verb" or verb in ("have", "has"):
                obj, j = self._entity(tokens, i + 3, mentions)
                return Not(self._event(verb, subject, obj)), j
            raise UnsupportedSentence("unsupported verb", verb)
        if self.lexicon.pos(word) == "verb" or word in ("has", "have"):
            obj, j = self._entity(tokens, i + 1, mentions)
            return self._event(word, subject, obj), j
        raise UnsupportedSentence("unsupported verb phrase", " ".join(tokens[i : i + 3]))

    def _copula(self, tokens, i, mentions, subject):
        negated = False
        if i < len(tokens) and tokens[i].lower() == "not":
            negated = True
            i += 1
        if i < len(tokens) and tokens[i].lower() in ("a", "an"):
            i += 1
        if i >= len(tokens):
            raise UnsupportedSentence("copula without complement", " ".join(tokens))
        word = tokens[i].lower()
        if word in ("shorter", "longer") and i + 1 < len(tokens) and tokens[i + 1].lower() == "than":
            value, j = self._number(tokens, i + 2)
            measured = Apply(self._fn("length"), (subject,))
            if word == "shorter":
                atom = Atom(self.symbols.intern("lt"), (measured, Num(value)))
            else:
                atom = Atom(self.symbols.intern("lt"), (Num(value), measured))
            return (Not(atom) if negated else atom, j)
        parts = [Atom(self._noun_pred(word), (subject,))]
        j = i + 1
        if j < len(tokens) and tokens[j].lower() == "in":
            obj, j = self._entity(tokens, j + 1, mentions)
            parts.append(Atom(self.symbols.intern("in"), (subject, obj)))
        core = conj(parts)
        return (Not(core) if negated else core, j)

    def _event(self, verb: str, subject: Formula, obj: Formula) -> Formula:
        # Sentinels are constants until resolution, so the local event
        # binder cannot capture the entity references.
        pred = self.symbols.intern(self.lexicon.predicate(verb))
        body = And(
            (
                Atom(pred, (Var(0),)),
                Eq(Apply(self._fn("arg1"), (Var(0),)), subject),
                Eq(Apply(self._fn("arg2"), (Var(0),)), obj),
            )
        )
        return Exists(body)

    # -- questions ---------------------------------------------------------------

    def _deinvert(self, tokens: list) -> list:
        aux = tokens[0].lower()
        if aux in ("is", "are", "was", "were"):
            # "Is X (not) (a) Y" -> "X is (not) (a) Y"
            subject_end = 1
            if tokens[1].lower() == "the":
                subject_end = 3
            elif tokens[1][0].isupper():
                subject_end = 2
                while subject_end < len(tokens) and tokens[subject_end][0].isupper():
                    subject_end += 1
            else:
                raise UnsupportedSentence("unsupported question form", " ".join(tokens))
            return tokens[1:subject_end] + [tokens[0].lower()] + tokens[subject_end:]
        if aux in ("does", "do"):
            # "Does X have Y" -> "X has Y"
            rest = tokens[1:]
            return rest
        raise UnsupportedSentence("unsupported question form", " ".join(tokens))

    def _wh(self, tokens: list) -> Formula:
        # What NOUN-PL [in ENTITY] are [not] COMPLEMENT?
        if len(tokens) < 3:
            raise UnsupportedSentence("unsupported wh-question", " ".join(tokens))
        mentions = _Mentions(base_index=1)  # slot 0 is the lambda binder
        subject = _sentinel(0)
        i = 1
        noun = tokens[i]
        i += 1
        parts = [Atom(self._noun_pred(noun), (subject,))]
        if i < len(tokens) and tokens[i].lower() == "in":
            obj, i = self._entity(tokens, i + 1, mentions)
            parts.append(Atom(self.symbols.intern("in"), (subject, obj)))
        body, i = self._verb_phrase(tokens, i, mentions, subject)
        if i != len(tokens):
            raise UnsupportedSentence("unsupported construction", " ".join(tokens[i:]))
        parts.append(body)
        core = conj(parts)
        wrapped = mentions.wrap(core)
        return _resolve(Lambda(wrapped), 0)


def _is_name_eq(part: Formula) -> bool:
    return (
        isinstance(part, Eq)
        and isinstance(part.lhs, Apply)
        and part.lhs.args == (Var(0),)
        and isinstance(part.rhs, Str)
    )


def _is_entity_spine(f: Formula) -> bool:
    return (
        isinstance(f, Exists)
        and isinstance(f.body, And)
        and _is_name_eq(f.body.parts[0])
    )


def negate_query(pf: ParsedForm) -> ParsedForm:
    """Negate a closed polar form inside its entity-scoping existentials.

    The presupposition prefix of an entity binder is its name equality
    plus at most one type atom, provided a core predication remains.
    """
    if pf.kind == WH:
        raise UnsupportedSentence("cannot negate a wh-question")

    def negate_core(core: Formula) -> Formula:
        if isinstance(core, Not):
            return core.body
        return Not(core)

    def go(f: Formula) -> Formula:
        if _is_entity_spine(f):
            parts = list(f.body.parts)
            i = 1
            if (
                len(parts) > 2
                and isinstance(parts[1], Atom)
                and parts[1].args == (Var(0),)
            ):
                i = 2
            rest = parts[i:]
            if len(rest) == 1 and _is_entity_spine(rest[0]):
                return Exists(And(tuple(parts[:i] + [go(rest[0])])))
            if not rest:
                raise UnsupportedSentence("nothing to negate in query")
            new_core = negate_core(conj(rest))
            return Exists(And(tuple(parts[:i] + [new_core])))
        return negate_core(f)

    return ParsedForm(go(pf.formula), pf.kind)
