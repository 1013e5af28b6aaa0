"""Rule AST.

Rules have a fixed top-level shape; the free part is the block-level
predicate, a disjunction of conjunctions of attribute literals.

    Quantified(kind, pred, count)   there is a / every / no / exactly n / at least n
    SameAttribute(attr)             all blocks share one value of attr
    SomeTouch()                     some pair of blocks touch
    TouchPair(left, right)          a left-block touches a (different) right-block
    CompareAll(subject, rel, other) some subject-block relates by size to every
                                    other other-block

Quantified is one level of quantification; TouchPair and CompareAll are two.
All nodes are immutable and normalized on construction, so structural
equality is semantic-canonical equality for everything the grammar can say.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from ..vocab import ATTRIBUTE_NAMES, ATTRIBUTES, NEGATABLE_ATTRIBUTES, SAME_ATTRIBUTES, VALUE_INDEX

QUANTIFIER_KINDS = ("exists", "forall", "none", "exactly", "at_least")
COUNTED_KINDS = ("exactly", "at_least")
RELATIONS = (">", "<", "=")
DEFAULT_MAX_COUNT = 3

# English adjective order inside a conjunction: "small blue upright".
_DISPLAY_ORDER = {"size": 0, "color": 1, "orientation": 2, "grounded": 3}
# Sorting order for disjuncts and touch-pair sides.
_SORT_ORDER = {attr: i for i, attr in enumerate(ATTRIBUTE_NAMES)}


class RuleValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    attr: str
    value: str
    negated: bool = False

    def __post_init__(self):
        if self.attr not in ATTRIBUTES or self.value not in ATTRIBUTES[self.attr]:
            raise RuleValidationError(f"invalid attribute test {self.attr}={self.value}")
        if self.negated and self.attr not in NEGATABLE_ATTRIBUTES:
            raise RuleValidationError(f"cannot negate {self.attr} values")

    def sort_key(self) -> tuple:
        return (_SORT_ORDER[self.attr], self.value, self.negated)

    def display_key(self) -> tuple:
        return (_DISPLAY_ORDER[self.attr], VALUE_INDEX[self.value], self.negated)


Conjunction = tuple[Literal, ...]


def _normalize_conjunction(literals) -> Conjunction:
    lits = tuple(sorted(set(literals), key=Literal.display_key))
    if not lits:
        raise RuleValidationError("empty conjunction")
    attrs = [lit.attr for lit in lits]
    if len(set(attrs)) != len(attrs):
        raise RuleValidationError("a conjunction may test each attribute at most once")
    return lits


def _conj_sort_key(conj: Conjunction) -> tuple:
    return tuple(sorted(lit.sort_key() for lit in conj))


@dataclass(frozen=True)
class Pred:
    """Block-level predicate in disjunctive normal form."""

    disjuncts: tuple[Conjunction, ...]

    def __post_init__(self):
        conjs = {_normalize_conjunction(c) for c in self.disjuncts}
        if not conjs:
            raise RuleValidationError("empty predicate")
        # absorption: "red or red grounded" is just "red"
        conjs = {c for c in conjs if not any(set(o) < set(c) for o in conjs)}
        object.__setattr__(self, "disjuncts", tuple(sorted(conjs, key=_conj_sort_key)))

    @classmethod
    def of(cls, *literals: Literal) -> Pred:
        """Single conjunction of the given literals."""
        return cls((tuple(literals),))

    @classmethod
    def any_of(cls, *literals: Literal) -> Pred:
        return cls(tuple((lit,) for lit in literals))

    def literals(self) -> list[Literal]:
        return [lit for conj in self.disjuncts for lit in conj]

    def sort_key(self) -> tuple:
        return tuple(_conj_sort_key(c) for c in self.disjuncts)

    def size(self) -> int:
        # one per literal, one per negation, one per extra operand of and/or
        n = sum(1 + lit.negated for lit in self.literals())
        n += sum(len(c) - 1 for c in self.disjuncts)
        n += len(self.disjuncts) - 1
        return n


@dataclass(frozen=True)
class Quantified:
    kind: str
    pred: Pred
    count: int | None = None

    def __post_init__(self):
        if self.kind not in QUANTIFIER_KINDS:
            raise RuleValidationError(f"unknown quantifier {self.kind!r}")
        if self.kind in COUNTED_KINDS:
            if not isinstance(self.count, int) or self.count < 1:
                raise RuleValidationError(f"{self.kind} needs a count >= 1")
        elif self.count is not None:
            raise RuleValidationError(f"{self.kind} takes no count")


@dataclass(frozen=True)
class SameAttribute:
    attr: str

    def __post_init__(self):
        if self.attr not in SAME_ATTRIBUTES:
            raise RuleValidationError(f"'same' is not defined for attribute {self.attr!r}")


@dataclass(frozen=True)
class SomeTouch:
    pass


@dataclass(frozen=True)
class TouchPair:
    left: Pred
    right: Pred

    def __post_init__(self):
        # touching is symmetric, so the pair is unordered
        if self.right.sort_key() < self.left.sort_key():
            left, right = self.right, self.left
            object.__setattr__(self, "left", left)
            object.__setattr__(self, "right", right)


@dataclass(frozen=True)
class CompareAll:
    subject: Pred
    relation: str
    other: Pred

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise RuleValidationError(f"unknown size relation {self.relation!r}")


Rule = Union[Quantified, SameAttribute, SomeTouch, TouchPair, CompareAll]
RULE_TYPES = (Quantified, SameAttribute, SomeTouch, TouchPair, CompareAll)


def preds_of(rule: Rule) -> tuple[Pred, ...]:
    if isinstance(rule, Quantified):
        return (rule.pred,)
    if isinstance(rule, TouchPair):
        return (rule.left, rule.right)
    if isinstance(rule, CompareAll):
        return (rule.subject, rule.other)
    return ()


def with_preds(rule: Rule, preds: tuple[Pred, ...]) -> Rule:
    if isinstance(rule, Quantified):
        (pred,) = preds
        return Quantified(rule.kind, pred, rule.count)
    if isinstance(rule, TouchPair):
        return TouchPair(*preds)
    if isinstance(rule, CompareAll):
        return CompareAll(preds[0], rule.relation, preds[1])
    if preds:
        raise RuleValidationError(f"{type(rule).__name__} has no predicates")
    return rule


def literals_of(rule: Rule) -> list[Literal]:
    return [lit for pred in preds_of(rule) for lit in pred.literals()]


def rule_size(rule: Rule) -> int:
    """Description length used to bound enumeration.

    An existential over one literal costs 2; every other quantifier costs one
    extra unit (for its polarity or count), so a bound of 2 admits exactly the
    single-attribute existentials.
    """
    if isinstance(rule, Quantified):
        return (1 if rule.kind == "exists" else 2) + rule.pred.size()
    if isinstance(rule, (SameAttribute, SomeTouch)):
        return 3
    if isinstance(rule, TouchPair):
        return 3 + rule.left.size() + rule.right.size()
    if isinstance(rule, CompareAll):
        return 4 + rule.subject.size() + rule.other.size()
    raise TypeError(f"not a rule: {rule!r}")


def validate_rule(rule: Rule, max_count: int = DEFAULT_MAX_COUNT) -> Rule:
    if not isinstance(rule, RULE_TYPES):
        raise RuleValidationError(f"not a rule: {rule!r}")
    if isinstance(rule, Quantified) and rule.count is not None and rule.count > max_count:
        raise RuleValidationError(f"quantifier count {rule.count} exceeds maximum {max_count}")
    return rule
