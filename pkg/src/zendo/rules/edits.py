"""Local rule edits: change a quantifier, add an attribute test, or change one."""

from __future__ import annotations

import enum

import numpy as np

from ..errors import MutationNotApplicable
from ..vocab import ATTRIBUTES, NEGATABLE_ATTRIBUTES, SAME_ATTRIBUTES
from .ast import (
    COUNTED_KINDS,
    CompareAll,
    DEFAULT_MAX_COUNT,
    QUANTIFIER_KINDS,
    Literal,
    Pred,
    Quantified,
    Rule,
    RuleValidationError,
    SameAttribute,
    TouchPair,
    preds_of,
    with_preds,
)
from .syntax import render_rule


class MutationKind(str, enum.Enum):
    QUANTIFIER_CHANGE = "quantifier_change"
    ATTRIBUTE_ADDITION = "attribute_addition"
    ATTRIBUTE_CHANGE = "attribute_change"


def _all_literals() -> list[Literal]:
    lits = [Literal(attr, value) for attr, values in ATTRIBUTES.items() for value in values]
    lits += [Literal(attr, value, True) for attr in NEGATABLE_ATTRIBUTES for value in ATTRIBUTES[attr]]
    return lits


ALL_LITERALS = _all_literals()


def _quantifier_variants(rule: Quantified, max_count: int) -> list[Rule]:
    out = []
    for kind in QUANTIFIER_KINDS:
        counts = range(1, max_count + 1) if kind in COUNTED_KINDS else [None]
        for count in counts:
            if (kind, count) != (rule.kind, rule.count):
                out.append(Quantified(kind, rule.pred, count))
    return out


def _replace_pred(rule: Rule, index: int, pred: Pred) -> Rule:
    preds = list(preds_of(rule))
    preds[index] = pred
    return with_preds(rule, tuple(preds))


def _additions(rule: Rule) -> list[Rule]:
    out = []
    for p, pred in enumerate(preds_of(rule)):
        for c, conj in enumerate(pred.disjuncts):
            used = {lit.attr for lit in conj}
            for lit in ALL_LITERALS:
                if lit.attr in used:
                    continue
                disjuncts = list(pred.disjuncts)
                disjuncts[c] = conj + (lit,)
                try:
                    new_pred = Pred(tuple(disjuncts))
                except RuleValidationError:
                    continue
                if len(new_pred.literals()) == len(pred.literals()) + 1:
                    out.append(_replace_pred(rule, p, new_pred))
        if not _widens_by_disjunct(rule):
            continue
        # "every block is blue" -> "every block is blue or small": a new one-literal disjunct
        for lit in ALL_LITERALS:
            new_pred = Pred(pred.disjuncts + ((lit,),))
            if len(new_pred.literals()) == len(pred.literals()) + 1:
                out.append(_replace_pred(rule, p, new_pred))
    return out + _relational_additions(rule)


def _widens_by_disjunct(rule: Rule) -> bool:
    # Under "every"/"no" an extra allowed (or banned) value is the natural one-attribute
    # addition; elsewhere additions only conjoin.
    return isinstance(rule, Quantified) and rule.kind in ("forall", "none")


def _relational_additions(rule: Rule) -> list[Rule]:
    """Touching and relative size count as attributes of the quantified block too.

    "there is a red block" -> "a red block touches a small block",
    "there is a red block" -> "a red block is bigger than every non-red block".
    """
    if not isinstance(rule, Quantified) or rule.kind != "exists":
        return []
    out: list[Rule] = [TouchPair(rule.pred, Pred.of(lit)) for lit in ALL_LITERALS]
    for color in ATTRIBUTES["color"]:
        other = Pred.of(Literal("color", color, True))
        for relation in (">", "<"):
            out.append(CompareAll(rule.pred, relation, other))
    return out


def _changes(rule: Rule) -> list[Rule]:
    if isinstance(rule, SameAttribute):
        return [SameAttribute(a) for a in SAME_ATTRIBUTES if a != rule.attr]
    out = []
    for p, pred in enumerate(preds_of(rule)):
        for c, conj in enumerate(pred.disjuncts):
            for k, old in enumerate(conj):
                others = {lit.attr for i, lit in enumerate(conj) if i != k}
                for lit in ALL_LITERALS:
                    if lit == old or lit.attr in others:
                        continue
                    new_conj = conj[:k] + (lit,) + conj[k + 1:]
                    disjuncts = list(pred.disjuncts)
                    disjuncts[c] = new_conj
                    try:
                        new_pred = Pred(tuple(disjuncts))
                    except RuleValidationError:
                        continue
                    # merging two disjuncts would delete a node rather than replace one
                    if len(new_pred.literals()) == len(pred.literals()):
                        out.append(_replace_pred(rule, p, new_pred))
    return out


def neighbors(rule: Rule, kind: MutationKind | str, max_count: int = DEFAULT_MAX_COUNT) -> list[Rule]:
    """All rules one edit of `kind` away, deduplicated, in a deterministic order.

    Edits that collapse to a rule rendering identically to the input are
    dropped (e.g. swapping disjuncts).
    """
    kind = MutationKind(kind)
    if kind is MutationKind.QUANTIFIER_CHANGE:
        candidates = _quantifier_variants(rule, max_count) if isinstance(rule, Quantified) else []
    elif kind is MutationKind.ATTRIBUTE_ADDITION:
        candidates = _additions(rule)
    else:
        candidates = _changes(rule)
    original = render_rule(rule)
    seen = {original}
    out = []
    for cand in candidates:
        text = render_rule(cand)
        if text not in seen:
            seen.add(text)
            out.append(cand)
    return out


def mutate_rule(
    rule: Rule,
    kind: MutationKind | str,
    rng: np.random.Generator,
    max_count: int = DEFAULT_MAX_COUNT,
) -> Rule:
    options = neighbors(rule, kind, max_count)
    if not options:
        raise MutationNotApplicable(f"{MutationKind(kind).value} does not apply to {render_rule(rule)!r}")
    return options[int(rng.integers(len(options)))]
