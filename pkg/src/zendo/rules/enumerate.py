from __future__ import annotations

import itertools
from functools import lru_cache

from ..errors import BudgetExceeded
from ..vocab import SAME_ATTRIBUTES
from .ast import (
    COUNTED_KINDS,
    DEFAULT_MAX_COUNT,
    QUANTIFIER_KINDS,
    CompareAll,
    Pred,
    Quantified,
    Rule,
    RuleValidationError,
    SameAttribute,
    SomeTouch,
    TouchPair,
    rule_size,
)
from .edits import ALL_LITERALS
from .syntax import render_rule

DEFAULT_SIZE_BOUND = 7
DEFAULT_RULE_BUDGET = 200_000


@lru_cache(maxsize=None)
def preds_up_to(size: int) -> tuple[Pred, ...]:
    """Every predicate of size <= `size`, each once."""
    if size < 1:
        return ()
    conjs = []
    for k in range(1, len(ALL_LITERALS) + 1):
        added = False
        for combo in itertools.combinations(ALL_LITERALS, k):
            if len({lit.attr for lit in combo}) < k:
                continue
            try:
                pred = Pred((combo,))
            except RuleValidationError:
                continue
            if pred.size() <= size:
                conjs.append((pred.size(), pred.disjuncts[0]))
                added = True
        if not added:
            break
    conjs.sort(key=lambda sc: sc[0])
    seen = {}

    def extend(start: int, chosen: list, used: int) -> None:
        if chosen:
            pred = Pred(tuple(c for _, c in chosen))
            seen.setdefault(pred.sort_key(), pred)
        for i in range(start, len(conjs)):
            cost, conj = conjs[i]
            extra = cost + (1 if chosen else 0)
            if used + extra > size:
                break
            chosen.append((cost, conj))
            extend(i + 1, chosen, used + extra)
            chosen.pop()

    extend(0, [], 0)
    return tuple(sorted(seen.values(), key=lambda p: (p.size(), p.sort_key())))


def enumerate_rules(
    size_bound: int = DEFAULT_SIZE_BOUND,
    max_count: int = DEFAULT_MAX_COUNT,
    budget: int = DEFAULT_RULE_BUDGET,
) -> list[Rule]:
    """Every rule with rule_size <= size_bound exactly once, ordered by (size, rendering)."""
    preds = preds_up_to(max(size_bound - 1, 0))
    out: dict[str, Rule] = {}

    def add(rule: Rule) -> None:
        if rule_size(rule) > size_bound:
            return
        out.setdefault(render_rule(rule), rule)
        if len(out) > budget:
            raise BudgetExceeded(f"more than {budget} rules within size bound {size_bound}")

    for kind in QUANTIFIER_KINDS:
        counts = range(1, max_count + 1) if kind in COUNTED_KINDS else [None]
        for count in counts:
            for pred in preds:
                add(Quantified(kind, pred, count))
    for attr in SAME_ATTRIBUTES:
        add(SameAttribute(attr))
    add(SomeTouch())
    pair_preds = [p for p in preds if 3 + 1 + p.size() <= size_bound]
    for left, right in itertools.combinations_with_replacement(pair_preds, 2):
        add(TouchPair(left, right))
    cmp_preds = [p for p in preds if 4 + 1 + p.size() <= size_bound]
    for subject in cmp_preds:
        for other in cmp_preds:
            for relation in (">", "<", "="):
                add(CompareAll(subject, relation, other))
    return sorted(out.values(), key=lambda r: (rule_size(r), render_rule(r)))
