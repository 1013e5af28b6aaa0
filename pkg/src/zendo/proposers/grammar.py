"""Deterministic, data-driven rule proposals built from the rule grammar.

Stands in for the LLM proposer offline. Initial proposals read attribute
values off the positive example so every proposal is true on it; local
proposals are single edits biased towards agreeing with the latest label.
"""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from ..rules import (
    DEFAULT_MAX_COUNT,
    CompareAll,
    Literal,
    MutationKind,
    Pred,
    Quantified,
    Rule,
    SameAttribute,
    SomeTouch,
    TouchPair,
    eval_rule,
    neighbors,
    render_rule,
    word_count,
)
from ..scene import ObservationLog, Scene
from ..vocab import ATTRIBUTES, SAME_ATTRIBUTES
from .base import ProposerRequest

log = logging.getLogger(__name__)

MUTATION_ORDER = (
    MutationKind.QUANTIFIER_CHANGE,
    MutationKind.ATTRIBUTE_ADDITION,
    MutationKind.ATTRIBUTE_CHANGE,
)


def scene_rules(scene: Scene, max_count: int = DEFAULT_MAX_COUNT) -> list[Rule]:
    """Simple rules read off one scene; all of them are true on it."""
    blocks = scene.blocks
    out: list[Rule] = []
    for attr, values in ATTRIBUTES.items():
        for value in values:
            lit = Literal(attr, value)
            n = sum(getattr(b, attr) == value for b in blocks)
            pred = Pred.of(lit)
            if n:
                out.append(Quantified("exists", pred))
                if n == len(blocks):
                    out.append(Quantified("forall", pred))
                if n <= max_count:
                    out.append(Quantified("exactly", pred, n))
            else:
                out.append(Quantified("none", pred))
    for attr in SAME_ATTRIBUTES:
        if len(blocks) > 1 and len({getattr(b, attr) for b in blocks}) == 1:
            out.append(SameAttribute(attr))
    if scene.touching:
        out.append(SomeTouch())
        for i, j in sorted(scene.touching):
            for attr in ATTRIBUTES:
                out.append(TouchPair(Pred.of(Literal(attr, getattr(blocks[i], attr))),
                                     Pred.of(Literal(attr, getattr(blocks[j], attr)))))
    for color in ATTRIBUTES["color"]:
        rule = CompareAll(Pred.of(Literal("color", color)), ">", Pred.of(Literal("color", color, True)))
        if any(b.color == color for b in blocks) and eval_rule(rule, scene):
            out.append(rule)
    return [r for r in _dedupe(out) if eval_rule(r, scene)]


def _dedupe(rules: Iterable[Rule]) -> list[Rule]:
    seen = set()
    out = []
    for rule in rules:
        text = render_rule(rule)
        if text not in seen:
            seen.add(text)
            out.append(rule)
    return out


class GrammarProposer:
    """Grammar-based proposer for all request modes.

    `space`, when given, restricts every proposal to that set of rules (used
    to compare against exact enumeration over a small grammar).
    """

    def __init__(self, space: Sequence[Rule] | None = None, max_count: int = DEFAULT_MAX_COUNT):
        self.max_count = max_count
        self.space = {render_rule(r) for r in space} if space is not None else None

    def _allowed(self, rules: Iterable[Rule]) -> list[Rule]:
        rules = _dedupe(rules)
        if self.space is None:
            return rules
        return [r for r in rules if render_rule(r) in self.space]

    def propose(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        if request.mode == "initial":
            return self.propose_initial(request, rng)
        if request.mode == "local":
            return self.propose_local(request, rng)
        if request.mode == "refinement":
            return self.propose_refinement(request, rng)
        return self.propose_batch(request, rng)

    def propose_initial(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        first = request.log[0]
        candidates = self._candidates_for(first.scene, first.label)
        return _sample(candidates, request.num, rng)

    def _candidates_for(self, scene: Scene, label: bool) -> list[Rule]:
        rules = scene_rules(scene, self.max_count)
        if not label:
            # a negative example: propose the complementary simple rules instead
            flipped = []
            for rule in rules:
                if isinstance(rule, Quantified) and rule.kind in ("exists", "none"):
                    flipped.append(Quantified("none" if rule.kind == "exists" else "exists", rule.pred))
            rules = [r for r in flipped if not eval_rule(r, scene)]
        return self._allowed(rules)

    def propose_local(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        """k single-edit variants, k/3 per mutation kind.

        Edits that fit the latest label come first; within each group shorter
        rules are more likely to be drawn.
        """
        latest = request.log.latest
        k = request.num
        quotas = [k // 3 + (1 if i < k % 3 else 0) for i in range(3)]
        out: list[Rule] = []
        for kind, quota in zip(MUTATION_ORDER, quotas):
            if quota == 0:
                continue
            options = self._allowed(neighbors(request.original_rule, kind, self.max_count))
            agree = [r for r in options if eval_rule(r, latest.scene) == latest.label]
            rest = [r for r in options if eval_rule(r, latest.scene) != latest.label]
            picked = _sample(agree, quota, rng, simple_first=True)
            if len(picked) < quota:
                picked += _sample(rest, quota - len(picked), rng, simple_first=True)
            out.extend(picked)
        return out

    def propose_batch(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        """Fresh proposals from every positive example, preferring rules consistent with the whole log."""
        candidates: list[Rule] = []
        for obs in request.log:
            if obs.label:
                candidates.extend(self._candidates_for(obs.scene, True))
        candidates = _dedupe(candidates)
        consistent = [r for r in candidates if _consistent(r, request.log)]
        rest = [r for r in candidates if not _consistent(r, request.log)]
        picked = _sample(consistent, request.num, rng)
        if len(picked) < request.num:
            picked += _sample(rest, request.num - len(picked), rng)
        return picked

    def propose_refinement(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        """Single edits of the original that fix the most misclassified observations."""
        options = []
        for kind in MUTATION_ORDER:
            options.extend(neighbors(request.original_rule, kind, self.max_count))
        options = self._allowed(options)
        if not options:
            return []
        correct = np.array([_num_correct(r, request.log) for r in options])
        best = [r for r, c in zip(options, correct) if c == correct.max()]
        return _sample(best, request.num, rng)


def _consistent(rule: Rule, log: ObservationLog) -> bool:
    return all(eval_rule(rule, o.scene) == o.label for o in log)


def _num_correct(rule: Rule, log: ObservationLog) -> int:
    return sum(eval_rule(rule, o.scene) == o.label for o in log)


def _sample(items: Sequence[Rule], num: int, rng: np.random.Generator, simple_first: bool = False) -> list[Rule]:
    """Up to `num` items without replacement; optionally weighted towards short rules (prior 1/words)."""
    if num <= 0 or not items:
        return []
    if len(items) <= num:
        order = rng.permutation(len(items))
    elif simple_first:
        w = np.array([1.0 / word_count(r) for r in items])
        order = rng.choice(len(items), size=num, replace=False, p=w / w.sum())
    else:
        order = rng.choice(len(items), size=num, replace=False)
    return [items[int(i)] for i in order]


class EnumerationProposer:
    """Returns every rule of a fixed space for any request.

    With rejuvenation off this turns the particle filter into plain
    importance sampling over the space, which makes it comparable to
    exact enumeration.
    """

    def __init__(self, space: Sequence[Rule]):
        self.space = _dedupe(space)

    def propose(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        return list(self.space)
