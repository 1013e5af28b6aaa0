from __future__ import annotations

from ..scene import Block, Scene
from ..vocab import SIZE_RANK
from .ast import CompareAll, Literal, Pred, Quantified, Rule, SameAttribute, SomeTouch, TouchPair


def literal_holds(lit: Literal, block: Block) -> bool:
    return (getattr(block, lit.attr) == lit.value) != lit.negated


def pred_holds(pred: Pred, block: Block) -> bool:
    return any(all(literal_holds(lit, block) for lit in conj) for conj in pred.disjuncts)


def _size_relation(relation: str, a: Block, b: Block) -> bool:
    ra, rb = SIZE_RANK[a.size], SIZE_RANK[b.size]
    if relation == ">":
        return ra > rb
    if relation == "<":
        return ra < rb
    return ra == rb


def eval_rule(rule: Rule, scene: Scene) -> bool:
    """Evaluate a rule on a scene. Total and deterministic.

    Pair quantifiers range over distinct blocks; sizes are ordered
    small < medium < large.
    """
    blocks = scene.blocks
    if isinstance(rule, Quantified):
        count = sum(pred_holds(rule.pred, b) for b in blocks)
        if rule.kind == "exists":
            return count > 0
        if rule.kind == "forall":
            return count == len(blocks)
        if rule.kind == "none":
            return count == 0
        if rule.kind == "exactly":
            return count == rule.count
        return count >= rule.count
    if isinstance(rule, SameAttribute):
        return len({getattr(b, rule.attr) for b in blocks}) == 1
    if isinstance(rule, SomeTouch):
        return bool(scene.touching)
    if isinstance(rule, TouchPair):
        for i, j in scene.touching:
            a, b = blocks[i], blocks[j]
            if pred_holds(rule.left, a) and pred_holds(rule.right, b):
                return True
            if pred_holds(rule.left, b) and pred_holds(rule.right, a):
                return True
        return False
    if isinstance(rule, CompareAll):
        for i, a in enumerate(blocks):
            if not pred_holds(rule.subject, a):
                continue
            if all(
                _size_relation(rule.relation, a, b)
                for j, b in enumerate(blocks)
                if j != i and pred_holds(rule.other, b)
            ):
                return True
        return False
    raise TypeError(f"not a rule: {rule!r}")
