"""The hypothesis language: parse, render, evaluate, mutate and enumerate rules."""

from .ast import (
    DEFAULT_MAX_COUNT,
    CompareAll,
    Literal,
    Pred,
    Quantified,
    Rule,
    RuleValidationError,
    SameAttribute,
    SomeTouch,
    TouchPair,
    literals_of,
    preds_of,
    rule_size,
    validate_rule,
)
from .edits import MutationKind, mutate_rule, neighbors
from .enumerate import DEFAULT_SIZE_BOUND, enumerate_rules
from .semantics import eval_rule, pred_holds
from .syntax import parse_rule, render_pred, render_rule, tokenize, word_count

__all__ = [
    "DEFAULT_MAX_COUNT",
    "DEFAULT_SIZE_BOUND",
    "CompareAll",
    "Literal",
    "MutationKind",
    "Pred",
    "Quantified",
    "Rule",
    "RuleValidationError",
    "SameAttribute",
    "SomeTouch",
    "TouchPair",
    "enumerate_rules",
    "eval_rule",
    "literals_of",
    "mutate_rule",
    "neighbors",
    "parse_rule",
    "pred_holds",
    "preds_of",
    "render_pred",
    "render_rule",
    "rule_size",
    "tokenize",
    "validate_rule",
    "word_count",
]
