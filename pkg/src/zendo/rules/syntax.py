"""Surface syntax for rules: a small recursive-descent parser and the canonical renderer.

Canonical forms (lowercase, one space between words):

    there is a <npred>                       every block is <ipred>
    no block is <ipred>                      exactly N block(s) is/are <ipred>
    at least N block(s) is/are <ipred>       all blocks are the same <attr>
    some blocks touch                        a <npred> touches a <npred>
    a <npred> is bigger than every <npred>   (also "smaller than", "the same size as")

where <npred> renders a predicate with the noun ("small blue block",
"blue or small block") and <ipred> without it ("small and blue", "blue or
small"). The parser additionally accepts a few common paraphrases (e.g.
"there's a red", "all blocks are blue", "nothing is upright",
"a blue and a red touch") which normalize to the canonical AST.
"""

from __future__ import annotations

import re

from ..errors import RuleSyntaxError
from ..vocab import NEGATABLE_ATTRIBUTES, SAME_ATTRIBUTES, VALUE_TO_ATTRIBUTE
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
    validate_rule,
)

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_RELATION_WORDS = {">": "bigger than", "<": "smaller than", "=": "the same size as"}
_ATTR_WORDS = {"color": "color", "colour": "color", "size": "size", "orientation": "orientation"}


def tokenize(text: str) -> list[str]:
    text = text.strip().lower()
    text = text.replace("’", "'").replace("‘", "'")
    text = text.strip("\"'` ")
    text = re.sub(r"[.!;:]+$", "", text).strip()
    text = re.sub(r"\bthere's\b", "there is", text)
    text = re.sub(r"\bnon[\s-]+", "non-", text)
    text = text.replace(",", " ")
    return text.split()


def _literal(token: str) -> Literal | None:
    lit = _literal_exact(token)
    if lit is None and token.endswith("s"):
        lit = _literal_exact(token[:-1])
    return lit


def _literal_exact(token: str) -> Literal | None:
    if token in VALUE_TO_ATTRIBUTE:
        return Literal(VALUE_TO_ATTRIBUTE[token], token)
    if token.startswith("non-"):
        value = token[4:]
        attr = VALUE_TO_ATTRIBUTE.get(value)
        if attr in NEGATABLE_ATTRIBUTES:
            return Literal(attr, value, negated=True)
    return None


_STRUCTURE_WORDS = {
    "there", "is", "are", "a", "an", "no", "every", "all", "block", "blocks", "the", "same",
    "exactly", "at", "least", "some", "touch", "touches", "that", "and", "or", "bigger", "larger",
    "smaller", "than", "as", "nothing", "must", "be", "size", "color", "colour", "orientation",
}


class _Parser:
    def __init__(self, tokens: list[str], text: str):
        self.tokens = tokens
        self.text = text
        self.pos = 0

    def error(self, message: str, pos: int | None = None) -> RuleSyntaxError:
        return RuleSyntaxError(message, self.pos if pos is None else pos, self.text)

    def peek(self, offset: int = 0) -> str | None:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def match(self, *words: str) -> bool:
        """Consume `words` if they come next; leave position untouched otherwise."""
        if tuple(self.tokens[self.pos:self.pos + len(words)]) == words:
            self.pos += len(words)
            return True
        return False

    def match_any(self, *words: str) -> str | None:
        tok = self.peek()
        if tok in words:
            self.pos += 1
            return tok
        return None

    def expect(self, *words: str) -> None:
        if not self.match(*words):
            found = self.peek()
            raise self.error(f"expected {' '.join(words)!r}, found {found!r}" if found else f"expected {' '.join(words)!r} but the rule ended")

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    # -- grammar -------------------------------------------------------------

    def rule(self) -> Rule:
        if self.at_end():
            raise self.error("empty rule")
        if self.match("there", "is") or self.match("there", "must", "be"):
            if self.match("no"):
                return Quantified("none", self.pred())
            if self.match_any("a", "an"):
                return Quantified("exists", self.pred())
            if self.peek() in _NUMBER_WORDS or (self.peek() or "").isdigit():
                n = self.number()
                return Quantified("exactly" if n == 1 else "at_least", self.pred(), n)
            raise self.error(f"expected 'a' or 'no' after 'there is', found {self.peek()!r}")
        if self.match("there", "are"):
            if self.match("no"):
                return Quantified("none", self.pred())
            n = self.number()
            return Quantified("at_least", self.pred(), n)
        if self.match("every", "block", "is"):
            return Quantified("forall", self.pred())
        if self.match("all", "blocks", "are") or self.match("all", "are"):
            if self.match("the", "same"):
                return SameAttribute(self.attribute_name())
            return Quantified("forall", self.pred())
        if self.match("no", "block", "is") or self.match("nothing", "is"):
            return Quantified("none", self.pred())
        if self.match("exactly"):
            n = self.number()
            self.block_is()
            return Quantified("exactly", self.pred(), n)
        if self.match("at", "least"):
            n = self.number()
            self.block_is()
            return Quantified("at_least", self.pred(), n)
        if self.match("one", "block", "is") or self.match("one", "is"):
            return Quantified("exactly", self.pred(), 1)
        if self.match("some", "blocks", "touch") or self.match("some", "touch"):
            return SomeTouch()
        if self.match_any("a", "an"):
            left = self.pred()
            if self.match("touches"):
                self.article()
                return TouchPair(left, self.pred())
            if self.match("and"):
                self.article()
                right = self.pred()
                self.expect("touch")
                return TouchPair(left, right)
            if self.match("is"):
                if self.match("bigger", "than") or self.match("larger", "than"):
                    relation = ">"
                elif self.match("smaller", "than"):
                    relation = "<"
                elif self.match("the", "same", "size", "as"):
                    relation = "="
                else:
                    raise self.error(f"expected a size comparison, found {self.peek()!r}")
                if not self.match_any("every", "all"):
                    raise self.error(f"expected 'every', found {self.peek()!r}")
                return CompareAll(left, relation, self.pred())
            raise self.error(f"expected 'touches' or 'is', found {self.peek()!r}")
        raise self.error(f"unrecognized rule opening {self.peek()!r}")

    def article(self) -> None:
        if not self.match_any("a", "an"):
            raise self.error(f"expected 'a', found {self.peek()!r}")

    def block_is(self) -> None:
        if not (self.match("block", "is") or self.match("blocks", "are") or self.match("blocks", "is") or self.match("block", "are")):
            raise self.error(f"expected 'blocks are', found {self.peek()!r}")

    def number(self) -> int:
        tok = self.peek()
        if tok is not None and tok.isdigit():
            self.pos += 1
            return int(tok)
        if tok in _NUMBER_WORDS:
            self.pos += 1
            return _NUMBER_WORDS[tok]
        raise self.error(f"expected a number, found {tok!r}")

    def attribute_name(self) -> str:
        tok = self.peek()
        attr = _ATTR_WORDS.get(tok or "")
        if attr is None or attr not in SAME_ATTRIBUTES:
            raise self.error(f"expected one of {', '.join(SAME_ATTRIBUTES)}, found {tok!r}")
        self.pos += 1
        return attr

    def is_adjective(self, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and _literal(tok) is not None

    def adjective(self) -> Literal:
        tok = self.peek()
        if tok is None:
            raise self.error("expected an attribute value but the rule ended")
        lit = _literal(tok)
        if lit is not None:
            self.pos += 1
            return lit
        if tok in _STRUCTURE_WORDS or tok.isdigit() or tok in _NUMBER_WORDS:
            raise self.error(f"expected an attribute value, found {tok!r}")
        raise self.error(f"out-of-vocabulary value {tok.removeprefix('non-')!r}")

    def adjective_group(self) -> list[Literal]:
        literals = [self.adjective()]
        while self.is_adjective():
            literals.append(self.adjective())
        self.match_any("block", "blocks")
        if self.peek() == "that" and self.peek(1) in ("is", "are"):
            self.pos += 2
            literals.append(self.adjective())
            while self.is_adjective():
                literals.append(self.adjective())
        return literals

    def pred(self) -> Pred:
        start = self.pos
        disjuncts = []
        current = self.adjective_group()
        while True:
            if self.peek() == "and" and self.is_adjective(1):
                self.pos += 1
                current += self.adjective_group()
            elif self.peek() == "or" and self.is_adjective(1):
                self.pos += 1
                disjuncts.append(current)
                current = self.adjective_group()
            else:
                break
        disjuncts.append(current)
        try:
            return Pred(tuple(tuple(c) for c in disjuncts))
        except RuleValidationError as exc:
            raise self.error(str(exc), start) from None


def parse_rule(text: str, max_count: int = DEFAULT_MAX_COUNT) -> Rule:
    tokens = tokenize(text)
    parser = _Parser(tokens, text)
    try:
        rule = parser.rule()
    except RuleValidationError as exc:
        raise parser.error(str(exc)) from None
    if not parser.at_end():
        raise parser.error(f"unexpected trailing text {' '.join(tokens[parser.pos:])!r}")
    try:
        return validate_rule(rule, max_count)
    except RuleValidationError as exc:
        raise RuleSyntaxError(str(exc), None, text) from None


# -- rendering ---------------------------------------------------------------

def _literal_text(lit: Literal) -> str:
    return f"non-{lit.value}" if lit.negated else lit.value


def render_pred(pred: Pred, noun: bool) -> str:
    joiner = " " if noun else " and "
    text = " or ".join(joiner.join(_literal_text(lit) for lit in conj) for conj in pred.disjuncts)
    return text + " block" if noun else text


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def _noun_phrase(pred: Pred) -> str:
    text = render_pred(pred, noun=True)
    return f"{_article(text)} {text}"


def render_rule(rule: Rule) -> str:
    if isinstance(rule, Quantified):
        if rule.kind == "exists":
            return f"there is {_noun_phrase(rule.pred)}"
        body = render_pred(rule.pred, noun=False)
        if rule.kind == "forall":
            return f"every block is {body}"
        if rule.kind == "none":
            return f"no block is {body}"
        lead = "exactly" if rule.kind == "exactly" else "at least"
        verb = "block is" if rule.count == 1 else "blocks are"
        return f"{lead} {rule.count} {verb} {body}"
    if isinstance(rule, SameAttribute):
        return f"all blocks are the same {rule.attr}"
    if isinstance(rule, SomeTouch):
        return "some blocks touch"
    if isinstance(rule, TouchPair):
        return f"{_noun_phrase(rule.left)} touches {_noun_phrase(rule.right)}"
    if isinstance(rule, CompareAll):
        other = render_pred(rule.other, noun=True)
        return f"{_noun_phrase(rule.subject)} is {_RELATION_WORDS[rule.relation]} every {other}"
    raise TypeError(f"not a rule: {rule!r}")


def word_count(rule: Rule) -> int:
    return len(render_rule(rule).split())
