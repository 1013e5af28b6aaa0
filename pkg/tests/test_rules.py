from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import FIXTURE_RULES, RULE_POOL, rules, scene_of, scenes
from zendo.errors import BudgetExceeded, MutationNotApplicable, RuleSyntaxError
from zendo.rules import (
    CompareAll,
    Literal,
    MutationKind,
    Pred,
    Quantified,
    SameAttribute,
    TouchPair,
    enumerate_rules,
    eval_rule,
    literals_of,
    mutate_rule,
    neighbors,
    parse_rule,
    preds_of,
    render_rule,
    word_count,
)
from zendo.rules.ast import RuleValidationError
from zendo.scene import enumerate_scenes

FIG2 = scene_of("red large upright grounded", "blue medium upright grounded", touching=[(0, 1)])


def lit(value, negated=False):
    from zendo.vocab import attribute_of

    return Literal(attribute_of(value), value, negated)


class TestParse:
    def test_existential(self):
        assert parse_rule("there is a red block") == Quantified("exists", Pred.of(lit("red")))

    def test_touch_pair(self):
        assert parse_rule("a blue block touches a red block") == TouchPair(Pred.of(lit("blue")), Pred.of(lit("red")))

    def test_out_of_vocabulary(self):
        with pytest.raises(RuleSyntaxError, match="purple") as info:
            parse_rule("there is a purple block")
        assert info.value.position == 3

    @pytest.mark.parametrize(
        "text",
        ["", "there is", "there is a red block block", "every block is", "exactly 0 blocks are red", "exactly 9 blocks are red",
         "a red block touches", "all blocks are the same weight", "there is a red block and"],
    )
    def test_syntax_errors(self, text):
        with pytest.raises((RuleSyntaxError, RuleValidationError)):
            parse_rule(text)

    def test_case_and_paraphrase(self):
        assert render_rule(parse_rule("There is a green block that is upright")) == "there is a green upright block"
        assert render_rule(parse_rule("THERE IS A RED BLOCK")) == "there is a red block"

    def test_fixture_rules_round_trip(self):
        assert len(FIXTURE_RULES) == 9
        for text in FIXTURE_RULES:
            assert render_rule(parse_rule(text)) == text


class TestRender:
    def test_canonical(self):
        assert render_rule(Quantified("exists", Pred.of(lit("red")))) == "there is a red block"

    def test_disjunction(self):
        rule = Quantified("forall", Pred.any_of(lit("blue"), lit("small")))
        assert render_rule(rule) == "every block is blue or small"

    @given(rules)
    def test_round_trip(self, rule):
        assert parse_rule(render_rule(rule)) == rule

    @given(rules)
    def test_render_idempotent(self, rule):
        text = render_rule(rule)
        assert render_rule(parse_rule(text)) == text


class TestWordCount:
    def test_examples(self):
        assert word_count(parse_rule("there is a red block")) == 5
        assert word_count(parse_rule("every block is blue or small")) == 6

    @given(rules)
    def test_positive_and_whitespace_tokens(self, rule):
        assert word_count(rule) == len(render_rule(rule).split()) >= 1


# Independent oracles for the nine benchmark rules, written directly over block lists.
def _blocks(scene):
    return scene.blocks


ORACLES = {
    "there is a red block": lambda s: any(b.color == "red" for b in s.blocks),
    "all blocks are the same size": lambda s: len({b.size for b in s.blocks}) == 1,
    "no block is upright": lambda s: all(b.orientation != "upright" for b in s.blocks),
    "exactly 1 block is blue": lambda s: sum(b.color == "blue" for b in s.blocks) == 1,
    "there is a small blue block": lambda s: any(b.color == "blue" and b.size == "small" for b in s.blocks),
    "every block is blue or small": lambda s: all(b.color == "blue" or b.size == "small" for b in s.blocks),
    "a red block is bigger than every non-red block": lambda s: any(
        a.color == "red" and all(_rank(a) > _rank(b) for b in s.blocks if b.color != "red") for a in s.blocks
    ),
    "some blocks touch": lambda s: bool(s.touching),
    "a blue block touches a red block": lambda s: any(
        {s.blocks[i].color, s.blocks[j].color} == {"blue", "red"} for i, j in s.touching
    ),
}


def _rank(block):
    return ["small", "medium", "large"].index(block.size)


R, B, G = "red", "blue", "green"


def blk(color, size="medium", orientation="left", grounded="grounded"):
    return f"{color} {size} {orientation} {grounded}"


# at least 3 positive and 3 negative hand-built scenes per rule
HAND_SCENES = {
    "there is a red block": (
        [scene_of(blk(R)), scene_of(blk(B), blk(R, "small")), scene_of(blk(G), blk(G), blk(R, "large", "upright"))],
        [scene_of(blk(B)), scene_of(blk(G), blk(B)), scene_of(blk(B, "large"), blk(G, "small"), touching=[(0, 1)])],
    ),
    "all blocks are the same size": (
        [scene_of(blk(R)), scene_of(blk(R, "small"), blk(B, "small")), scene_of(blk(G, "large"), blk(B, "large"), blk(R, "large"))],
        [scene_of(blk(R, "small"), blk(R, "large")), scene_of(blk(B, "medium"), blk(B, "small")),
         scene_of(blk(G, "large"), blk(G, "large"), blk(G, "medium"))],
    ),
    "no block is upright": (
        [scene_of(blk(R, orientation="left")), scene_of(blk(B, orientation="strange"), blk(G, orientation="right")),
         scene_of(blk(G, orientation="right"), blk(G, orientation="left"), blk(R, orientation="strange"))],
        [scene_of(blk(R, orientation="upright")), scene_of(blk(B, orientation="left"), blk(B, orientation="upright")),
         scene_of(blk(G, orientation="upright"), blk(G, orientation="upright"))],
    ),
    "exactly 1 block is blue": (
        [scene_of(blk(B)), scene_of(blk(B), blk(R)), scene_of(blk(G), blk(B, "small"), blk(R))],
        [scene_of(blk(R)), scene_of(blk(B), blk(B)), scene_of(blk(B), blk(G), blk(B, "large"))],
    ),
    "there is a small blue block": (
        [scene_of(blk(B, "small")), scene_of(blk(R, "small"), blk(B, "small")), scene_of(blk(B, "large"), blk(B, "small"))],
        [scene_of(blk(B, "large")), scene_of(blk(B, "medium"), blk(R, "small")), scene_of(blk(G, "small"))],
    ),
    "every block is blue or small": (
        [scene_of(blk(B, "large")), scene_of(blk(R, "small"), blk(B, "medium")), scene_of(blk(G, "small"), blk(B, "small"))],
        [scene_of(blk(R, "large")), scene_of(blk(B), blk(G, "medium")), scene_of(blk(R, "small"), blk(G, "large"))],
    ),
    "a red block is bigger than every non-red block": (
        [scene_of(blk(R, "large"), blk(B, "small"), blk(G, "medium")), scene_of(blk(R, "small")),
         scene_of(blk(R, "small"), blk(R, "large"), blk(B, "medium"))],
        [scene_of(blk(R, "medium"), blk(B, "large")), scene_of(blk(B, "small")),
         scene_of(blk(R, "medium"), blk(G, "medium"))],
    ),
    "some blocks touch": (
        [scene_of(blk(R), blk(B), touching=[(0, 1)]), scene_of(blk(G), blk(G), blk(G), touching=[(1, 2)]),
         scene_of(blk(R), blk(R), touching=[(0, 1)])],
        [scene_of(blk(R)), scene_of(blk(R), blk(B)), scene_of(blk(G), blk(B), blk(R))],
    ),
    "a blue block touches a red block": (
        [FIG2, scene_of(blk(R), blk(G), blk(B), touching=[(0, 2)]), scene_of(blk(B, "small"), blk(R, "small"), touching=[(0, 1)])],
        [scene_of(blk(B), blk(R)), scene_of(blk(B), blk(B), blk(R), touching=[(0, 1)]),
         scene_of(blk(R), blk(G), blk(B), touching=[(0, 1), (1, 2)])],
    ),
}


class TestEval:
    def test_fig2(self):
        assert eval_rule(parse_rule("a blue block touches a red block"), FIG2)

    def test_no_upright(self):
        assert not eval_rule(parse_rule("no block is upright"), scene_of("red large upright grounded"))

    def test_comparison(self):
        rule = parse_rule("a red block is bigger than every non-red block")
        yes = scene_of("red large left grounded", "blue small left grounded", "green medium left grounded")
        no = scene_of("red medium left grounded", "blue large left grounded")
        assert eval_rule(rule, yes) and not eval_rule(rule, no)

    @pytest.mark.parametrize("text", FIXTURE_RULES)
    def test_hand_scenes(self, text):
        positives, negatives = HAND_SCENES[text]
        assert len(positives) >= 3 and len(negatives) >= 3
        rule = parse_rule(text)
        for scene in positives:
            assert eval_rule(rule, scene) and ORACLES[text](scene)
        for scene in negatives:
            assert not eval_rule(rule, scene) and not ORACLES[text](scene)

    def test_exhaustive_oracle_agreement(self):
        parsed = {t: parse_rule(t) for t in FIXTURE_RULES}
        for scene in enumerate_scenes(2):
            for text, rule in parsed.items():
                assert eval_rule(rule, scene) == ORACLES[text](scene), (text, scene)

    def test_de_morgan(self):
        none = parse_rule("no block is upright")
        some = parse_rule("there is an upright block")
        for scene in enumerate_scenes(2):
            assert eval_rule(none, scene) == (not eval_rule(some, scene))

    def test_counting(self):
        three_red = scene_of(blk(R), blk(R), blk(R, "large"))
        assert eval_rule(parse_rule("at least 2 blocks are red"), three_red)
        assert not eval_rule(parse_rule("exactly 2 blocks are red"), three_red)
        assert eval_rule(parse_rule("exactly 3 blocks are red"), three_red)

    def test_pair_ranges_over_distinct_blocks(self):
        # a single red block does not touch itself, nor is it bigger than itself
        one = scene_of(blk(R, "large"))
        assert not eval_rule(parse_rule("a red block touches a red block"), one)
        assert eval_rule(parse_rule("a red block is bigger than every red block"), one)

    def test_same_attribute(self):
        assert eval_rule(SameAttribute("color"), scene_of(blk(R), blk(R, "small")))
        assert not eval_rule(SameAttribute("color"), scene_of(blk(R), blk(B)))

    @given(rules, scenes(), st.randoms())
    def test_order_invariance(self, rule, scene, random):
        order = list(range(len(scene)))
        random.shuffle(order)
        assert eval_rule(rule, scene) == eval_rule(rule, scene.permuted(order))

    @given(rules, scenes())
    def test_deterministic(self, rule, scene):
        assert eval_rule(rule, scene) == eval_rule(rule, scene)


def _literal_diff(old, new):
    a, b = Counter(literals_of(old)), Counter(literals_of(new))
    return a - b, b - a


class TestMutate:
    def test_examples(self):
        green = parse_rule("there is a green block")
        changes = {render_rule(r) for r in neighbors(green, "attribute_change")}
        additions = {render_rule(r) for r in neighbors(green, "attribute_addition")}
        quantifiers = {render_rule(r) for r in neighbors(green, "quantifier_change")}
        assert "there is a blue block" in changes
        assert "there is a green upright block" in additions
        assert "exactly 2 blocks are green" in quantifiers

    def test_inapplicable(self):
        with pytest.raises(MutationNotApplicable):
            mutate_rule(parse_rule("some blocks touch"), "attribute_change", np.random.default_rng(0))
        with pytest.raises(MutationNotApplicable):
            mutate_rule(parse_rule("all blocks are the same size"), "quantifier_change", np.random.default_rng(0))

    @given(rules, st.sampled_from(list(MutationKind)), st.integers(0, 2**32 - 1))
    def test_locality(self, rule, kind, seed):
        try:
            new = mutate_rule(rule, kind, np.random.default_rng(seed))
        except MutationNotApplicable:
            assert not neighbors(rule, kind)
            return
        assert render_rule(new) != render_rule(rule)
        assert parse_rule(render_rule(new)) == new
        removed, added = _literal_diff(rule, new)
        if kind is MutationKind.QUANTIFIER_CHANGE:
            assert isinstance(new, Quantified) and new.pred == rule.pred
            assert (new.kind, new.count) != (rule.kind, rule.count)
        elif kind is MutationKind.ATTRIBUTE_ADDITION:
            assert not removed and sum(added.values()) == 1
            if isinstance(new, (TouchPair, CompareAll)) and isinstance(rule, Quantified):
                assert rule.pred in preds_of(new)
        else:
            if isinstance(rule, SameAttribute):
                assert isinstance(new, SameAttribute)
            else:
                assert sum(removed.values()) == 1 and sum(added.values()) == 1
                assert type(new) is type(rule)

    def test_deterministic_under_seed(self):
        rule = parse_rule("every block is blue or small")
        a = [mutate_rule(rule, k, np.random.default_rng(3)) for k in MutationKind]
        b = [mutate_rule(rule, k, np.random.default_rng(3)) for k in MutationKind]
        assert a == b


class TestEnumerate:
    def test_single_attribute_existentials(self):
        small = enumerate_rules(2)
        assert len(small) == 3 + 3 + 4 + 2
        assert all(isinstance(r, Quantified) and r.kind == "exists" and len(literals_of(r)) == 1 for r in small)

    def test_unique_and_round_trip(self):
        texts = [render_rule(r) for r in RULE_POOL[:1351]]
        assert len(set(texts)) == len(texts)
        for rule in enumerate_rules(4):
            assert parse_rule(render_rule(rule)) == rule

    def test_covers_benchmark_rules(self):
        texts = {render_rule(r) for r in enumerate_rules()}
        assert set(FIXTURE_RULES) <= texts

    def test_monotone_in_bound(self):
        smaller = {render_rule(r) for r in enumerate_rules(3)}
        larger = {render_rule(r) for r in enumerate_rules(4)}
        assert smaller < larger

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            enumerate_rules(7, budget=100)
