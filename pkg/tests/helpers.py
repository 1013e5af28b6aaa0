"""Shared strategies and scene shorthand for the test suite."""

from hypothesis import strategies as st

from zendo.game import load_rule_fixture
from zendo.rules import enumerate_rules, parse_rule
from zendo.scene import Block, Scene
from zendo.vocab import ATTRIBUTES

FIXTURE_RULES = load_rule_fixture()
RULE_POOL = enumerate_rules(5) + [parse_rule(r) for r in FIXTURE_RULES]

blocks = st.builds(Block, *(st.sampled_from(values) for values in ATTRIBUTES.values()))
rules = st.sampled_from(RULE_POOL)


@st.composite
def scenes(draw, max_blocks: int = 4):
    bs = draw(st.lists(blocks, min_size=1, max_size=max_blocks))
    pairs = [(i, j) for i in range(len(bs)) for j in range(i + 1, len(bs))]
    touching = draw(st.sets(st.sampled_from(pairs))) if pairs else set()
    return Scene(tuple(bs), frozenset(touching))


def scene_of(*specs, touching=()):
    """scene_of("red large upright grounded", "blue medium left grounded", touching=[(0, 1)])"""
    out = []
    for desc in specs:
        color, size, orientation, grounded = desc.split()
        out.append(Block(color, size, orientation, grounded))
    return Scene(tuple(out), frozenset(touching))
