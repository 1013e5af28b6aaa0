"""Symbolic Zendo scenes: blocks with discrete attributes plus a touching relation."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import BudgetExceeded, SceneSyntaxError, SceneValidationError
from .vocab import ATTRIBUTE_NAMES, ATTRIBUTES, NUM_BLOCK_TYPES, VALUE_INDEX

SCENE_SCHEMA = "zendo-scene/1"
DEFAULT_MAX_BLOCKS = 4
MAX_BLOCKS_CAP = 6
DEFAULT_TOUCH_PROB = 0.3
DEFAULT_ENUMERATION_BUDGET = 100_000


@dataclass(frozen=True)
class Block:
    color: str
    size: str
    orientation: str
    grounded: str

    def __post_init__(self):
        for attr in ATTRIBUTE_NAMES:
            value = getattr(self, attr)
            if value not in ATTRIBUTES[attr]:
                raise SceneValidationError(
                    f"{attr}: unknown value {value!r} (expected one of {', '.join(ATTRIBUTES[attr])})"
                )

    def values(self) -> tuple[str, ...]:
        return tuple(getattr(self, attr) for attr in ATTRIBUTE_NAMES)

    def key(self) -> tuple[int, ...]:
        return tuple(VALUE_INDEX[v] for v in self.values())


@dataclass(frozen=True, eq=False)
class Scene:
    """An assembly of blocks.

    Block order carries no meaning: equality and hashing go through the
    canonical form, so two scenes that differ only by a relabelling of their
    blocks compare equal.
    """

    blocks: tuple[Block, ...]
    touching: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise SceneValidationError("blocks: a scene needs at least one block")
        pairs = set()
        for pair in self.touching:
            a, b = _as_pair(pair)
            if a == b:
                raise SceneValidationError(f"touching: self-touch ({a}, {b})")
            for idx in (a, b):
                if not 0 <= idx < len(blocks):
                    raise SceneValidationError(f"touching: dangling block id {idx} in pair ({a}, {b})")
            pairs.add((min(a, b), max(a, b)))
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "touching", frozenset(pairs))

    def __len__(self) -> int:
        return len(self.blocks)

    def touches(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.touching

    def neighbours(self, i: int) -> list[int]:
        return sorted(b if a == i else a for a, b in self.touching if i in (a, b))

    def values(self) -> set[str]:
        """Every attribute value that some block in the scene has."""
        return {v for block in self.blocks for v in block.values()}

    @cached_property
    def _canonical(self) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
        return _canonical_order(self)

    def canonical_key(self) -> tuple:
        order, edges = self._canonical
        return tuple(self.blocks[i].key() for i in order), edges

    def canonical(self) -> Scene:
        order, edges = self._canonical
        if list(order) == list(range(len(self.blocks))) and edges == tuple(sorted(self.touching)):
            return self
        return Scene(tuple(self.blocks[i] for i in order), frozenset(edges))

    def permuted(self, order: Sequence[int]) -> Scene:
        """Return the same scene with blocks listed in `order` (old ids)."""
        relabel = {old: new for new, old in enumerate(order)}
        return Scene(
            tuple(self.blocks[i] for i in order),
            frozenset((relabel[a], relabel[b]) for a, b in self.touching),
        )

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return self.canonical_key() == other.canonical_key()

    def __hash__(self):
        return hash(self.canonical_key())

    def __lt__(self, other: Scene) -> bool:
        return (len(self), self.canonical_key()) < (len(other), other.canonical_key())


def _as_pair(pair) -> tuple[int, int]:
    try:
        a, b = pair
    except (TypeError, ValueError):
        raise SceneValidationError(f"touching: expected a pair of block ids, got {pair!r}") from None
    if isinstance(a, bool) or isinstance(b, bool) or not isinstance(a, (int, np.integer)) or not isinstance(b, (int, np.integer)):
        raise SceneValidationError(f"touching: block ids must be integers, got {pair!r}")
    return int(a), int(b)


def _canonical_order(scene: Scene) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    n = len(scene.blocks)
    degree = [0] * n
    for a, b in scene.touching:
        degree[a] += 1
        degree[b] += 1
    sort_key = [scene.blocks[i].key() + (degree[i],) for i in range(n)]
    order = sorted(range(n), key=lambda i: (sort_key[i], i))
    groups = [list(g) for _, g in itertools.groupby(order, key=lambda i: sort_key[i])]

    # Identical blocks with equal degree are interchangeable; pick the labelling
    # with the smallest edge list so the form is a true canonical form.
    best = None
    for parts in itertools.product(*(itertools.permutations(g) for g in groups)):
        candidate = tuple(itertools.chain.from_iterable(parts))
        relabel = {old: new for new, old in enumerate(candidate)}
        edges = tuple(sorted(
            (min(relabel[a], relabel[b]), max(relabel[a], relabel[b])) for a, b in scene.touching
        ))
        if best is None or edges < best[1]:
            best = (candidate, edges)
    return best


def canonical(scene: Scene) -> Scene:
    return scene.canonical()


# -- (de)serialization -------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    scene = scene.canonical()
    return {
        "schema": SCENE_SCHEMA,
        "blocks": [
            {attr: getattr(block, attr) for attr in ATTRIBUTE_NAMES} for block in scene.blocks
        ],
        "touching": [list(pair) for pair in sorted(scene.touching)],
    }


def scene_from_dict(doc) -> Scene:
    if not isinstance(doc, dict):
        raise SceneSyntaxError("scene document must be an object")
    schema = doc.get("schema", SCENE_SCHEMA)
    if schema != SCENE_SCHEMA:
        raise SceneValidationError(f"schema: unsupported version {schema!r}")
    unknown = set(doc) - {"schema", "blocks", "touching"}
    if unknown:
        raise SceneValidationError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    raw_blocks = doc.get("blocks")
    if not isinstance(raw_blocks, list):
        raise SceneSyntaxError("blocks: expected an array")
    blocks = []
    for i, raw in enumerate(raw_blocks):
        if not isinstance(raw, dict):
            raise SceneSyntaxError(f"blocks[{i}]: expected an object")
        missing = [attr for attr in ATTRIBUTE_NAMES if attr not in raw]
        if missing:
            raise SceneValidationError(f"blocks[{i}]: missing field(s) {', '.join(missing)}")
        extra = set(raw) - set(ATTRIBUTE_NAMES) - {"id"}
        if extra:
            raise SceneValidationError(f"blocks[{i}]: unknown field(s) {', '.join(sorted(extra))}")
        try:
            blocks.append(Block(**{attr: raw[attr] for attr in ATTRIBUTE_NAMES}))
        except SceneValidationError as exc:
            raise SceneValidationError(f"blocks[{i}].{exc}") from None
    raw_touching = doc.get("touching", [])
    if not isinstance(raw_touching, list):
        raise SceneSyntaxError("touching: expected an array of pairs")
    for pair in raw_touching:
        if not isinstance(pair, list) or len(pair) != 2:
            raise SceneSyntaxError(f"touching: expected 2-element arrays, got {pair!r}")
    return Scene(tuple(blocks), frozenset(tuple(p) for p in raw_touching))


def parse_scene(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneSyntaxError(f"malformed scene document: {exc}") from None
    return scene_from_dict(doc)


def serialize_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def scene_to_text(scene: Scene) -> str:
    scene = scene.canonical()
    lines = []
    for i, block in enumerate(scene.blocks):
        others = scene.neighbours(i)
        touch = "touches " + ", ".join(str(j) for j in others) if others else "touches nothing"
        lines.append(f"block {i}: {', '.join(block.values())}, {touch}")
    return "\n".join(lines)


# -- generation --------------------------------------------------------------

def random_block(rng: np.random.Generator) -> Block:
    return Block(*(values[int(rng.integers(len(values)))] for values in ATTRIBUTES.values()))


def random_scene(
    rng: np.random.Generator,
    max_blocks: int = DEFAULT_MAX_BLOCKS,
    touch_prob: float = DEFAULT_TOUCH_PROB,
) -> Scene:
    if not 1 <= max_blocks <= MAX_BLOCKS_CAP:
        raise ValueError(f"max_blocks must be in [1, {MAX_BLOCKS_CAP}], got {max_blocks}")
    n = int(rng.integers(1, max_blocks + 1))
    blocks = tuple(random_block(rng) for _ in range(n))
    touching = frozenset(
        pair for pair in itertools.combinations(range(n), 2) if rng.random() < touch_prob
    )
    return Scene(blocks, touching)


def all_blocks() -> list[Block]:
    return [Block(*values) for values in itertools.product(*ATTRIBUTES.values())]


def count_scene_labellings(max_blocks: int) -> int:
    """Upper bound on the number of scenes enumerate_scenes must visit."""
    return sum(
        math.comb(NUM_BLOCK_TYPES + k - 1, k) * 2 ** math.comb(k, 2) for k in range(1, max_blocks + 1)
    )


def enumerate_scenes(max_blocks: int, budget: int = DEFAULT_ENUMERATION_BUDGET) -> Iterator[Scene]:
    """Yield every scene with up to `max_blocks` blocks once, in canonical form."""
    if max_blocks < 1:
        raise ValueError("max_blocks must be at least 1")
    bound = count_scene_labellings(max_blocks)
    if bound > budget:
        raise BudgetExceeded(f"enumerating scenes up to {max_blocks} blocks visits {bound} > budget {budget}")
    blocks = all_blocks()
    for k in range(1, max_blocks + 1):
        pairs = list(itertools.combinations(range(k), 2))
        for combo in itertools.combinations_with_replacement(blocks, k):
            seen = set()
            for mask in range(2 ** len(pairs)):
                touching = frozenset(p for bit, p in enumerate(pairs) if mask >> bit & 1)
                scene = Scene(combo, touching)
                key = scene.canonical_key()
                if key in seen:
                    continue
                seen.add(key)
                yield scene.canonical()


# -- observations ------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    scene: Scene
    label: bool

    def to_dict(self) -> dict:
        return {"scene": scene_to_dict(self.scene), "label": self.label}

    @classmethod
    def from_dict(cls, doc: dict) -> Observation:
        return cls(scene_from_dict(doc["scene"]), bool(doc["label"]))


class ObservationLog:
    """Append-only sequence of (scene, label) pairs."""

    def __init__(self, observations: Sequence[Observation] = ()):
        self._observations: tuple[Observation, ...] = tuple(observations)

    def append(self, obs: Observation) -> ObservationLog:
        return ObservationLog(self._observations + (obs,))

    def __len__(self) -> int:
        return len(self._observations)

    def __iter__(self) -> Iterator[Observation]:
        return iter(self._observations)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return ObservationLog(self._observations[index])
        return self._observations[index]

    def __eq__(self, other):
        return isinstance(other, ObservationLog) and self._observations == other._observations

    def __hash__(self):
        return hash(self._observations)

    def __repr__(self):
        return f"ObservationLog({len(self)} observations)"

    @property
    def latest(self) -> Observation:
        if not self._observations:
            raise IndexError("observation log is empty")
        return self._observations[-1]

    def positives(self) -> list[Scene]:
        return [o.scene for o in self._observations if o.label]
