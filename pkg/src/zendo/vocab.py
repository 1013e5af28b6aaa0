"""Block attribute vocabulary shared by scenes and rules."""

from __future__ import annotations

# Attribute order here is the order attributes are listed and serialized.
ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "color": ("red", "blue", "green"),
    "size": ("small", "medium", "large"),
    "orientation": ("upright", "left", "right", "strange"),
    "grounded": ("grounded", "ungrounded"),
}

ATTRIBUTE_NAMES: tuple[str, ...] = tuple(ATTRIBUTES)

VALUE_TO_ATTRIBUTE: dict[str, str] = {
    value: attr for attr, values in ATTRIBUTES.items() for value in values
}

VALUE_INDEX: dict[str, int] = {
    value: i for values in ATTRIBUTES.values() for i, value in enumerate(values)
}

SIZE_RANK: dict[str, int] = {"small": 0, "medium": 1, "large": 2}

# Attributes usable in "all blocks are the same <attr>".
SAME_ATTRIBUTES: tuple[str, ...] = ("color", "size", "orientation")

# Attributes whose values may be negated with the "non-" prefix.
NEGATABLE_ATTRIBUTES: tuple[str, ...] = ("color",)

NUM_BLOCK_TYPES = 1
for _values in ATTRIBUTES.values():
    NUM_BLOCK_TYPES *= len(_values)
del _values


def attribute_of(value: str) -> str:
    try:
        return VALUE_TO_ATTRIBUTE[value]
    except KeyError:
        raise ValueError(f"unknown attribute value {value!r}") from None
