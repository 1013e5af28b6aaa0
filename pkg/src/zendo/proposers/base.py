from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..rules import Rule
from ..scene import ObservationLog

MODES = ("initial", "local", "batch", "refinement")


@dataclass(frozen=True)
class ProposerRequest:
    mode: str
    log: ObservationLog
    num: int
    original_rule: Rule | None = None
    # Whether the learner uses the deterministic likelihood (selects prompt variants).
    hard: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown proposer mode {self.mode!r}")
        if self.num < 1:
            raise ValueError("num must be at least 1")
        if self.mode in ("local", "refinement") and self.original_rule is None:
            raise ValueError(f"{self.mode} requests need original_rule")
        if len(self.log) == 0:
            raise ValueError("proposer requests need at least one observation")


class Proposer(Protocol):
    def propose(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]: ...


def propose_many(proposer: Proposer, requests: Sequence[ProposerRequest], rng: np.random.Generator) -> list[list[Rule]]:
    """Answer several requests; proposers that can batch (e.g. over HTTP) do so."""
    batched = getattr(proposer, "propose_many", None)
    if batched is not None:
        return batched(requests, rng)
    return [proposer.propose(req, rng) for req in requests]
