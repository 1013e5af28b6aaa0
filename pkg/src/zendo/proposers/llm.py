"""LLM-backed rule proposals and the direct-LLM baseline player."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from ..errors import ProposerError, RuleSyntaxError, SceneSyntaxError, SceneValidationError
from ..llm import ChatClient, LlmError
from ..rules import Rule, eval_rule, parse_rule, render_rule
from ..rules.ast import RuleValidationError
from ..scene import Block, ObservationLog, Scene, scene_to_text
from ..vocab import VALUE_TO_ATTRIBUTE
from .base import ProposerRequest

log = logging.getLogger(__name__)

TEMPLATE_NAMES = (
    "batch_hard",
    "batch_fuzzy",
    "online_hard",
    "online_fuzzy",
    "local",
    "refinement",
    "direct_initial",
    "direct_followup",
    "direct_experiment",
)

# Fillers for the attribute placeholders, which the templates leave undefined.
ATT = "attributes of blocks in a structure"
ATT_CHOICES = (
    "(color: blue/red/green; size: small/medium/large; orientation: upright/left/right/strange; "
    "groundedness: grounded/ungrounded; touching: which other blocks they touch)"
)
ATT_SUMMARY = "color, size, orientation, groundedness and touching"

# Not part of the shipped templates: the baseline still has to answer test questions.
DIRECT_TEST_PROMPT = (
    "Does the following structure follow the secret rule? Answer only yes or no.\n{x}"
)

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_NUMBERED = re.compile(r"^\s*(\d+)\s*[.)]\s*(.+?)\s*$")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    return (resources.files("zendo") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")


def fill_template(template: str, **values) -> str:
    """Substitute {name} placeholders; every placeholder must be supplied."""

    def sub(match):
        key = match.group(1)
        if key not in values:
            raise KeyError(f"missing value for placeholder {{{key}}}")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, template)


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def structure_text(scene: Scene) -> str:
    return "Structure:\n" + scene_to_text(scene)


def log_text(observations: ObservationLog) -> str:
    parts = []
    for i, obs in enumerate(observations, 1):
        verdict = "good" if obs.label else "bad"
        parts.append(f"Structure {i} ({verdict}):\n{scene_to_text(obs.scene)}")
    return "\n\n".join(parts)


def feedback_text(rule: Rule, observations: ObservationLog) -> str:
    """Structures the rule gets wrong, with the output it should have given."""
    parts = []
    for obs in observations:
        if eval_rule(rule, obs.scene) != obs.label:
            expected = "yes" if obs.label else "no"
            parts.append(f"{scene_to_text(obs.scene)}\nCorrect output: {expected}")
    return "\n\n".join(parts)


def parse_numbered_rules(reply: str) -> tuple[list[Rule], int]:
    """Rules from the numbered lines of a reply, plus the number of numbered lines dropped."""
    rules, dropped = [], 0
    for line in reply.splitlines():
        match = _NUMBERED.match(line)
        if not match:
            continue
        text = match.group(2).strip().rstrip(".!;:").lower()
        try:
            rules.append(parse_rule(text))
        except (RuleSyntaxError, RuleValidationError):
            dropped += 1
            log.debug("dropping unparsable proposal %r", text)
    return rules, dropped


@dataclass
class LlmProposer:
    """Fills the prompt templates, sends them to a chat endpoint and parses the numbered replies.

    Unparsable lines are dropped and counted in `dropped`. With a fallback
    proposer, transport failures and empty replies degrade to it.
    """

    client: ChatClient
    fallback: object | None = None
    dropped: int = 0
    fallbacks: int = 0

    def prompt(self, request: ProposerRequest) -> str:
        if request.mode == "initial":
            name = "online_hard" if request.hard else "online_fuzzy"
            first = request.log[0]
            return fill_template(
                load_template(name),
                num=request.num,
                att=ATT,
                att_choices=ATT_CHOICES,
                x=structure_text(first.scene),
            )
        if request.mode == "local":
            latest = request.log.latest
            return fill_template(
                load_template("local"),
                h=render_rule(request.original_rule),
                num=math.ceil(request.num / 3),
                text_y="indeed" if latest.label else "not",
                x=structure_text(latest.scene),
            )
        if request.mode == "batch":
            name = "batch_hard" if request.hard else "batch_fuzzy"
            return fill_template(
                load_template(name), num=request.num, att_summary=ATT_SUMMARY, text_c=log_text(request.log)
            )
        return fill_template(
            load_template("refinement"),
            h=render_rule(request.original_rule),
            feedback=feedback_text(request.original_rule, request.log),
            num=request.num,
        )

    def _messages(self, request: ProposerRequest) -> list[dict]:
        return [{"role": "user", "content": self.prompt(request)}]

    def _finish(self, request: ProposerRequest, reply, rng: np.random.Generator) -> list[Rule]:
        if isinstance(reply, LlmError):
            if self.fallback is None:
                raise ProposerError(f"LLM proposer failed: {reply}") from reply
            log.warning("LLM request failed (%s); using fallback proposer", reply)
            self.fallbacks += 1
            return self.fallback.propose(request, rng)
        rules, dropped = parse_numbered_rules(reply)
        self.dropped += dropped
        if dropped:
            log.info("dropped %d unparsable proposals", dropped)
        rules = rules[: request.num]
        if not rules and self.fallback is not None:
            self.fallbacks += 1
            return self.fallback.propose(request, rng)
        return rules

    def propose(self, request: ProposerRequest, rng: np.random.Generator) -> list[Rule]:
        try:
            reply = self.client.complete(self._messages(request))
        except LlmError as exc:
            reply = exc
        return self._finish(request, reply, rng)

    def propose_many(self, requests: Sequence[ProposerRequest], rng: np.random.Generator) -> list[list[Rule]]:
        replies = self.client.complete_many([self._messages(r) for r in requests])
        return [self._finish(req, reply, rng) for req, reply in zip(requests, replies)]


# -- tolerant scene parsing for direct-LLM replies ---------------------------

_WORD = re.compile(r"[a-z]+|\d+")
_DEFAULTS = {"color": None, "size": "medium", "orientation": "upright", "grounded": "grounded"}


def parse_scene_text(text: str) -> Scene:
    """Best-effort scene from a free-form block list, one block per line.

    A line is a block when it names a colour. Blocks may carry a label
    ("block 2:", "2."); touch lists refer to those labels. Missing size,
    orientation or groundedness fall back to medium / upright / grounded.
    """
    entries = []
    for line in text.lower().splitlines():
        tokens = _WORD.findall(line)
        attrs = dict(_DEFAULTS)
        for tok in tokens:
            attr = VALUE_TO_ATTRIBUTE.get(tok)
            if attr is not None:
                attrs[attr] = tok
        if attrs["color"] is None:
            continue
        label = None
        head = re.match(r"^\s*(?:[-*]\s*)?(?:block\s*)?(\d+)\s*[:.)-]", line)
        if head:
            label = int(head.group(1))
        touches: list[int] = []
        tail = re.split(r"\btouch\w*\b", line, maxsplit=1)
        if len(tail) == 2 and not re.match(r"\s*(nothing|none|no\b)", tail[1]):
            touches = [int(n) for n in re.findall(r"\d+", tail[1])]
        entries.append((label, Block(**attrs), touches))
    if not entries:
        raise SceneSyntaxError("no blocks found in structure description")
    labels = {}
    for i, (label, _, _) in enumerate(entries):
        labels.setdefault(label if label is not None else i, i)
    touching = set()
    for i, (_, _, touches) in enumerate(entries):
        for ref in touches:
            j = labels.get(ref)
            if j is None or j == i:
                continue
            touching.add((min(i, j), max(i, j)))
    try:
        return Scene(tuple(b for _, b, _ in entries), frozenset(touching)).canonical()
    except SceneValidationError as exc:
        raise SceneSyntaxError(str(exc)) from None


def parse_yes_no(text: str) -> bool | None:
    words = _WORD.findall(text.lower())
    for word in words:
        if word in ("yes", "true"):
            return True
        if word in ("no", "not", "false"):
            return False
    return None


@dataclass
class DirectLlmPlayer:
    """Single-owner chat transcript for the direct-LLM baseline."""

    client: ChatClient
    messages: list[dict] = field(default_factory=list)
    summaries: list[str] = field(default_factory=list)

    def _ask(self, content: str) -> str:
        self.messages.append({"role": "user", "content": content})
        reply = self.client.complete(self.messages)
        self.messages.append({"role": "assistant", "content": reply})
        return reply

    def start(self, initial: Scene) -> str:
        self.messages.clear()
        summary = self._ask(fill_template(load_template("direct_initial"), text_c=scene_to_text(initial)))
        self.summaries.append(summary)
        return summary

    def next_experiment(self) -> Scene:
        reply = self._ask(load_template("direct_experiment"))
        try:
            return parse_scene_text(reply)
        except SceneSyntaxError:
            # one re-ask, then give up
            reply = self._ask(
                "I could not read that structure. List one block per line with its color, size, "
                "orientation, groundedness and the blocks it touches.\n" + load_template("direct_experiment")
            )
            return parse_scene_text(reply)

    def feedback(self, label: bool) -> str:
        text = fill_template(load_template("direct_followup"), verdict="yes" if label else "no")
        summary = self._ask(text)
        self.summaries.append(summary)
        return summary

    def predict(self, scene: Scene) -> float:
        """Probability-like answer: 1 for yes, 0 for no, 0.5 when unreadable."""
        conversation = self.messages + [
            {"role": "user", "content": fill_template(DIRECT_TEST_PROMPT, x=scene_to_text(scene))}
        ]
        answer = parse_yes_no(self.client.complete(conversation))
        return 0.5 if answer is None else float(answer)
