from .base import MODES, Proposer, ProposerRequest, propose_many
from .grammar import EnumerationProposer, GrammarProposer, scene_rules
from .llm import DirectLlmPlayer, LlmProposer, load_template, parse_numbered_rules, parse_scene_text

__all__ = [
    "MODES",
    "Proposer",
    "ProposerRequest",
    "propose_many",
    "EnumerationProposer",
    "GrammarProposer",
    "scene_rules",
    "DirectLlmPlayer",
    "LlmProposer",
    "load_template",
    "parse_numbered_rules",
    "parse_scene_text",
]
