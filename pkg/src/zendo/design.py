"""Choosing the next experiment by expected model change."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, _likelihood_given
from .rules import Rule, eval_rule
from .scene import DEFAULT_MAX_BLOCKS, Scene, random_scene, scene_to_dict
from .smc import ParticleSet, posterior_over_rules, rule_thetas

DEFAULT_POOL_SIZE = 24
DEFAULT_MAX_RULES = 10
DEFAULT_SAMPLING_BUDGET = 500
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DesignConfig:
    pool_size: int = DEFAULT_POOL_SIZE
    max_rules: int = DEFAULT_MAX_RULES
    sampling_budget: int = DEFAULT_SAMPLING_BUDGET
    max_blocks: int = DEFAULT_MAX_BLOCKS
    touch_prob: float = 0.3
    # "eig" picks the best-scoring candidate; "random" picks uniformly (baseline).
    selection: str = "eig"

    def __post_init__(self):
        if self.pool_size < 2:
            raise ValueError("pool_size must be at least 2")
        if self.selection not in ("eig", "random"):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass
class Candidate:
    scene: Scene
    provenance: list[str] = field(default_factory=list)


@dataclass
class CandidatePool:
    candidates: list[Candidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def scenes(self) -> list[Scene]:
        return [c.scene for c in self.candidates]

    def add(self, scene: Scene, provenance: str) -> bool:
        """Add a scene, merging provenance into an existing equal scene. True if new."""
        for cand in self.candidates:
            if cand.scene == scene:
                cand.provenance.append(provenance)
                return False
        self.candidates.append(Candidate(scene.canonical(), [provenance]))
        return True


def sample_scene_satisfying(
    rule: Rule,
    target: bool,
    rng: np.random.Generator,
    budget: int = DEFAULT_SAMPLING_BUDGET,
    max_blocks: int = DEFAULT_MAX_BLOCKS,
    touch_prob: float = 0.3,
) -> Scene | None:
    """Rejection-sample a scene on which `rule` evaluates to `target`; None if the budget runs out."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    for _ in range(budget):
        scene = random_scene(rng, max_blocks, touch_prob)
        if eval_rule(rule, scene) == target:
            return scene
    return None


def generate_candidates(
    ps: ParticleSet,
    rng: np.random.Generator,
    pool_size: int = DEFAULT_POOL_SIZE,
    cfg: DesignConfig = DesignConfig(),
) -> CandidatePool:
    """One supporting and one falsifying scene per tracked rule, topped up with random scenes."""
    if pool_size < 2:
        raise ValueError("pool_size must be at least 2")
    pool = CandidatePool()
    rules = {p.text: p.rule for p in ps.particles}
    for text in list(posterior_over_rules(ps))[: cfg.max_rules]:
        for target, tag in ((True, "supports"), (False, "falsifies")):
            if len(pool) >= pool_size:
                break
            scene = sample_scene_satisfying(
                rules[text], target, rng, cfg.sampling_budget, cfg.max_blocks, cfg.touch_prob
            )
            if scene is not None:
                pool.add(scene, f"{tag}:{text}")
    attempts = 0
    while len(pool) < pool_size and attempts < 50 * pool_size:
        pool.add(random_scene(rng, cfg.max_blocks, cfg.touch_prob), "random")
        attempts += 1
    return pool


def _belief_table(ps: ParticleSet) -> tuple[list[Rule], np.ndarray, np.ndarray]:
    q0 = posterior_over_rules(ps)
    thetas = rule_thetas(ps)
    rules = {p.text: p.rule for p in ps.particles}
    texts = list(q0)
    return [rules[t] for t in texts], np.array([q0[t] for t in texts]), np.array([thetas[t] for t in texts])


def expected_model_change(ps: ParticleSet, scene: Scene, model_cfg: ModelConfig = ModelConfig()) -> float:
    """E_y[ KL(q_y || q0) ] over unique rules, with each rule's theta held fixed."""
    rules, q0, thetas = _belief_table(ps)
    return _emc(rules, q0, thetas, scene, model_cfg)


def _emc(rules, q0: np.ndarray, thetas: np.ndarray, scene: Scene, model_cfg: ModelConfig) -> float:
    if len(rules) < 2:
        return 0.0  # nothing to discriminate; avoids rounding residue when q0 sums to 1 - ulp
    holds = [eval_rule(r, scene) for r in rules]
    total = 0.0
    for y in (True, False):
        lik = np.array([_likelihood_given(h, y, t, model_cfg) for h, t in zip(holds, thetas)])
        joint = q0 * lik
        p_y = float(joint.sum())
        if p_y <= 0:
            continue
        q_y = joint / p_y
        mask = q_y > 0
        total += p_y * float(np.sum(q_y[mask] * np.log(q_y[mask] / q0[mask])))
    if total < -1e-12:
        raise ArithmeticError(f"negative expected KL {total}")
    return max(total, 0.0)


def score_candidates(ps: ParticleSet, pool: CandidatePool, model_cfg: ModelConfig = ModelConfig()) -> list[float]:
    rules, q0, thetas = _belief_table(ps)
    return [_emc(rules, q0, thetas, c.scene, model_cfg) for c in pool.candidates]


def _scene_order(scene: Scene) -> tuple:
    return (len(scene), scene.canonical_key())


def select_experiment(
    ps: ParticleSet,
    pool: CandidatePool,
    model_cfg: ModelConfig = ModelConfig(),
    scores: list[float] | None = None,
) -> Scene:
    """Highest-scoring candidate; ties go to fewer blocks, then canonical scene order."""
    if not len(pool):
        raise ValueError("cannot select from an empty candidate pool")
    if scores is None:
        scores = score_candidates(ps, pool, model_cfg)
    best = max(scores)
    tied = [c.scene for c, s in zip(pool.candidates, scores) if s >= best - TIE_TOLERANCE]
    return min(tied, key=_scene_order)


def select_random(pool: CandidatePool, rng: np.random.Generator) -> Scene:
    if not len(pool):
        raise ValueError("cannot select from an empty candidate pool")
    return pool.candidates[int(rng.integers(len(pool)))].scene


def pool_to_records(pool: CandidatePool, scores: list[float]) -> list[dict]:
    return [
        {"scene": scene_to_dict(c.scene), "provenance": list(c.provenance), "score": s}
        for c, s in zip(pool.candidates, scores)
    ]
