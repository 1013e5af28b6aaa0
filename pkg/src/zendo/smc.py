"""Online inference over rules with sequential Monte Carlo.

Each particle carries a rule, its MAP fuzziness and an unnormalized log
weight. After every experiment the set is reweighted, its lowest-weight
rules are revised by local moves (rejuvenation), and it is resampled.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateBeliefError, InitializationError
from .model import (
    EvidenceCounts,
    ModelConfig,
    _joint_from_counts,
    joint_logprob,
    likelihood,
    log_likelihood,
    log_marginal_likelihood,
    log_prior_h,
    map_theta_from_counts,
    score_rule,
)
from .proposers.base import Proposer, ProposerRequest, propose_many
from .rules import Rule, enumerate_rules, eval_rule, render_rule, word_count
from .scene import Observation, ObservationLog, Scene

log = logging.getLogger(__name__)

BELIEFS_SCHEMA = "zendo-beliefs/1"
RESAMPLING_SCHEMES = ("systematic", "multinomial")


@dataclass(frozen=True)
class SmcConfig:
    num_particles: int = 25
    num_local_moves: int = 15
    rejuvenation_target_count: int = 5
    resampling: str = "systematic"
    rejuvenate: bool = True
    init_weights_include_likelihood: bool = False
    # Resample only when ESS / n falls below this fraction; None resamples every step.
    ess_threshold: float | None = None

    def __post_init__(self):
        for name in ("num_particles", "num_local_moves", "rejuvenation_target_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.resampling not in RESAMPLING_SCHEMES:
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")


@dataclass(frozen=True)
class Particle:
    rule: Rule
    theta: float
    log_weight: float

    @property
    def text(self) -> str:
        return render_rule(self.rule)


@dataclass(frozen=True)
class Move:
    original: str
    proposed: str
    joint_before: float
    joint_after: float
    particles_moved: int


@dataclass
class ParticleSet:
    particles: tuple[Particle, ...]
    log: ObservationLog
    config: SmcConfig
    rng: np.random.Generator
    # rejuvenation moves executed by the most recent rejuvenate() call
    moves: tuple[Move, ...] = ()
    dropped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.particles)

    def log_weights(self) -> np.ndarray:
        return np.array([p.log_weight for p in self.particles], dtype=float)

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights())

    def effective_sample_size(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / np.sum(w * w))


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(log_weights)) or np.any(np.isnan(log_weights)):
        raise DegenerateBeliefError("all particle weights are zero")
    return np.exp(log_weights - logsumexp(log_weights))


# -- resampling --------------------------------------------------------------

def systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cumulative = np.cumsum(weights)
    cumulative /= cumulative[-1]
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), len(weights) - 1)


def multinomial_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(weights), size=n, p=weights)


def resample(ps: ParticleSet) -> ParticleSet:
    n = ps.config.num_particles
    weights = ps.normalized_weights()
    if ps.config.resampling == "systematic":
        idx = systematic_indices(weights, n, ps.rng)
    else:
        idx = multinomial_indices(weights, n, ps.rng)
    uniform = -math.log(n)
    particles = tuple(replace(ps.particles[i], log_weight=uniform) for i in idx)
    return replace(ps, particles=particles)


# -- initialization ----------------------------------------------------------

def _spread(rules: Sequence[Rule], n: int, rng: np.random.Generator) -> list[Rule]:
    """n draws from the uniform distribution over `rules`, stratified for low variance."""
    m = len(rules)
    if m >= n:
        return list(rules[:n])
    out = [rules[i] for i in range(m) for _ in range(n // m)]
    extra = rng.choice(m, size=n - len(out), replace=False) if n % m else []
    out += [rules[int(i)] for i in sorted(extra)]
    return out


def particles_from_rules(
    rules: Sequence[Rule],
    log: ObservationLog,
    cfg: SmcConfig,
    model_cfg: ModelConfig,
    rng: np.random.Generator,
    include_likelihood: bool,
) -> ParticleSet:
    cache: dict[str, tuple[float, float]] = {}
    particles = []
    for rule in _spread(rules, cfg.num_particles, rng):
        text = render_rule(rule)
        if text not in cache:
            counts = EvidenceCounts.of(rule, log)
            theta = map_theta_from_counts(counts.hold_pos, counts.hold_neg, model_cfg)
            weight = log_prior_h(rule)
            if include_likelihood:
                weight += counts.log_likelihood(theta, model_cfg)
            cache[text] = (theta, weight)
        theta, weight = cache[text]
        particles.append(Particle(rule, theta, weight))
    return ParticleSet(tuple(particles), log, cfg, rng)


def init_particles(
    proposer: Proposer,
    x1: Scene,
    y1: bool,
    cfg: SmcConfig = SmcConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    rng: np.random.Generator | None = None,
    *,
    resample_after: bool = True,
) -> ParticleSet:
    """Seed beliefs from the proposer's guesses about the first example.

    Weights are the prior only (uniform proposal) unless
    cfg.init_weights_include_likelihood is set.
    """
    rng = rng if rng is not None else np.random.default_rng()
    first = ObservationLog([Observation(x1, bool(y1))])
    request = ProposerRequest("initial", first, cfg.num_particles, hard=model_cfg.hard)
    rules = _unique(proposer.propose(request, rng))
    if not rules:
        raise InitializationError("proposer returned no usable rules")
    ps = particles_from_rules(rules, first, cfg, model_cfg, rng, cfg.init_weights_include_likelihood)
    return resample(ps) if resample_after else ps


def _unique(rules: Iterable[Rule]) -> list[Rule]:
    seen = set()
    out = []
    for rule in rules:
        text = render_rule(rule)
        if text not in seen:
            seen.add(text)
            out.append(rule)
    return out


# -- reweighting -------------------------------------------------------------

def reweight(ps: ParticleSet, obs: Observation, model_cfg: ModelConfig = ModelConfig()) -> ParticleSet:
    previous = ps.log
    extended = previous.append(obs)
    cache: dict[tuple[str, float], tuple[float, float]] = {}
    particles = []
    for p in ps.particles:
        key = (p.text, p.theta)
        if key not in cache:
            counts_prev = EvidenceCounts.of(p.rule, previous)
            counts_new = EvidenceCounts.of(p.rule, extended)
            theta_new = map_theta_from_counts(counts_new.hold_pos, counts_new.hold_neg, model_cfg)
            lp = log_prior_h(p.rule)
            delta = log_likelihood(obs.label, obs.scene, p.rule, theta_new, model_cfg)
            # correction for moving theta_old -> theta_new, evaluated on the old log
            delta += _joint_from_counts(lp, counts_prev, theta_new, model_cfg) - _joint_from_counts(
                lp, counts_prev, p.theta, model_cfg
            )
            cache[key] = (theta_new, delta)
        theta_new, delta = cache[key]
        particles.append(Particle(p.rule, theta_new, p.log_weight + delta))
    return replace(ps, particles=tuple(particles), log=extended, moves=())


# -- rejuvenation ------------------------------------------------------------

def _rule_groups(ps: ParticleSet) -> dict[str, dict]:
    weights = ps.normalized_weights()
    groups: dict[str, dict] = {}
    for i, (p, w) in enumerate(zip(ps.particles, weights)):
        g = groups.setdefault(p.text, {"rule": p.rule, "indices": [], "weight": 0.0, "theta": p.theta})
        g["indices"].append(i)
        g["weight"] += float(w)
    return groups


def rejuvenation_targets(ps: ParticleSet) -> list[str]:
    """Lowest-weight unique rules; ties go to longer rules, then alphabetical."""
    groups = _rule_groups(ps)
    order = sorted(groups, key=lambda t: (groups[t]["weight"], -word_count(groups[t]["rule"]), t))
    return order[: ps.config.rejuvenation_target_count]


def rejuvenate(ps: ParticleSet, local_proposer: Proposer, model_cfg: ModelConfig = ModelConfig()) -> ParticleSet:
    if len(ps.log) == 0:
        raise ValueError("rejuvenation needs at least one observation")
    latest = ps.log.latest
    groups = _rule_groups(ps)
    targets = rejuvenation_targets(ps)
    requests = [
        ProposerRequest("local", ps.log, ps.config.num_local_moves, original_rule=groups[t]["rule"], hard=model_cfg.hard)
        for t in targets
    ]
    proposals = propose_many(local_proposer, requests, ps.rng)

    particles = list(ps.particles)
    moves = []
    for text, candidates in zip(targets, proposals):
        group = groups[text]
        original, theta_old = group["rule"], group["theta"]
        joint_old = joint_logprob(original, theta_old, ps.log, model_cfg)
        scored = []
        for cand in _unique(candidates):
            cand_text = render_rule(cand)
            if cand_text == text:
                continue
            theta, joint = score_rule(cand, ps.log, model_cfg)
            if joint > joint_old:
                scored.append((cand, cand_text, theta, joint))
        if not scored:
            continue
        joints = np.array([s[3] for s in scored])
        probs = np.exp(joints - logsumexp(joints))
        cand, cand_text, theta_new, joint_new = scored[int(ps.rng.choice(len(scored), p=probs))]
        delta = log_likelihood(latest.label, latest.scene, cand, theta_new, model_cfg) - log_likelihood(
            latest.label, latest.scene, original, theta_old, model_cfg
        )
        for i in group["indices"]:
            particles[i] = Particle(cand, theta_new, particles[i].log_weight + delta)
        moves.append(Move(text, cand_text, joint_old, joint_new, len(group["indices"])))
    return replace(ps, particles=tuple(particles), moves=tuple(moves))


def step(
    ps: ParticleSet,
    obs: Observation,
    local_proposer: Proposer | None,
    model_cfg: ModelConfig = ModelConfig(),
) -> ParticleSet:
    """reweight -> rejuvenate -> resample."""
    ps = reweight(ps, obs, model_cfg)
    if ps.config.rejuvenate and local_proposer is not None:
        ps = rejuvenate(ps, local_proposer, model_cfg)
    threshold = ps.config.ess_threshold
    if threshold is None or ps.effective_sample_size() < threshold * ps.config.num_particles:
        moves = ps.moves
        ps = resample(ps)
        ps.moves = moves
    return ps


# -- batch re-proposal (ablation) -------------------------------------------

def batch_beliefs(
    proposer: Proposer,
    log: ObservationLog,
    cfg: SmcConfig,
    model_cfg: ModelConfig,
    rng: np.random.Generator,
    *,
    num_proposals: int | None = None,
    refine: bool = False,
) -> ParticleSet:
    """Discard old beliefs; propose afresh from the whole log and keep the best rules.

    Every proposal is scored by its joint probability at MAP theta; the top
    num_particles unique rules form the belief set, weighted by that joint.
    With `refine`, rules that misclassify some observation also get
    refinement proposals, which join the pool before scoring.
    """
    num = num_proposals or cfg.num_particles
    rules = _unique(proposer.propose(ProposerRequest("batch", log, num, hard=model_cfg.hard), rng))
    if refine:
        refined = []
        requests = [
            ProposerRequest("refinement", log, num, original_rule=r, hard=model_cfg.hard)
            for r in rules
            if misclassified(r, log)
        ]
        for extra in propose_many(proposer, requests, rng):
            refined.extend(extra)
        rules = _unique(rules + refined)
    if not rules:
        raise InitializationError("batch proposer returned no usable rules")
    scored = []
    for rule in rules:
        theta, joint = score_rule(rule, log, model_cfg)
        scored.append((joint, render_rule(rule), rule, theta))
    scored.sort(key=lambda s: (-s[0], s[1]))
    kept = scored[: cfg.num_particles]
    particles = tuple(Particle(rule, theta, joint) for joint, _, rule, theta in kept)
    return ParticleSet(particles, log, cfg, rng)


def misclassified(rule: Rule, log: ObservationLog) -> list[Observation]:
    return [obs for obs in log if eval_rule(rule, obs.scene) != obs.label]


# -- read-outs ---------------------------------------------------------------

def posterior_over_rules(ps: ParticleSet) -> dict[str, float]:
    """Normalized weight mass per canonical rule text, largest first."""
    mass: dict[str, float] = defaultdict(float)
    for p, w in zip(ps.particles, ps.normalized_weights()):
        mass[p.text] += float(w)
    return dict(sorted(mass.items(), key=lambda kv: (-kv[1], kv[0])))


def rule_thetas(ps: ParticleSet) -> dict[str, float]:
    """Weight-averaged theta per canonical rule."""
    num: dict[str, float] = defaultdict(float)
    den: dict[str, float] = defaultdict(float)
    for p, w in zip(ps.particles, ps.normalized_weights()):
        num[p.text] += float(w) * p.theta
        den[p.text] += float(w)
    out = {}
    for text in num:
        if den[text] > 0:
            out[text] = num[text] / den[text]
        else:
            out[text] = next(p.theta for p in ps.particles if p.text == text)
    return out


def posterior_predictive(ps: ParticleSet, scene: Scene, model_cfg: ModelConfig = ModelConfig()) -> float:
    weights = ps.normalized_weights()
    return float(sum(w * likelihood(True, scene, p.rule, p.theta, model_cfg) for p, w in zip(ps.particles, weights)))


def exact_posterior(
    size_bound: int,
    log: ObservationLog,
    model_cfg: ModelConfig = ModelConfig(),
    rules: Sequence[Rule] | None = None,
) -> dict[str, float]:
    """Reference posterior by enumeration: theta integrated on the grid, prior 1/word_count."""
    rules = list(rules) if rules is not None else enumerate_rules(size_bound)
    texts = [render_rule(r) for r in rules]
    logm = np.array([log_marginal_likelihood(r, log, model_cfg) for r in rules])
    probs = np.exp(logm - logsumexp(logm))
    return dict(zip(texts, probs.tolist()))


def total_variation(p: dict[str, float], q: dict[str, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# -- snapshots ---------------------------------------------------------------

def snapshot(ps: ParticleSet, model_cfg: ModelConfig = ModelConfig()) -> dict:
    weights = ps.normalized_weights()
    particles = []
    for p, w in zip(ps.particles, weights):
        entry = {"rule": p.text, "weight": float(w)}
        if not model_cfg.hard:
            entry["theta"] = p.theta
        particles.append(entry)
    return {
        "schema": BELIEFS_SCHEMA,
        "log_length": len(ps.log),
        "particles": particles,
        "posterior": posterior_over_rules(ps),
    }
