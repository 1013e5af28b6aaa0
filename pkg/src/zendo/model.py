"""Hypothesis prior, fuzziness prior, likelihood and MAP fuzziness."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .rules import Rule, eval_rule, word_count
from .scene import ObservationLog, Scene


@dataclass(frozen=True)
class ModelConfig:
    epsilon: float = 0.1
    theta_prior_mean: float = 0.6
    theta_prior_stddev: float = 0.1
    theta_low: float = 0.5
    theta_high: float = 1.0
    theta_grid_points: int = 501
    # Deterministic likelihood: p(y=1) = 1 - epsilon if the rule holds, else epsilon.
    hard: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")
        if not 0 < self.theta_low < self.theta_high <= 1:
            raise ValueError("theta range must satisfy 0 < low < high <= 1")
        if self.theta_prior_stddev <= 0:
            raise ValueError("theta_prior_stddev must be positive")
        if self.theta_grid_points < 2:
            raise ValueError("theta_grid_points must be at least 2")

    @property
    def theta_range(self) -> tuple[float, float]:
        return (self.theta_low, self.theta_high)

    def theta_grid(self) -> np.ndarray:
        return np.linspace(self.theta_low, self.theta_high, self.theta_grid_points)


def prior_h(rule: Rule) -> float:
    return 1.0 / word_count(rule)


def log_prior_h(rule: Rule) -> float:
    return -math.log(word_count(rule))


@lru_cache(maxsize=64)
def _theta_log_normalizer(cfg: ModelConfig) -> float:
    mu, sigma = cfg.theta_prior_mean, cfg.theta_prior_stddev
    mass = ndtr((cfg.theta_high - mu) / sigma) - ndtr((cfg.theta_low - mu) / sigma)
    return -math.log(sigma * math.sqrt(2 * math.pi)) - math.log(mass)


def theta_prior_logpdf(theta: float, cfg: ModelConfig = ModelConfig()) -> float:
    """Log density of the truncated-normal fuzziness prior (normalized on its range)."""
    if not cfg.theta_low <= theta <= cfg.theta_high:
        return -math.inf
    z = (theta - cfg.theta_prior_mean) / cfg.theta_prior_stddev
    return -0.5 * z * z + _theta_log_normalizer(cfg)


def _likelihood_given(holds: bool, y: bool, theta: float, cfg: ModelConfig) -> float:
    # each branch returns its table entry directly so values are exact, not 1 - (1 - x)
    if not holds:
        return cfg.epsilon if y else 1.0 - cfg.epsilon
    if cfg.hard:
        return 1.0 - cfg.epsilon if y else cfg.epsilon
    return theta if y else 1.0 - theta


def likelihood(y: bool, scene: Scene, rule: Rule, theta: float, cfg: ModelConfig = ModelConfig()) -> float:
    return _likelihood_given(eval_rule(rule, scene), bool(y), theta, cfg)


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def log_likelihood(y: bool, scene: Scene, rule: Rule, theta: float, cfg: ModelConfig = ModelConfig()) -> float:
    return _log(likelihood(y, scene, rule, theta, cfg))


@dataclass(frozen=True)
class EvidenceCounts:
    """Sufficient statistics of a log for one rule: (holds, label) tallies."""

    hold_pos: int = 0
    hold_neg: int = 0
    fail_pos: int = 0
    fail_neg: int = 0

    @classmethod
    def of(cls, rule: Rule, log: ObservationLog) -> EvidenceCounts:
        tally = [0, 0, 0, 0]
        for obs in log:
            holds = eval_rule(rule, obs.scene)
            tally[(0 if holds else 2) + (0 if obs.label else 1)] += 1
        return cls(*tally)

    def log_likelihood(self, theta: float, cfg: ModelConfig) -> float:
        total = 0.0
        for n, holds, y in (
            (self.hold_pos, True, True),
            (self.hold_neg, True, False),
            (self.fail_pos, False, True),
            (self.fail_neg, False, False),
        ):
            if n:
                total += n * _log(_likelihood_given(holds, y, theta, cfg))
        return total


def joint_logprob(rule: Rule, theta: float, log: ObservationLog, cfg: ModelConfig = ModelConfig()) -> float:
    """log p(h) + log p(theta) + sum_t log p(y_t | x_t, h, theta).

    Under the hard likelihood theta plays no role and its prior is omitted.
    """
    return _joint_from_counts(log_prior_h(rule), EvidenceCounts.of(rule, log), theta, cfg)


def _joint_from_counts(log_prior: float, counts: EvidenceCounts, theta: float, cfg: ModelConfig) -> float:
    if cfg.hard:
        return log_prior + counts.log_likelihood(theta, cfg)
    return log_prior + theta_prior_logpdf(theta, cfg) + counts.log_likelihood(theta, cfg)


def _theta_objective(theta: float, n_pos: int, n_neg: int, cfg: ModelConfig) -> float:
    value = theta_prior_logpdf(theta, cfg)
    if n_pos:
        value += n_pos * _log(theta)
    if n_neg:
        value += n_neg * _log(1.0 - theta)
    return value


@lru_cache(maxsize=4096)
def map_theta_from_counts(n_pos: int, n_neg: int, cfg: ModelConfig) -> float:
    """argmax over the theta range of n_pos*log(theta) + n_neg*log(1-theta) + log p(theta).

    Dense grid search, then bounded scalar refinement inside the bracketing
    grid cells.
    """
    low, high = cfg.theta_range
    mode = min(max(cfg.theta_prior_mean, low), high)
    if cfg.hard or (n_pos == 0 and n_neg == 0):
        return mode
    grid = cfg.theta_grid()
    values = np.zeros_like(grid)
    with np.errstate(divide="ignore"):
        if n_pos:
            values += n_pos * np.log(grid)
        if n_neg:
            values += n_neg * np.log1p(-grid)
    values -= 0.5 * ((grid - cfg.theta_prior_mean) / cfg.theta_prior_stddev) ** 2
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    result = minimize_scalar(
        lambda t: -_theta_objective(t, n_pos, n_neg, cfg),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-5},
    )
    candidates = [grid[best], float(result.x)]
    return float(max(candidates, key=lambda t: _theta_objective(t, n_pos, n_neg, cfg)))


def map_theta(rule: Rule, log: ObservationLog, cfg: ModelConfig = ModelConfig()) -> float:
    """MAP fuzziness for `rule` given the log; only observations where the rule holds matter."""
    counts = EvidenceCounts.of(rule, log)
    return map_theta_from_counts(counts.hold_pos, counts.hold_neg, cfg)


def score_rule(rule: Rule, log: ObservationLog, cfg: ModelConfig = ModelConfig()) -> tuple[float, float]:
    """(MAP theta, joint log-probability at that theta)."""
    counts = EvidenceCounts.of(rule, log)
    theta = map_theta_from_counts(counts.hold_pos, counts.hold_neg, cfg)
    return theta, _joint_from_counts(log_prior_h(rule), counts, theta, cfg)


def log_marginal_likelihood(rule: Rule, log: ObservationLog, cfg: ModelConfig = ModelConfig()) -> float:
    """log of the joint integrated over theta with trapezoid weights on the theta grid."""
    counts = EvidenceCounts.of(rule, log)
    if cfg.hard:
        return _joint_from_counts(log_prior_h(rule), counts, cfg.theta_prior_mean, cfg)
    return log_prior_h(rule) + _log_theta_integral(counts, cfg)


@lru_cache(maxsize=4096)
def _log_theta_integral(counts: EvidenceCounts, cfg: ModelConfig) -> float:
    grid = cfg.theta_grid()
    z = (grid - cfg.theta_prior_mean) / cfg.theta_prior_stddev
    logs = -0.5 * z * z + _theta_log_normalizer(cfg)
    with np.errstate(divide="ignore"):
        if counts.hold_pos:
            logs = logs + counts.hold_pos * np.log(grid)
        if counts.hold_neg:
            logs = logs + counts.hold_neg * np.log1p(-grid)
    logs = logs + counts.fail_pos * math.log(cfg.epsilon) + counts.fail_neg * math.log1p(-cfg.epsilon)
    weights = np.full(len(grid), grid[1] - grid[0])
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return float(np.logaddexp.reduce(logs + np.log(weights)))
