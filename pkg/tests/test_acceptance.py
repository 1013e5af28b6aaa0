"""Acceptance criteria. Each test prints one PASS/FAIL line with the measured value and its bar."""

import itertools
import math
import time
from dataclasses import replace

import httpx
import numpy as np
import pytest
from scipy.stats import truncnorm

from helpers import FIXTURE_RULES, RULE_POOL
from test_rules import HAND_SCENES, ORACLES
from zendo.design import CandidatePool, expected_model_change, sample_scene_satisfying, select_experiment
from zendo.game import GameConfig, play_game, run_benchmark
from zendo.llm import Cassette, ChatClient, LlmEndpointConfig
from zendo.model import ModelConfig, joint_logprob, likelihood, map_theta_from_counts, score_rule
from zendo.proposers import EnumerationProposer, GrammarProposer
from zendo.rules import enumerate_rules, eval_rule, parse_rule
from zendo.scene import Observation, ObservationLog, enumerate_scenes, random_scene
from zendo.smc import (
    Particle,
    ParticleSet,
    SmcConfig,
    exact_posterior,
    init_particles,
    posterior_over_rules,
    rejuvenate,
    resample,
    reweight,
    step,
    total_variation,
)
from zendo.design import DesignConfig

RESULTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    def report(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


# -- exact-inference equivalence -------------------------------------------------

SINGLE = enumerate_rules(2)


def fixed_logs():
    """Five 3-observation logs over the single-attribute grammar: one positive example plus two random scenes."""
    logs = []
    for s in range(5):
        rng = np.random.default_rng(100 + s)
        target = SINGLE[2 * s]
        obs = [Observation(sample_scene_satisfying(target, True, rng), True)]
        for _ in range(2):
            scene = random_scene(rng, 4)
            obs.append(Observation(scene, eval_rule(target, scene)))
        logs.append(ObservationLog(obs))
    return logs


def smc_posterior(log, proposer, cfg, seed, resample_after):
    ps = init_particles(proposer, log[0].scene, log[0].label, cfg, rng=np.random.default_rng(seed),
                        resample_after=resample_after)
    for obs in list(log)[1:]:
        ps = step(ps, obs, proposer)
    return posterior_over_rules(ps)


def test_exact_inference_equivalence(verdict):
    start = time.perf_counter()
    logs = fixed_logs()
    exact = [exact_posterior(2, log) for log in logs]

    # importance sampling: enumerate-all proposer, no rejuvenation, weights kept (never resampled)
    is_cfg = SmcConfig(num_particles=2000, rejuvenate=False, init_weights_include_likelihood=True, ess_threshold=0.0)
    tv_is = np.mean([
        total_variation(smc_posterior(log, EnumerationProposer(SINGLE), is_cfg, 0, False), ex)
        for log, ex in zip(logs, exact)
    ])

    # standard pipeline: grammar proposer, default step (rejuvenation and resampling on), 20 seeds
    std_cfg = SmcConfig(num_particles=2000)
    gp = GrammarProposer(space=SINGLE)
    tv_std = np.mean([
        np.mean([total_variation(smc_posterior(log, gp, std_cfg, seed, True), ex) for seed in range(20)])
        for log, ex in zip(logs, exact)
    ])
    # for reference only: the same pipeline with rejuvenation switched off
    off_cfg = replace(std_cfg, rejuvenate=False)
    tv_off = np.mean([
        np.mean([total_variation(smc_posterior(log, gp, off_cfg, seed, True), ex) for seed in range(20)])
        for log, ex in zip(logs, exact)
    ])
    elapsed = time.perf_counter() - start
    ok = tv_is <= 0.02 and tv_std <= 0.1 and elapsed < 60
    verdict(
        "exact-inference equivalence",
        ok,
        f"importance-sampling TV={tv_is:.4f} (<=0.02); standard pipeline TV={tv_std:.4f} (<=0.1); "
        f"[info: rejuvenation off TV={tv_off:.4f}]; runtime {elapsed:.1f}s (<60s)",
    )


# -- likelihood table --------------------------------------------------------------

def test_likelihood_table(verdict):
    from helpers import scene_of

    rule = parse_rule("there is a red block")
    scenes_ = {True: scene_of("red small left grounded"), False: scene_of("blue small left grounded")}
    eps = 0.1
    mismatches = []
    cases = 0
    for holds, y, theta, hard in itertools.product([True, False], [True, False], [0.5, 0.9], [False, True]):
        if hard:
            want = (1 - eps if y else eps) if holds else (eps if y else 1 - eps)
        else:
            want = (theta if y else 1 - theta) if holds else (eps if y else 1 - eps)
        got = likelihood(y, scenes_[holds], rule, theta, ModelConfig(epsilon=eps, hard=hard))
        cases += 1
        if got != want:
            mismatches.append((holds, y, theta, hard, got, want))
    verdict("likelihood table", not mismatches and cases == 16, f"{cases} cases, {len(mismatches)} mismatches (tolerance 0)")


# -- MAP theta -----------------------------------------------------------------------

def test_map_theta(verdict):
    t = np.linspace(0.5, 1.0, 100_001)
    logprior = truncnorm.logpdf(t, -1.0, 4.0, loc=0.6, scale=0.1)
    worst = 0.0
    cfg = ModelConfig()
    for n1 in range(11):
        for n0 in range(3):
            with np.errstate(divide="ignore"):
                f = n1 * np.log(t) + (n0 * np.log1p(-t) if n0 else 0.0) + logprior
            oracle = float(t[int(np.argmax(f))])
            worst = max(worst, abs(map_theta_from_counts(n1, n0, cfg) - oracle))
    empty = map_theta_from_counts(0, 0, cfg)
    verdict("MAP theta", worst <= 1e-3 and empty == 0.6,
            f"max |map - grid| = {worst:.2e} (<=1e-3) over 33 logs; empty log -> {empty!r} (==0.6)")


# -- EIG oracle --------------------------------------------------------------------------

def brute_emc(rules, weights, thetas, scene, eps=0.1):
    q0 = np.array(weights) / sum(weights)
    total = 0.0
    for y in (True, False):
        lik = []
        for r, t in zip(rules, thetas):
            p1 = t if eval_rule(r, scene) else eps
            lik.append(p1 if y else 1 - p1)
        joint = q0 * np.array(lik)
        p_y = joint.sum()
        q_y = joint / p_y
        total += p_y * sum(a * math.log(a / b) for a, b in zip(q_y, q0) if a > 0)
    return total


def test_eig_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst, argmax_mismatch, nonzero_single = 0.0, 0, 0
    for case in range(100):
        k = int(rng.integers(1, 6))
        idx = rng.choice(len(RULE_POOL), size=k, replace=False)
        rules = [RULE_POOL[i] for i in idx]
        thetas = rng.uniform(0.5, 1.0, size=k)
        weights = rng.uniform(0.01, 1.0, size=k)
        # spread each rule over 1-3 particles so duplicates are exercised too
        particles = []
        for r, t, w in zip(rules, thetas, weights):
            copies = int(rng.integers(1, 4))
            particles += [Particle(r, float(t), math.log(w / copies))] * copies
        ps = ParticleSet(tuple(particles), ObservationLog(), SmcConfig(num_particles=len(particles)), rng)
        pool = CandidatePool()
        for _ in range(int(rng.integers(1, 11))):
            pool.add(random_scene(rng, 4), "random")
        brute = [brute_emc(rules, weights, thetas, s) for s in pool.scenes]
        got = [expected_model_change(ps, s) for s in pool.scenes]
        worst = max(worst, max(abs(a - b) for a, b in zip(got, brute)))
        best = max(brute)
        tied = [s for s, v in zip(pool.scenes, brute) if v >= best - 1e-12]
        want = min(tied, key=lambda s: (len(s), s.canonical_key()))
        if select_experiment(ps, pool) != want:
            argmax_mismatch += 1
        if k == 1:
            nonzero_single += sum(v != 0.0 for v in got)
    # explicit single-rule states as well
    for r in RULE_POOL[:50]:
        ps = ParticleSet((Particle(r, 0.8, 0.0),) * 3, ObservationLog(), SmcConfig(num_particles=3), rng)
        for s in itertools.islice(enumerate_scenes(1), 0, 72, 9):
            nonzero_single += expected_model_change(ps, s) != 0.0
    ok = worst <= 1e-9 and argmax_mismatch == 0 and nonzero_single == 0
    verdict("EIG oracle", ok,
            f"100 cases, max |emc - brute| = {worst:.1e} (<=1e-9), argmax mismatches {argmax_mismatch}, "
            f"non-zero single-rule scores {nonzero_single}")


# -- evaluator fixture suite ------------------------------------------------------------------

def test_rule_evaluator_fixture_suite(verdict):
    wrong, scenes_checked = 0, 0
    for text in FIXTURE_RULES:
        positives, negatives = HAND_SCENES[text]
        assert len(positives) >= 3 and len(negatives) >= 3
        rule = parse_rule(text)
        for scene, label in [(s, True) for s in positives] + [(s, False) for s in negatives]:
            scenes_checked += 1
            wrong += eval_rule(rule, scene) != label
    disagreements = 0
    total = 0
    parsed = {t: parse_rule(t) for t in FIXTURE_RULES}
    for scene in enumerate_scenes(2):
        for text, rule in parsed.items():
            total += 1
            disagreements += eval_rule(rule, scene) != ORACLES[text](scene)
    verdict("rule-evaluator fixture suite", wrong == 0 and disagreements == 0,
            f"{scenes_checked} hand scenes, {wrong} wrong (100% required); "
            f"{total} exhaustive checks, {disagreements} oracle disagreements")


# -- rejuvenation contract -----------------------------------------------------------------------

def test_rejuvenation_contract(verdict):
    proposer = GrammarProposer()
    steps = moves = violations = count_changes = 0
    game = 0
    while steps < 1000:
        rng = np.random.default_rng(game)
        target = parse_rule(FIXTURE_RULES[game % len(FIXTURE_RULES)])
        game += 1
        x1 = sample_scene_satisfying(target, True, rng)
        ps = init_particles(proposer, x1, True, rng=rng)
        n = len(ps)
        for _ in range(10):
            scene = random_scene(rng, 4)
            ps = reweight(ps, Observation(scene, eval_rule(target, scene)))
            before = {p.text: p.theta for p in ps.particles}
            ps = rejuvenate(ps, proposer)
            for move in ps.moves:
                moves += 1
                old = joint_logprob(parse_rule(move.original), before[move.original], ps.log)
                new = score_rule(parse_rule(move.proposed), ps.log)[1]
                if not new > old:
                    violations += 1
            count_changes += len(ps) != n
            ps = resample(ps)
            count_changes += len(ps) != n
            steps += 1
    verdict("rejuvenation contract", violations == 0 and count_changes == 0,
            f"{steps} steps, {moves} executed moves, {violations} non-improving, {count_changes} particle-count changes")


# -- resampling statistics ---------------------------------------------------------------------------

def test_resampling_statistics(verdict):
    texts = ["there is a red block", "some blocks touch", "every block is blue or small"]
    weights = np.array([0.55, 0.3, 0.15])
    particles = tuple(Particle(parse_rule(t), 0.6, math.log(w)) for t, w in zip(texts, weights))
    cfg = SmcConfig(num_particles=25)
    counts = np.zeros(3)
    for seed in range(10_000):
        ps = ParticleSet(particles, ObservationLog(), cfg, np.random.default_rng(seed))
        out = resample(ps)
        for p in out.particles:
            counts[texts.index(p.text)] += 1
    freq = counts / counts.sum()
    worst = float(np.max(np.abs(freq - weights)))
    verdict("resampling statistics", worst <= 0.02,
            f"frequencies {np.round(freq, 4).tolist()} vs weights {weights.tolist()}, max gap {worst:.4f} (<=0.02)")


# -- end-to-end learnability -------------------------------------------------------------------------

def mean_accuracy(cfg, rule, seeds=range(20)):
    return float(np.mean([play_game(replace(cfg, seed=s), rule).metrics.acc_all for s in seeds]))


def test_learnability(verdict):
    eig = GameConfig(method="online_fuzzy")
    rnd = replace(eig, design=DesignConfig(selection="random"))
    parts, ok = [], True
    for rule in ("there is a red block", "no block is upright"):
        a_eig = mean_accuracy(eig, rule)
        a_rnd = mean_accuracy(rnd, rule)
        ok &= a_eig >= 0.9 and a_eig >= a_rnd - 0.05
        parts.append(f"'{rule}': eig {a_eig:.3f} (>=0.9), random {a_rnd:.3f} (eig >= random-0.05)")
    verdict("end-to-end learnability", ok, "; ".join(parts))


# -- ablation separability ----------------------------------------------------------------------------

def test_ablation_separability(verdict):
    rule = "a red block is bigger than every non-red block"
    online = mean_accuracy(GameConfig(method="online_fuzzy"), rule)
    batch = mean_accuracy(GameConfig(method="batch_hard"), rule)
    verdict("ablation separability", online >= batch,
            f"online_fuzzy {online:.3f} vs batch_hard {batch:.3f} on '{rule}' (online >= batch)")


# -- reproducibility ------------------------------------------------------------------------------------

STUB_RULES = ["there is a red block", "some blocks touch", "every block is red", "there is a large block",
              "no block is upright", "there is a red upright block"]


def stub_transport():
    """Deterministic fake endpoint: the reply depends only on the prompt text."""

    def handler(request):
        import hashlib
        import json

        prompt = json.loads(request.content)["messages"][-1]["content"]
        h = int(hashlib.sha256(prompt.encode()).hexdigest(), 16)
        order = [STUB_RULES[(h + i) % len(STUB_RULES)] for i in range(len(STUB_RULES))]
        text = "\n".join(f"{i}. {r}" for i, r in enumerate(order, 1))
        return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})

    return httpx.MockTransport(handler)


def offline_transport():
    def handler(request):
        raise httpx.ConnectError("network disabled during replay")

    return httpx.MockTransport(handler)


def test_reproducibility(verdict, tmp_path):
    failures = []
    # grammar-proposer games and a benchmark, each run twice
    for method in ("online_fuzzy", "batch_hard_refine"):
        a = play_game(GameConfig(method=method, seed=77), "every block is blue or small").trace_text()
        b = play_game(GameConfig(method=method, seed=77), "every block is blue or small").trace_text()
        if a != b:
            failures.append(f"{method} trace")
    bench = [run_benchmark(FIXTURE_RULES[:3], ["online_fuzzy", "batch_hard"], 2, 5,
                           base_config=GameConfig(num_rounds=3), keep_traces=True) for _ in range(2)]
    out = [tmp_path / "b0", tmp_path / "b1"]
    for report, d in zip(bench, out):
        report.write(d, traces=True)
    for name in ["report.csv", "games.csv"] + [f"traces/{p.name}" for p in sorted((out[0] / "traces").iterdir())]:
        if (out[0] / name).read_bytes() != (out[1] / name).read_bytes():
            failures.append(f"benchmark {name}")

    # LLM proposer: record a cassette against a stub endpoint, then replay it offline
    endpoint = LlmEndpointConfig(max_concurrent_requests=4, max_retries=0)
    tape = tmp_path / "tape.json"
    cfg = GameConfig(proposer="llm", llm=endpoint, seed=3, num_rounds=3, fallback_to_grammar=False)
    recorded = play_game(cfg, "there is a red block",
                         client=ChatClient(endpoint, Cassette(tape, "record"), transport=stub_transport())).trace_text()
    replays = [
        play_game(cfg, "there is a red block",
                  client=ChatClient(endpoint, Cassette(tape, "replay"), transport=offline_transport())).trace_text()
        for _ in range(2)
    ]
    if any(r != recorded for r in replays):
        failures.append("LLM cassette replay")
    verdict("reproducibility", not failures,
            "games, benchmark reports/traces and cassette-replayed LLM games byte-identical"
            if not failures else f"differences in {', '.join(failures)}")
