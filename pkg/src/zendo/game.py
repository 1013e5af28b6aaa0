"""Complete Zendo games: oracle, test sets, learners, traces and benchmark sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .design import (
    DesignConfig,
    generate_candidates,
    pool_to_records,
    sample_scene_satisfying,
    score_candidates,
    select_experiment,
    select_random,
)
from .errors import DegenerateBeliefError, UnsatisfiableRuleError, ZendoError
from .io import atomic_write_text, dumps_jsonl
from .llm import Cassette, ChatClient, LlmEndpointConfig, config_to_dict
from .model import ModelConfig
from .proposers import DirectLlmPlayer, GrammarProposer, LlmProposer
from .rules import Rule, eval_rule, parse_rule, render_rule
from .scene import Observation, ObservationLog, Scene, scene_to_dict
from .smc import (
    ParticleSet,
    SmcConfig,
    batch_beliefs,
    init_particles,
    posterior_over_rules,
    posterior_predictive,
    snapshot,
    step,
)

log = logging.getLogger(__name__)

TRACE_SCHEMA = "zendo-trace/1"
METHODS = ("online_fuzzy", "online_hard", "batch_fuzzy", "batch_hard", "batch_hard_refine", "direct_llm")
HARD_METHODS = ("online_hard", "batch_hard", "batch_hard_refine")
PROPOSERS = ("grammar", "llm")
NUM_RF = 4
NUM_NOT_RF = 4
SCENE_BUDGET = 500
PREDICTION_THRESHOLD = 0.5
RULES_SCHEMA = "zendo-rules/1"
TEST_SET_SCHEMA = "zendo-testset/1"


@dataclass(frozen=True)
class GameConfig:
    method: str = "online_fuzzy"
    num_rounds: int = 7
    seed: int = 0
    proposer: str = "grammar"
    smc: SmcConfig = SmcConfig()
    model: ModelConfig = ModelConfig()
    design: DesignConfig = DesignConfig()
    # proposals requested per round by the batch methods
    batch_num_proposals: int = 25
    llm: LlmEndpointConfig | None = None
    cassette_path: str | None = None
    cassette_mode: str = "off"
    fallback_to_grammar: bool = True
    # pinned test set; generated per seed when None
    test_set: tuple[Observation, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if self.proposer not in PROPOSERS:
            raise ValueError(f"unknown proposer {self.proposer!r}")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.test_set is not None:
            labels = [o.label for o in self.test_set]
            if labels.count(True) != NUM_RF or labels.count(False) != NUM_NOT_RF:
                raise ValueError(f"a pinned test set needs {NUM_RF} RF and {NUM_NOT_RF} non-RF scenes")

    @property
    def model_config(self) -> ModelConfig:
        return replace(self.model, hard=self.method in HARD_METHODS)


@dataclass(frozen=True)
class Metrics:
    acc_all: float
    acc_rf: float
    acc_not_rf: float

    @classmethod
    def of(cls, labels: Sequence[bool], predicted: Sequence[bool]) -> Metrics:
        hits = [bool(y) == bool(p) for y, p in zip(labels, predicted)]
        rf = [h for h, y in zip(hits, labels) if y]
        not_rf = [h for h, y in zip(hits, labels) if not y]
        return cls(_mean(hits), _mean(rf), _mean(not_rf))


def _mean(values) -> float:
    return sum(values) / len(values) if values else math.nan


@dataclass
class Round:
    scene: Scene
    label: bool
    beliefs: dict
    candidates: list[dict] = field(default_factory=list)
    moves: list[dict] = field(default_factory=list)
    summary: str | None = None


@dataclass
class Prediction:
    scene: Scene
    label: bool
    probability: float

    @property
    def predicted(self) -> bool:
        return self.probability >= PREDICTION_THRESHOLD


@dataclass
class GameRecord:
    config: GameConfig
    # None when the rule lives only in a human oracle's head
    oracle_rule: Rule | None
    initial: Observation
    initial_beliefs: dict
    rounds: list[Round] = field(default_factory=list)
    predictions: list[Prediction] = field(default_factory=list)
    metrics: Metrics | None = None

    @property
    def final_posterior(self) -> dict[str, float]:
        beliefs = self.rounds[-1].beliefs if self.rounds else self.initial_beliefs
        return beliefs.get("posterior", {})

    def trace_records(self) -> list[dict]:
        cfg = self.config
        records = [
            {
                "event": "start",
                "schema": TRACE_SCHEMA,
                "rule": None if self.oracle_rule is None else render_rule(self.oracle_rule),
                "method": cfg.method,
                "seed": cfg.seed,
                "config": config_to_json(cfg),
            },
            {
                "event": "initial",
                "scene": scene_to_dict(self.initial.scene),
                "label": self.initial.label,
                "beliefs": self.initial_beliefs,
            },
        ]
        for i, rnd in enumerate(self.rounds, 1):
            entry = {
                "event": "round",
                "round": i,
                "scene": scene_to_dict(rnd.scene),
                "label": rnd.label,
                "beliefs": rnd.beliefs,
                "candidates": rnd.candidates,
                "moves": rnd.moves,
            }
            if rnd.summary is not None:
                entry["summary"] = rnd.summary
            records.append(entry)
        for pred in self.predictions:
            records.append(
                {
                    "event": "prediction",
                    "scene": scene_to_dict(pred.scene),
                    "label": pred.label,
                    "probability": pred.probability,
                    "predicted": pred.predicted,
                }
            )
        if self.metrics is not None:
            records.append({"event": "end", "metrics": asdict(self.metrics)})
        return records

    def trace_text(self) -> str:
        return dumps_jsonl(self.trace_records())

    def write_trace(self, path) -> Path:
        return atomic_write_text(path, self.trace_text())


def config_to_json(cfg: GameConfig) -> dict:
    doc = {
        "method": cfg.method,
        "num_rounds": cfg.num_rounds,
        "seed": cfg.seed,
        "proposer": cfg.proposer,
        "smc": asdict(cfg.smc),
        "model": asdict(cfg.model_config),
        "design": asdict(cfg.design),
        "batch_num_proposals": cfg.batch_num_proposals,
        "fallback_to_grammar": cfg.fallback_to_grammar,
    }
    if cfg.llm is not None:
        doc["llm"] = config_to_dict(cfg.llm)
    return doc


def parse_rule_fixture(text: str, source: str = "<fixture>") -> list[str]:
    """Rules of a fixture document: a schema header, then one rule per line; '#' starts a comment."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {RULES_SCHEMA}":
        raise ValueError(f"{source}: expected a '# {RULES_SCHEMA}' header")
    rules = []
    for line in lines[1:]:
        line = line.split("#", 1)[0].strip()
        if line:
            rules.append(render_rule(parse_rule(line)))
    return rules


def load_rule_fixture(path=None) -> list[str]:
    """The nine benchmark rules by default, else the rules in `path`."""
    if path is None:
        text = (resources.files("zendo") / "fixtures" / "rules.txt").read_text(encoding="utf-8")
        return parse_rule_fixture(text, "fixtures/rules.txt")
    return parse_rule_fixture(Path(path).read_text(encoding="utf-8"), str(path))


def dump_test_set(tests: Sequence[Observation]) -> str:
    doc = {"schema": TEST_SET_SCHEMA, "tests": [o.to_dict() for o in tests]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_test_set(path) -> tuple[Observation, ...]:
    """A pinned test set: {"schema": "zendo-testset/1", "tests": [{"scene": ..., "label": ...}, ...]}."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or doc.get("schema") != TEST_SET_SCHEMA:
        raise ValueError(f"{path}: not a {TEST_SET_SCHEMA} document")
    return tuple(Observation.from_dict(t) for t in doc["tests"])


# -- world -------------------------------------------------------------------

def oracle_label(oracle_rule: Rule, scene: Scene) -> bool:
    """The secret rule is deterministic: no noise on the oracle's side."""
    return eval_rule(oracle_rule, scene)


def build_initial_example(
    oracle_rule: Rule, rng: np.random.Generator, design: DesignConfig = DesignConfig()
) -> Scene:
    scene = sample_scene_satisfying(oracle_rule, True, rng, SCENE_BUDGET, design.max_blocks, design.touch_prob)
    if scene is None:
        raise UnsatisfiableRuleError(f"no scene satisfies {render_rule(oracle_rule)!r} within budget")
    return scene.canonical()


def build_test_set(
    oracle_rule: Rule,
    rng: np.random.Generator,
    exclude: Sequence[Scene] = (),
    design: DesignConfig = DesignConfig(),
) -> list[Observation]:
    """4 rule-following and 4 rule-violating scenes, all distinct and none in `exclude`."""
    seen = {s.canonical_key() for s in exclude}
    out = []
    for target, count in ((True, NUM_RF), (False, NUM_NOT_RF)):
        found = 0
        for _ in range(SCENE_BUDGET):
            if found == count:
                break
            scene = sample_scene_satisfying(oracle_rule, target, rng, SCENE_BUDGET, design.max_blocks, design.touch_prob)
            if scene is None:
                break
            key = scene.canonical_key()
            if key in seen:
                continue
            seen.add(key)
            out.append(Observation(scene.canonical(), target))
            found += 1
        if found < count:
            kind = "rule-following" if target else "rule-violating"
            raise UnsatisfiableRuleError(f"could not find {count} distinct {kind} scenes")
    return out


# -- learners ----------------------------------------------------------------

def build_client(cfg: GameConfig) -> ChatClient:
    if cfg.llm is None:
        raise ValueError("no LLM endpoint configured")
    cassette = None
    if cfg.cassette_path and cfg.cassette_mode != "off":
        cassette = Cassette(cfg.cassette_path, cfg.cassette_mode)
    return ChatClient(cfg.llm, cassette=cassette)


def build_proposer(cfg: GameConfig, client: ChatClient | None = None):
    if cfg.proposer == "grammar":
        return GrammarProposer()
    client = client or build_client(cfg)
    return LlmProposer(client, fallback=GrammarProposer() if cfg.fallback_to_grammar else None)


class Learner:
    """What a game needs from a player: beliefs, experiment choice and prediction."""

    def start(self, initial: Observation) -> dict: ...

    def choose(self) -> tuple[Scene, list[dict]]: ...

    def observe(self, obs: Observation) -> Round: ...

    def predict(self, scene: Scene) -> float: ...

    def posterior(self) -> dict[str, float]:
        return {}


class ParticleLearner(Learner):
    """Online SMC or batch re-proposal, with expected-model-change experiment selection."""

    def __init__(self, cfg: GameConfig, proposer, learner_rng: np.random.Generator, design_rng: np.random.Generator):
        self.cfg = cfg
        self.model_cfg = cfg.model_config
        self.proposer = proposer
        self.rng = learner_rng
        self.design_rng = design_rng
        self.batch = cfg.method.startswith("batch")
        self.ps: ParticleSet | None = None
        self._pending: list[dict] = []

    def _batch(self, log_: ObservationLog) -> ParticleSet:
        return batch_beliefs(
            self.proposer,
            log_,
            self.cfg.smc,
            self.model_cfg,
            self.rng,
            num_proposals=self.cfg.batch_num_proposals,
            refine=self.cfg.method == "batch_hard_refine",
        )

    def start(self, initial: Observation) -> dict:
        if self.batch:
            self.ps = self._batch(ObservationLog([initial]))
        else:
            self.ps = init_particles(self.proposer, initial.scene, initial.label, self.cfg.smc, self.model_cfg, self.rng)
        return snapshot(self.ps, self.model_cfg)

    def choose(self) -> tuple[Scene, list[dict]]:
        pool = generate_candidates(self.ps, self.design_rng, self.cfg.design.pool_size, self.cfg.design)
        scores = score_candidates(self.ps, pool, self.model_cfg)
        if self.cfg.design.selection == "random":
            scene = select_random(pool, self.design_rng)
        else:
            scene = select_experiment(self.ps, pool, self.model_cfg, scores)
        return scene, pool_to_records(pool, scores)

    def observe(self, obs: Observation) -> Round:
        if self.batch:
            self.ps = self._batch(self.ps.log.append(obs))
        else:
            try:
                self.ps = step(self.ps, obs, self.proposer, self.model_cfg)
            except DegenerateBeliefError:
                log.warning("beliefs degenerated; re-proposing from the full log")
                self.ps = self._batch(self.ps.log.append(obs))
        moves = [asdict(m) for m in self.ps.moves]
        return Round(obs.scene, obs.label, snapshot(self.ps, self.model_cfg), moves=moves)

    def predict(self, scene: Scene) -> float:
        return posterior_predictive(self.ps, scene, self.model_cfg)

    def posterior(self) -> dict[str, float]:
        return posterior_over_rules(self.ps)


class DirectLearner(Learner):
    def __init__(self, client: ChatClient):
        self.player = DirectLlmPlayer(client)

    def start(self, initial: Observation) -> dict:
        return {"summary": self.player.start(initial.scene)}

    def choose(self) -> tuple[Scene, list[dict]]:
        return self.player.next_experiment(), []

    def observe(self, obs: Observation) -> Round:
        summary = self.player.feedback(obs.label)
        return Round(obs.scene, obs.label, {"summary": summary}, summary=summary)

    def predict(self, scene: Scene) -> float:
        return self.player.predict(scene)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for the world (examples, tests), the learner and experiment design."""
    world, learner, design = np.random.SeedSequence(seed).spawn(3)
    return {
        "world": np.random.default_rng(world),
        "learner": np.random.default_rng(learner),
        "design": np.random.default_rng(design),
    }


def make_learner(cfg: GameConfig, streams: dict, client: ChatClient | None = None) -> Learner:
    if cfg.method == "direct_llm":
        return DirectLearner(client or build_client(cfg))
    return ParticleLearner(cfg, build_proposer(cfg, client), streams["learner"], streams["design"])


def play_game(
    cfg: GameConfig,
    oracle_rule: Rule | str,
    *,
    client: ChatClient | None = None,
    on_round: Callable[[int, Round], None] | None = None,
) -> GameRecord:
    """Initial example, cfg.num_rounds active-learning rounds, then the 8-scene test."""
    if isinstance(oracle_rule, str):
        oracle_rule = parse_rule(oracle_rule)
    streams = seed_streams(cfg.seed)
    initial_scene = build_initial_example(oracle_rule, streams["world"], cfg.design)
    if cfg.test_set is not None:
        tests = list(cfg.test_set)
    else:
        tests = build_test_set(oracle_rule, streams["world"], [initial_scene], cfg.design)
    initial = Observation(initial_scene, True)

    learner = make_learner(cfg, streams, client)
    record = GameRecord(cfg, oracle_rule, initial, learner.start(initial))
    for i in range(cfg.num_rounds):
        scene, candidates = learner.choose()
        obs = Observation(scene, oracle_label(oracle_rule, scene))
        rnd = learner.observe(obs)
        rnd.candidates = candidates
        record.rounds.append(rnd)
        if on_round is not None:
            on_round(i + 1, rnd)
    for test in tests:
        record.predictions.append(Prediction(test.scene, test.label, learner.predict(test.scene)))
    record.metrics = Metrics.of([p.label for p in record.predictions], [p.predicted for p in record.predictions])
    return record


# -- benchmark ---------------------------------------------------------------

REPORT_COLUMNS = ("method", "rule", "condition", "mean_acc", "stderr", "repeats", "failed")
SUMMARY_COLUMNS = ("method", "rule", "repeat", "seed", "acc_all", "acc_rf", "acc_not_rf", "status", "error")


def derive_seed(base_seed: int, rule_index: int, repeat: int) -> int:
    """Same world per (rule, repeat) across methods, so methods are compared on identical games."""
    return int(np.random.SeedSequence([base_seed, rule_index, repeat]).generate_state(1)[0])


@dataclass
class GameResult:
    method: str
    rule: str
    repeat: int
    seed: int
    metrics: Metrics | None
    error: str | None = None
    trace: str | None = None


@dataclass
class Report:
    rows: list[dict]
    games: list[GameResult]

    def report_csv(self) -> str:
        return _csv(REPORT_COLUMNS, self.rows)

    def summary_csv(self) -> str:
        rows = []
        for g in self.games:
            m = g.metrics
            rows.append(
                {
                    "method": g.method,
                    "rule": g.rule,
                    "repeat": g.repeat,
                    "seed": g.seed,
                    "acc_all": "" if m is None else _fmt(m.acc_all),
                    "acc_rf": "" if m is None else _fmt(m.acc_rf),
                    "acc_not_rf": "" if m is None else _fmt(m.acc_not_rf),
                    "status": "ok" if g.error is None else "failed",
                    "error": g.error or "",
                }
            )
        return _csv(SUMMARY_COLUMNS, rows)

    def mean_accuracy(self, method: str, rule: str | None = None) -> float:
        accs = [g.metrics.acc_all for g in self.games if g.method == method and g.metrics and (rule is None or g.rule == rule)]
        return _mean(accs)

    def write(self, out_dir, traces: bool = False) -> dict[str, Path]:
        out_dir = Path(out_dir)
        paths = {
            "report": atomic_write_text(out_dir / "report.csv", self.report_csv()),
            "summary": atomic_write_text(out_dir / "games.csv", self.summary_csv()),
        }
        if traces:
            for g in self.games:
                if g.trace is not None:
                    slug = "".join(c if c.isalnum() else "_" for c in g.rule)
                    atomic_write_text(out_dir / "traces" / f"{g.method}__{slug}__{g.repeat:03d}.jsonl", g.trace)
        return paths


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in columns})
    return buf.getvalue()


def _play_one(job: tuple) -> GameResult:
    cfg, rule_text, repeat, keep_trace = job
    try:
        record = play_game(cfg, rule_text)
    except (ZendoError, ValueError, ArithmeticError) as exc:
        log.error("game failed (%s, %r, repeat %d): %s", cfg.method, rule_text, repeat, exc)
        return GameResult(cfg.method, rule_text, repeat, cfg.seed, None, f"{type(exc).__name__}: {exc}")
    trace = record.trace_text() if keep_trace else None
    return GameResult(cfg.method, rule_text, repeat, cfg.seed, record.metrics, trace=trace)


def run_benchmark(
    rules: Sequence[str],
    methods: Sequence[str],
    repeats: int,
    base_seed: int = 0,
    *,
    base_config: GameConfig = GameConfig(),
    workers: int = 1,
    keep_traces: bool = False,
) -> Report:
    """Play `repeats` games per (rule, method); failed games are recorded, not fatal."""
    if not rules or not methods:
        raise ValueError("rules and methods must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rules = [render_rule(parse_rule(r)) for r in rules]
    jobs = []
    for method in methods:
        for ri, rule in enumerate(rules):
            for rep in range(repeats):
                cfg = replace(base_config, method=method, seed=derive_seed(base_seed, ri, rep))
                jobs.append((cfg, rule, rep, keep_traces))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            games = list(pool.map(_play_one, jobs))
    else:
        games = [_play_one(job) for job in jobs]
    return Report(_aggregate(games, rules, methods, repeats), games)


def _aggregate(games: list[GameResult], rules, methods, repeats) -> list[dict]:
    rows = []
    for method in methods:
        for rule in rules:
            cell = [g for g in games if g.method == method and g.rule == rule]
            ok = [g.metrics for g in cell if g.metrics is not None]
            for condition, attr in (("RF", "acc_rf"), ("NotRF", "acc_not_rf")):
                values = np.array([getattr(m, attr) for m in ok], dtype=float)
                mean = float(values.mean()) if len(values) else math.nan
                se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
                rows.append(
                    {
                        "method": method,
                        "rule": rule,
                        "condition": condition,
                        "mean_acc": _fmt(mean),
                        "stderr": _fmt(se),
                        "repeats": len(ok),
                        "failed": len(cell) - len(ok),
                    }
                )
    return rows


def load_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("schema") != TRACE_SCHEMA:
        raise ValueError(f"{path}: not a {TRACE_SCHEMA} trace")
    return records
