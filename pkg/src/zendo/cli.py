"""zendo command line: games, benchmarks, rule and scene utilities, and a human-oracle REPL."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_run_config, override
from .errors import RuleSyntaxError, ZendoError
from .game import (
    METHODS,
    PREDICTION_THRESHOLD,
    PROPOSERS,
    TRACE_SCHEMA,
    GameRecord,
    load_rule_fixture,
    load_trace,
    make_learner,
    parse_rule_fixture,
    play_game,
    run_benchmark,
    seed_streams,
)
from .io import atomic_write_text, dumps_jsonl
from .llm import CASSETTE_MODES
from .proposers.grammar import MUTATION_ORDER
from .rules import Rule, eval_rule, neighbors, parse_rule, render_rule, tokenize, word_count
from .scene import (
    MAX_BLOCKS_CAP,
    Block,
    Observation,
    Scene,
    parse_scene,
    random_scene,
    scene_from_dict,
    scene_to_text,
    serialize_scene,
)
from .vocab import ATTRIBUTES

log = logging.getLogger("zendo")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INTERRUPTED = 0, 1, 2, 130
NUM_PROBES = 8
TOP_RULES = 10


class UsageError(Exception):
    pass


# -- argument helpers ----------------------------------------------------------

def resolve_rule(ref: str) -> Rule:
    """A rule string, or @FILE:N for the N-th rule (1-based) of a rule fixture file.

    FILE falls back to the fixtures shipped with the package, so
    @fixtures/rules.txt:3 works from any directory.
    """
    if not ref.startswith("@"):
        return parse_rule(ref)
    path, sep, index = ref[1:].rpartition(":")
    if not sep or not path or not index.isdigit():
        raise UsageError(f"bad fixture reference {ref!r}; expected @FILE:N")
    local = Path(path)
    if local.exists():
        rules = load_rule_fixture(local)
    else:
        packaged = resources.files("zendo") / "fixtures" / local.name
        if not packaged.is_file():
            raise UsageError(f"no such rule fixture file: {path}")
        rules = parse_rule_fixture(packaged.read_text(encoding="utf-8"), path)
    n = int(index)
    if not 1 <= n <= len(rules):
        raise UsageError(f"{path} has {len(rules)} rules; index {n} is out of range")
    return parse_rule(rules[n - 1])


def _method_list(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(unknown) or '(none)'}; choose from {', '.join(METHODS)}"
        )
    return methods


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def syntax_error_text(exc: RuleSyntaxError) -> str:
    """The message plus the offending token underlined, when the position is known."""
    if exc.position is None or exc.text is None:
        return str(exc)
    lowered = exc.text.lower()
    start, end = 0, 0
    for i, token in enumerate(tokenize(exc.text)):
        found = lowered.find(token, end)
        if found < 0:
            break
        start, end = found, found + len(token)
        if i == exc.position:
            return f"{exc}\n  {exc.text}\n  {' ' * start}{'^' * (end - start)}"
    return f"{exc}\n  {exc.text}\n  {' ' * end}^"


def _load_scene_file(path: str) -> Scene:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read scene file {path}: {exc.strerror}") from None
    return parse_scene(text)


def _config(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    flags = {
        key: getattr(args, key, None)
        for key in (
            "method", "seed", "num_rounds", "proposer", "cassette_path", "cassette_mode",
            "selection", "num_particles", "methods", "repeats", "workers", "output_dir", "test_set",
        )
    }
    if getattr(args, "traces", False):
        flags["traces"] = True
    if getattr(args, "rules", None):
        flags["rules"] = tuple(render_rule(resolve_rule(r)) for r in args.rules)
    return override(cfg, **flags)


def _out_dir(args, cfg: RunConfig, name: str) -> Path:
    return Path(args.output_dir) if args.output_dir is not None else Path(cfg.output_dir) / name


def _print_posterior(posterior: dict[str, float], out, limit: int = TOP_RULES) -> None:
    ranked = sorted(posterior.items(), key=lambda kv: (-kv[1], kv[0]))
    for rule, p in ranked[:limit]:
        print(f"  {p:.3f}  {rule}", file=out)
    if len(ranked) > limit:
        print(f"  ... {len(ranked) - limit} more", file=out)


# -- commands -------------------------------------------------------------------

def cmd_play(args, out) -> int:
    cfg = _config(args)
    rule = resolve_rule(args.rule)
    record = play_game(cfg.game, rule)
    out_dir = _out_dir(args, cfg, "play")
    trace = record.write_trace(out_dir / "trace.jsonl")
    summary = {
        "rule": render_rule(rule),
        "method": cfg.game.method,
        "seed": cfg.game.seed,
        "metrics": asdict(record.metrics),
        "posterior": record.final_posterior,
        "predictions": [
            {"label": p.label, "probability": p.probability, "predicted": p.predicted} for p in record.predictions
        ],
    }
    summary_path = atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"rule: {render_rule(rule)}", file=out)
    print(f"method: {cfg.game.method}  seed: {cfg.game.seed}", file=out)
    print("final beliefs:", file=out)
    _print_posterior(record.final_posterior, out)
    m = record.metrics
    print(f"accuracy: all={m.acc_all:.3f} rule-following={m.acc_rf:.3f} rule-violating={m.acc_not_rf:.3f}", file=out)
    print(f"trace: {trace}", file=out)
    print(f"summary: {summary_path}", file=out)
    return EXIT_OK


def cmd_bench(args, out) -> int:
    cfg = _config(args)
    rules = list(cfg.bench.rules) or load_rule_fixture()
    report = run_benchmark(
        rules,
        cfg.bench.methods,
        cfg.bench.repeats,
        cfg.game.seed,
        base_config=cfg.game,
        workers=cfg.bench.workers,
        keep_traces=cfg.bench.traces,
    )
    paths = report.write(_out_dir(args, cfg, "bench"), traces=cfg.bench.traces)
    print(f"{'method':<18} {'mean acc':>8}  rule", file=out)
    for method in cfg.bench.methods:
        for rule in rules:
            print(f"{method:<18} {report.mean_accuracy(method, rule):>8.3f}  {rule}", file=out)
    failed = sum(g.error is not None for g in report.games)
    if failed:
        print(f"{failed} game(s) failed; see {paths['summary']}", file=out)
    print(f"report: {paths['report']}", file=out)
    return EXIT_OK


def cmd_rule_check(args, out) -> int:
    rule = parse_rule(args.rule)
    print(render_rule(rule), file=out)
    print(f"words: {word_count(rule)}", file=out)
    return EXIT_OK


def cmd_rule_eval(args, out) -> int:
    rule = resolve_rule(args.rule)
    scene = _load_scene_file(args.scene)
    print("true" if eval_rule(rule, scene) else "false", file=out)
    return EXIT_OK


def local_moves(rule: Rule, k: int, rng: np.random.Generator, kind: str | None = None) -> list[Rule]:
    """Up to k single-edit variants, split evenly across the edit kinds unless one is named."""
    kinds = [kind] if kind else list(MUTATION_ORDER)
    quotas = [k // len(kinds) + (1 if i < k % len(kinds) else 0) for i in range(len(kinds))]
    moves = []
    for kind_, quota in zip(kinds, quotas):
        options = neighbors(rule, kind_)
        order = rng.permutation(len(options))[:quota]
        moves.extend(options[i] for i in sorted(order))
    return moves


def cmd_rule_mutate(args, out) -> int:
    rule = resolve_rule(args.rule)
    moves = local_moves(rule, args.k, np.random.default_rng(args.seed), args.kind)
    for i, move in enumerate(moves, 1):
        print(f"{i}. {render_rule(move)}", file=out)
    return EXIT_OK


def cmd_scene_validate(args, out) -> int:
    scene = _load_scene_file(args.scene)
    print(f"ok: {len(scene)} block(s), {len(scene.touching)} touching pair(s)", file=out)
    print(scene_to_text(scene), file=out)
    return EXIT_OK


def cmd_scene_random(args, out) -> int:
    if not 1 <= args.max_blocks <= MAX_BLOCKS_CAP:
        raise UsageError(f"--max-blocks must be between 1 and {MAX_BLOCKS_CAP}")
    scene = random_scene(np.random.default_rng(args.seed), args.max_blocks, args.touch_prob).canonical()
    text = serialize_scene(scene)
    if args.output:
        print(f"wrote {atomic_write_text(args.output, text)}", file=out)
    else:
        out.write(text)
    return EXIT_OK


def cmd_replay(args, out) -> int:
    try:
        records = load_trace(args.trace)
    except OSError as exc:
        raise UsageError(f"cannot read trace {args.trace}: {exc.strerror}") from None
    out.write(render_trace(records, args.top))
    return EXIT_OK


def render_trace(records: list[dict], top: int = 3) -> str:
    """Human-readable rendering of a trace, one section per event."""
    lines = []
    verdict = {True: "follows the rule", False: "does not follow the rule"}

    def scene_lines(doc):
        return ["  " + line for line in scene_to_text(scene_from_dict(doc)).splitlines()]

    def beliefs_lines(beliefs):
        ranked = sorted(beliefs.get("posterior", {}).items(), key=lambda kv: (-kv[1], kv[0]))[:top]
        if beliefs.get("summary"):
            return ["  summary: " + beliefs["summary"].strip().replace("\n", " ")]
        return [f"  belief {p:.3f}  {rule}" for rule, p in ranked]

    for rec in records:
        event = rec["event"]
        if event == "start":
            rule = rec["rule"] if rec["rule"] is not None else "(held by a human oracle)"
            lines += [f"rule: {rule}", f"method: {rec['method']}  seed: {rec['seed']}"]
        elif event == "initial":
            lines += ["initial example (" + verdict[rec["label"]] + "):"] + scene_lines(rec["scene"])
            lines += beliefs_lines(rec["beliefs"])
        elif event == "round":
            lines += [f"round {rec['round']} ({verdict[rec['label']]}):"] + scene_lines(rec["scene"])
            lines += beliefs_lines(rec["beliefs"])
        elif event == "prediction":
            mark = "correct" if rec["predicted"] == rec["label"] else "wrong"
            lines += [f"test ({verdict[rec['label']]}): p={rec['probability']:.3f} {mark}"] + scene_lines(rec["scene"])
        elif event == "probe":
            lines += [f"probe: p={rec['probability']:.3f}"] + scene_lines(rec["scene"])
        elif event == "end":
            if "metrics" in rec:
                m = rec["metrics"]
                lines.append(
                    f"accuracy: all={m['acc_all']:.3f} rule-following={m['acc_rf']:.3f} "
                    f"rule-violating={m['acc_not_rf']:.3f}"
                )
            if "status" in rec:
                lines.append(f"status: {rec['status']}")
    return "\n".join(lines) + "\n"


# -- interactive ----------------------------------------------------------------

class Console:
    """Line-oriented prompts over explicit streams; EOF raises EOFError."""

    def __init__(self, stdin, stdout):
        self.stdin, self.stdout = stdin, stdout

    def say(self, text: str = "") -> None:
        print(text, file=self.stdout, flush=True)

    def ask(self, prompt: str) -> str:
        self.stdout.write(prompt)
        self.stdout.flush()
        line = self.stdin.readline()
        if not line:
            raise EOFError
        return line.strip().lower()

    def choose(self, prompt: str, accepted: dict[str, object]):
        while True:
            answer = self.ask(prompt)
            if answer in accepted:
                return accepted[answer]
            self.say(f"please answer one of: {', '.join(accepted)}")


def enter_scene(console: Console) -> Scene:
    """Guided field-by-field entry of one structure."""
    counts = {str(n): n for n in range(1, MAX_BLOCKS_CAP + 1)}
    n = console.choose(f"number of blocks (1-{MAX_BLOCKS_CAP}): ", counts)
    blocks = []
    for i in range(n):
        fields = {}
        for attr, values in ATTRIBUTES.items():
            fields[attr] = console.choose(f"block {i} {attr} ({'/'.join(values)}): ", {v: v for v in values})
        blocks.append(Block(**fields))
    while True:
        raw = console.ask("touching pairs, e.g. '0-1 1-2' (empty for none): ")
        try:
            pairs = [tuple(int(x) for x in item.split("-")) for item in raw.replace(",", " ").split()]
            return Scene(tuple(blocks), frozenset(pairs)).canonical()
        except (ValueError, TypeError) as exc:
            console.say(f"could not use those pairs ({exc}); try again")


def _probe_scenes(rng: np.random.Generator, exclude: list[Scene], cfg) -> list[Scene]:
    seen = {s.canonical_key() for s in exclude}
    probes = []
    for _ in range(100 * NUM_PROBES):
        if len(probes) == NUM_PROBES:
            break
        scene = random_scene(rng, cfg.design.max_blocks, cfg.design.touch_prob).canonical()
        if scene.canonical_key() not in seen:
            seen.add(scene.canonical_key())
            probes.append(scene)
    return probes


def cmd_interactive(args, out, stdin) -> int:
    cfg = _config(args)
    game_cfg = cfg.game
    console = Console(stdin, out)
    trace_path = _out_dir(args, cfg, "interactive") / "trace.jsonl"
    record: GameRecord | None = None
    extra: list[dict] = []

    def flush(status: str) -> None:
        if record is not None:
            records = record.trace_records()
        else:
            records = [{"event": "start", "schema": TRACE_SCHEMA, "rule": None,
                        "method": game_cfg.method, "seed": game_cfg.seed}]
        atomic_write_text(trace_path, dumps_jsonl(records + extra + [{"event": "end", "status": status}]))

    try:
        console.say("Think of a secret rule about block structures. I will try to learn it.")
        if args.scene:
            initial_scene = _load_scene_file(args.scene).canonical()
        else:
            console.say("First, describe one structure that follows your rule.")
            initial_scene = enter_scene(console)
        streams = seed_streams(game_cfg.seed)
        learner = make_learner(game_cfg, streams)
        initial = Observation(initial_scene, True)
        record = GameRecord(game_cfg, None, initial, learner.start(initial))
        answers = {"y": True, "yes": True, "n": False, "no": False, "q": None, "quit": None}
        planned, status = game_cfg.num_rounds, "complete"
        while True:
            while len(record.rounds) < planned:
                scene, candidates = learner.choose()
                console.say(f"\nround {len(record.rounds) + 1}: does this structure follow your rule?")
                console.say(scene_to_text(scene))
                label = console.choose("answer y/n (q to stop): ", answers)
                if label is None:
                    status = "stopped early"
                    break
                rnd = learner.observe(Observation(scene, label))
                rnd.candidates = candidates
                record.rounds.append(rnd)
            if status != "complete":
                break
            more = console.ask("play more rounds? enter a number, or press Enter to finish: ")
            if not more:
                break
            if more.isdigit():
                planned += int(more)
            else:
                console.say("not a number; finishing")
                break
        console.say("\nmy best guesses:")
        posterior = learner.posterior()
        if posterior:
            _print_posterior(posterior, out)
        console.say("\npredictions for new structures:")
        used = [record.initial.scene] + [r.scene for r in record.rounds]
        for scene in _probe_scenes(streams["world"], used, game_cfg):
            p = learner.predict(scene)
            verdict = "follows" if p >= PREDICTION_THRESHOLD else "does not follow"
            console.say(f"p={p:.3f} ({verdict})")
            console.say("  " + scene_to_text(scene).replace("\n", "\n  "))
            extra.append({"event": "probe", "scene": json.loads(serialize_scene(scene)), "probability": p})
        flush(status)
        console.say(f"\ntrace: {trace_path}")
        return EXIT_OK
    except (EOFError, KeyboardInterrupt):
        flush("aborted")
        print(f"\naborted; partial trace: {trace_path}", file=out)
        return EXIT_INTERRUPTED


# -- parser ---------------------------------------------------------------------

def _add_game_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML run configuration; flags override its values")
    if method:
        p.add_argument("--method", choices=METHODS, help="learner variant (default: online_fuzzy)")
    p.add_argument("--seed", type=_nonnegative_int, help="master seed (default: 0)")
    p.add_argument("--rounds", dest="num_rounds", type=_nonnegative_int, help="active-learning rounds (default: 7)")
    p.add_argument("--proposer", choices=PROPOSERS, help="rule proposer (default: grammar)")
    p.add_argument("--particles", dest="num_particles", type=_positive_int, help="number of particles (default: 25)")
    p.add_argument("--selection", choices=("eig", "random"), help="experiment selection (default: eig)")
    p.add_argument("--cassette", dest="cassette_path", metavar="FILE", help="LLM record/replay cassette")
    p.add_argument("--cassette-mode", choices=CASSETTE_MODES, help="cassette mode (default: off)")
    p.add_argument("--out", dest="output_dir", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zendo",
        description="Active rule learning in the game of Zendo with particle-based Bayesian inference.",
    )
    parser.add_argument("--version", action="version", version=f"zendo {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("play", help="play one game against a known rule")
    p.add_argument("--rule", required=True, help="rule text, or @FILE:N for the N-th rule of a fixture file")
    _add_game_flags(p)
    p.add_argument("--test-set", metavar="FILE", help="pinned test set (zendo-testset/1 JSON) instead of a generated one")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("bench", help="play many games and write an accuracy report")
    _add_game_flags(p, method=False)
    p.add_argument("--methods", type=_method_list, help="comma-separated methods (default: online_fuzzy)")
    p.add_argument("--rule", dest="rules", action="append", metavar="RULE",
                   help="rule to include (repeatable; default: the nine fixture rules)")
    p.add_argument("--repeats", type=_positive_int, help="games per rule and method (default: 20)")
    p.add_argument("--workers", type=_positive_int, help="parallel worker processes (default: 1)")
    p.add_argument("--traces", action="store_true", help="also write one trace per game")
    p.set_defaults(func=cmd_bench)

    rule = sub.add_parser("rule", help="parse, evaluate or mutate rules")
    rsub = rule.add_subparsers(dest="rule_command", metavar="ACTION", required=True)
    p = rsub.add_parser("check", help="print the canonical form and word count")
    p.add_argument("rule")
    p.set_defaults(func=cmd_rule_check)
    p = rsub.add_parser("eval", help="evaluate a rule on a scene file")
    p.add_argument("rule", help="rule text or @FILE:N")
    p.add_argument("scene", help="scene JSON file")
    p.set_defaults(func=cmd_rule_eval)
    p = rsub.add_parser("mutate", help="print single-edit variants of a rule")
    p.add_argument("rule", help="rule text or @FILE:N")
    p.add_argument("--k", type=_positive_int, default=15, help="number of variants (default: 15)")
    p.add_argument("--seed", type=_nonnegative_int, default=0, help="random seed (default: 0)")
    p.add_argument("--kind", choices=[k.value for k in MUTATION_ORDER], help="only this kind of edit")
    p.set_defaults(func=cmd_rule_mutate)

    scene = sub.add_parser("scene", help="validate or generate scene files")
    ssub = scene.add_subparsers(dest="scene_command", metavar="ACTION", required=True)
    p = ssub.add_parser("validate", help="check a scene file and print it")
    p.add_argument("scene")
    p.set_defaults(func=cmd_scene_validate)
    p = ssub.add_parser("random", help="print (or write) a random scene")
    p.add_argument("--seed", type=_nonnegative_int, default=0, help="random seed (default: 0)")
    p.add_argument("--max-blocks", type=_positive_int, default=4, help="maximum number of blocks (default: 4)")
    p.add_argument("--touch-prob", type=float, default=0.3, help="probability two blocks touch (default: 0.3)")
    p.add_argument("--output", "-o", metavar="FILE", help="write here instead of stdout")
    p.set_defaults(func=cmd_scene_random)

    p = sub.add_parser("interactive", help="you hold a secret rule; the learner asks about structures")
    _add_game_flags(p)
    p.add_argument("--scene", metavar="FILE", help="initial positive structure (default: guided entry)")
    p.set_defaults(func=cmd_interactive)

    p = sub.add_parser("replay", help="re-render a trace file")
    p.add_argument("trace")
    p.add_argument("--top", type=_positive_int, default=3, help="beliefs shown per round (default: 3)")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None, stdin=None, stdout=None) -> int:
    stdin = sys.stdin if stdin is None else stdin
    out = sys.stdout if stdout is None else stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.func is cmd_interactive:
            return cmd_interactive(args, out, stdin)
        return args.func(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"zendo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"zendo: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuleSyntaxError as exc:
        print(f"zendo: error: {syntax_error_text(exc)}", file=sys.stderr)
        return EXIT_ERROR
    except (ZendoError, ValueError, OSError) as exc:
        print(f"zendo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("zendo: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
