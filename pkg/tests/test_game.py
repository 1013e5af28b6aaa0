import json
from dataclasses import replace

import httpx
import pytest

from helpers import FIXTURE_RULES, scene_of
from zendo.design import DesignConfig
from zendo.errors import UnsatisfiableRuleError
from zendo.game import (
    METHODS,
    GameConfig,
    Metrics,
    build_test_set,
    derive_seed,
    dump_test_set,
    load_rule_fixture,
    load_test_set,
    load_trace,
    parse_rule_fixture,
    play_game,
    run_benchmark,
    seed_streams,
)
from zendo.llm import ChatClient, LlmEndpointConfig
from zendo.rules import eval_rule, parse_rule
from zendo.scene import Observation, scene_from_dict

FAST = GameConfig(num_rounds=2)


@pytest.fixture(scope="module")
def record():
    return play_game(GameConfig(seed=11), "there is a red block")


class TestGame:
    def test_shape(self, record):
        assert len(record.rounds) == 7
        assert len(record.predictions) == 8
        assert [p.label for p in record.predictions].count(True) == 4
        assert record.initial.label is True
        assert eval_rule(record.oracle_rule, record.initial.scene)

    def test_oracle_labels(self, record):
        for rnd in record.rounds:
            assert rnd.label == eval_rule(record.oracle_rule, rnd.scene)
        for pred in record.predictions:
            assert pred.label == eval_rule(record.oracle_rule, pred.scene)

    def test_test_scenes_distinct_and_fresh(self, record):
        keys = [p.scene.canonical_key() for p in record.predictions]
        assert len(set(keys)) == 8
        assert record.initial.scene.canonical_key() not in keys

    def test_threshold(self, record):
        for p in record.predictions:
            assert p.predicted == (p.probability >= 0.5)

    def test_metrics_identity(self, record):
        m = record.metrics
        assert m.acc_all == pytest.approx((4 * m.acc_rf + 4 * m.acc_not_rf) / 8)

    def test_chosen_scene_comes_from_pool(self, record):
        for rnd in record.rounds:
            pool = [scene_from_dict(c["scene"]) for c in rnd.candidates]
            assert rnd.scene in pool
            best = max(c["score"] for c in rnd.candidates)
            chosen = [c for c in rnd.candidates if scene_from_dict(c["scene"]) == rnd.scene][0]
            assert chosen["score"] == pytest.approx(best, abs=1e-12)

    def test_trace_records(self, record, tmp_path):
        path = record.write_trace(tmp_path / "t.jsonl")
        records = load_trace(path)
        assert [r["event"] for r in records] == ["start", "initial"] + ["round"] * 7 + ["prediction"] * 8 + ["end"]
        assert records[0]["rule"] == "there is a red block"
        assert record.final_posterior == records[-10]["beliefs"]["posterior"]

    def test_byte_identical_replay(self):
        a = play_game(replace(FAST, seed=5), "some blocks touch").trace_text()
        b = play_game(replace(FAST, seed=5), "some blocks touch").trace_text()
        c = play_game(replace(FAST, seed=6), "some blocks touch").trace_text()
        assert a == b and a != c

    def test_hard_mode_snapshots_have_no_theta(self):
        rec = play_game(GameConfig(method="online_hard", num_rounds=2, seed=1), "there is a red block")
        for rnd in rec.rounds:
            assert all("theta" not in p for p in rnd.beliefs["particles"])

    @pytest.mark.parametrize("method", ["batch_fuzzy", "batch_hard", "batch_hard_refine", "online_hard"])
    def test_methods_run(self, method):
        rec = play_game(replace(FAST, method=method, seed=2), "every block is blue or small")
        assert len(rec.rounds) == 2 and len(rec.predictions) == 8

    def test_random_selection(self):
        cfg = replace(FAST, design=DesignConfig(selection="random"), seed=3)
        rec = play_game(cfg, "there is a red block")
        assert len(rec.rounds) == 2

    def test_zero_rounds(self):
        rec = play_game(replace(FAST, num_rounds=0), "there is a red block")
        assert rec.rounds == [] and len(rec.predictions) == 8

    def test_on_round_callback(self):
        seen = []
        play_game(FAST, "there is a red block", on_round=lambda i, rnd: seen.append(i))
        assert seen == [1, 2]

    def test_streams_independent(self):
        a, b = seed_streams(1), seed_streams(1)
        assert a["world"].random() == b["world"].random()
        assert a["learner"].random() != a["design"].random()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GameConfig(method="psychic")
        with pytest.raises(ValueError):
            GameConfig(num_rounds=-1)

    def test_unsatisfiable(self):
        cfg = replace(FAST, design=DesignConfig(max_blocks=2))
        with pytest.raises(UnsatisfiableRuleError):
            play_game(cfg, "at least 3 blocks are red")


class TestTestSets:
    def test_pinned_test_set(self, tmp_path):
        rule = parse_rule("there is a red block")
        tests = build_test_set(rule, seed_streams(0)["world"])
        path = tmp_path / "tests.json"
        path.write_text(dump_test_set(tests))
        loaded = load_test_set(path)
        assert list(loaded) == tests
        rec = play_game(replace(FAST, test_set=loaded, seed=9), rule)
        assert [p.scene for p in rec.predictions] == [t.scene for t in tests]

    def test_pinned_needs_four_and_four(self):
        red = Observation(scene_of("red large upright grounded"), True)
        with pytest.raises(ValueError):
            GameConfig(test_set=(red,) * 8)

    def test_load_rejects_other_documents(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"tests": []}))
        with pytest.raises(ValueError):
            load_test_set(path)


class TestFixtures:
    def test_nine_rules(self):
        assert load_rule_fixture() == FIXTURE_RULES
        assert len(FIXTURE_RULES) == 9

    def test_header_required(self):
        with pytest.raises(ValueError):
            parse_rule_fixture("there is a red block\n")

    def test_comments_and_canonicalisation(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("# zendo-rules/1\n\nThere is a green block that is upright  # paraphrase\n")
        assert load_rule_fixture(path) == ["there is a green upright block"]


class TestMetrics:
    def test_of(self):
        m = Metrics.of([True, True, False, False], [True, False, False, True])
        assert (m.acc_all, m.acc_rf, m.acc_not_rf) == (0.5, 0.5, 0.5)


def direct_client():
    def answer(request):
        messages = json.loads(request.content)["messages"]
        last = messages[-1]["content"]
        if "Does the following structure follow" in last:
            text = "yes" if "red" in last.split("secret rule?")[-1] else "no"
        elif "structure" in last.lower() and "summary" not in last.lower() and len(messages) > 1:
            text = "block 1: red, small, left, grounded, touches nothing"
        else:
            text = "I think the rule is about red blocks."
        return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})

    return ChatClient(LlmEndpointConfig(), transport=httpx.MockTransport(answer))


class TestDirectBaseline:
    def test_seven_rounds_eight_questions(self):
        rec = play_game(GameConfig(method="direct_llm", seed=4), "there is a red block", client=direct_client())
        assert len(rec.rounds) == 7 and len(rec.predictions) == 8
        assert all(r.summary for r in rec.rounds)
        assert rec.metrics.acc_all == 1.0


class TestBenchmark:
    def test_report_cells_and_failures(self, tmp_path):
        rules = FIXTURE_RULES + ["at least 3 blocks are red"]
        cfg = replace(GameConfig(num_rounds=0), design=DesignConfig(max_blocks=2))
        report = run_benchmark(rules, ["online_fuzzy"], 1, base_config=cfg, keep_traces=True)
        rows = report.rows
        assert len(rows) == 2 * 10
        failed = [r for r in rows if r["failed"]]
        assert {r["rule"] for r in failed} == {"at least 3 blocks are red"}
        assert all(r["repeats"] == 1 for r in rows if not r["failed"])
        paths = report.write(tmp_path, traces=True)
        assert paths["report"].read_text().splitlines()[0] == "method,rule,condition,mean_acc,stderr,repeats,failed"
        assert "failed,UnsatisfiableRuleError" in paths["summary"].read_text()
        assert len(list((tmp_path / "traces").iterdir())) == 9

    def test_nine_rules_eighteen_cells(self):
        report = run_benchmark(FIXTURE_RULES, ["online_fuzzy"], 1, base_config=GameConfig(num_rounds=0))
        assert len(report.rows) == 18
        assert {(r["rule"], r["condition"]) for r in report.rows} == {(r, c) for r in FIXTURE_RULES for c in ("RF", "NotRF")}

    def test_reproducible_across_workers(self):
        kw = dict(base_config=GameConfig(num_rounds=1))
        a = run_benchmark(FIXTURE_RULES[:2], ["online_fuzzy", "batch_hard"], 2, 7, **kw)
        b = run_benchmark(FIXTURE_RULES[:2], ["online_fuzzy", "batch_hard"], 2, 7, workers=2, **kw)
        assert a.report_csv() == b.report_csv()
        assert a.summary_csv() == b.summary_csv()

    def test_methods_share_worlds(self):
        assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
        assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
        report = run_benchmark(["there is a red block"], ["online_fuzzy", "online_hard"], 1,
                               base_config=GameConfig(num_rounds=0))
        assert len({g.seed for g in report.games}) == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            run_benchmark([], ["online_fuzzy"], 1)
        with pytest.raises(ValueError):
            run_benchmark(FIXTURE_RULES, ["online_fuzzy"], 0)

    def test_known_methods(self):
        assert "online_fuzzy" in METHODS and "direct_llm" in METHODS
