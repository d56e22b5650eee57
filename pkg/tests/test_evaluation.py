import json
import random
import statistics
from fractions import Fraction

import pytest

from halluguard import BackendSet, RunConfig
from halluguard.core import Ensemble
from halluguard.evaluation import (
    BadConfigString,
    ConfigResult,
    EvalRecord,
    MetricsSummary,
    SchemaError,
    TooFewSeeds,
    UnknownMetricKey,
    confusion_metrics,
    consistency,
    evaluate,
    format_config_string,
    leaderboard_markdown,
    load_dataset,
    load_grid,
    metric_value,
    pareto_front,
    parse_config_string,
    save_dataset,
    with_seed,
)


def summary(f1=0.0, tokens=0.0, **kw):
    base = dict(precision=0.0, recall=0.0, f1=f1, accuracy=0.0, tp=0, fp=0, tn=0, fn=0, mean_latency_ms=0.0, mean_total_tokens=tokens)
    base.update(kw)
    return MetricsSummary(**base)


def result(cid, f1, tokens):
    return ConfigResult(cid, RunConfig("d", "g", "v"), summary(f1, tokens))


# -- datasets ---------------------------------------------------------------


def test_load_two_records(tmp_path):
    p = tmp_path / "d.jsonl"
    recs = [EvalRecord("a", "q", ("c",), "x", True), EvalRecord("b", "q", ("c1", "c2"), "y", False, ("labor",))]
    save_dataset(recs, p)
    assert load_dataset(p) == recs


def test_missing_label_reports_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps({"id": "a", "query": "q", "context": ["c"], "answer": "x"}) + "\n")
    with pytest.raises(SchemaError) as exc:
        load_dataset(p)
    assert exc.value.line == 1


def test_blank_lines_skipped_and_bad_json_line(tmp_path):
    p = tmp_path / "d.jsonl"
    good = json.dumps({"id": "a", "query": "q", "context": ["c"], "answer": "x", "label": False})
    p.write_text(good + "\n\n{broken\n")
    with pytest.raises(SchemaError) as exc:
        load_dataset(p)
    assert exc.value.line == 3


def test_empty_dataset_warns(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    with pytest.warns(UserWarning):
        assert load_dataset(p) == []


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.jsonl")


# -- metrics ----------------------------------------------------------------


def test_confusion_example():
    m = confusion_metrics([True, True, False, True], [True, True, False, False])
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 1, 1, 0)
    assert m.precision == pytest.approx(2 / 3) and m.recall == 1.0
    assert m.f1 == pytest.approx(0.8) and m.accuracy == 0.75


def test_all_correct():
    m = confusion_metrics([True, False], [True, False])
    assert (m.precision, m.recall, m.f1, m.accuracy) == (1.0, 1.0, 1.0, 1.0)


def test_no_predicted_positives_is_annotated():
    m = confusion_metrics([False, False], [True, False])
    assert m.precision == 0.0 and m.f1 == 0.0
    assert any("precision undefined" in a for a in m.annotations)


def test_f1_is_harmonic_mean_oracle():
    rng = random.Random(3)
    for _ in range(200):
        pred = [rng.random() < 0.5 for _ in range(15)]
        act = [rng.random() < 0.5 for _ in range(15)]
        m = confusion_metrics(pred, act)
        tp = sum(p and a for p, a in zip(pred, act))
        pp, ap = sum(pred), sum(act)
        if tp:
            p, r = Fraction(tp, pp), Fraction(tp, ap)
            assert m.f1 == pytest.approx(float(2 * p * r / (p + r)), abs=1e-12)


def test_evaluate_on_hand_built_world(dataset_20, config, world, fast_gateway):
    m = evaluate(dataset_20, config, BackendSet.single(world), gateway=fast_gateway)
    assert (m.tp, m.fp, m.tn, m.fn) == (11, 1, 6, 2)
    assert m.precision == pytest.approx(11 / 12, abs=1e-12)
    assert m.recall == pytest.approx(11 / 13, abs=1e-12)
    assert m.f1 == pytest.approx(0.88, abs=1e-12)
    assert m.accuracy == pytest.approx(0.85, abs=1e-12)
    assert m.mean_total_tokens > 0 and not m.excluded


def test_evaluate_excludes_failures(config, world, fast_gateway):
    recs = [EvalRecord("ok", "q", ("a|p|b",), "a|p|b.", False), EvalRecord("bad", "q", ("   ",), "a|p|b.", True)]
    m = evaluate(recs, config, BackendSet.single(world), gateway=fast_gateway)
    assert m.excluded == ("bad",) and m.n == 1


# -- consistency ------------------------------------------------------------


def test_consistency_matches_statistics_module():
    values = [0.80, 0.82, 0.79, 0.81, 0.83]
    rep = consistency([summary(f1=v) for v in values], seeds=[1, 2, 3, 4, 5])
    st = rep.metrics["f1"]
    assert st.mean == pytest.approx(statistics.mean(values), abs=1e-12)
    assert st.std == pytest.approx(statistics.stdev(values), abs=1e-12)
    assert st.cv == pytest.approx(statistics.stdev(values) / statistics.mean(values), abs=1e-12)


def test_identical_runs_have_zero_spread():
    rep = consistency([summary(f1=0.7, tokens=100)] * 3)
    assert rep.metrics["f1"].std == 0 and rep.metrics["f1"].cv == 0
    assert rep.metrics["precision"].cv == 0  # mean 0, std 0


def test_single_seed_rejected():
    with pytest.raises(TooFewSeeds):
        consistency([summary()])


# -- Pareto -----------------------------------------------------------------


def test_pareto_example():
    rs = [result("a", 0.94, 100), result("b", 0.93, 80), result("c", 0.90, 120)]
    assert [r.config_id for r in pareto_front(rs, "f1", "tokens")] == ["b", "a"]


def test_pareto_single_and_ties():
    only = [result("a", 0.5, 10)]
    assert pareto_front(only) == only
    tied = [result("a", 0.9, 10), result("b", 0.9, 20)]
    assert {r.config_id for r in pareto_front(tied)} == {"a", "b"}


def test_pareto_unknown_metric():
    with pytest.raises(UnknownMetricKey):
        pareto_front([result("a", 0.5, 10)], "f1", "dollars")
    assert metric_value(result("a", 0.5, 10), "latency") == 0.0


# -- configuration strings -------------------------------------------------


def test_parse_paper_string():
    c = parse_config_string("mini/41/multi/5/0")
    assert c.decomposition_model == "gpt-4.1-mini" and c.generation_model == "gpt-4.1"
    assert isinstance(c.verifier, Ensemble) and len(c.verifier.members) >= 2
    assert (c.n_variants, c.temperature) == (5, 0.0)


def test_parse_explicit_ensemble_and_literal_ids():
    c = parse_config_string("my-model/41/mini+sonnet/2/0.7")
    assert c.decomposition_model == "my-model"
    assert c.verifier == Ensemble(("gpt-4.1-mini", "claude-sonnet-4"))
    assert c.temperature == 0.7


@pytest.mark.parametrize(
    "s, field",
    [("a/b/c/0/0", "n_variants"), ("a/b/c/x/0", "n_variants"), ("a/b/c/2/hot", "temperature"), ("a/b/c/2/3", "temperature"), ("a/b/c/2", "format"), ("a//c/2/0", "generation_model"), ("mini+41/b/c/2/0", "decomposition_model")],
)
def test_bad_config_strings(s, field):
    with pytest.raises(BadConfigString) as exc:
        parse_config_string(s)
    assert exc.value.field == field


@pytest.mark.parametrize("entry", load_grid("paper26"), ids=lambda e: e.id)
def test_grid_strings_round_trip(entry):
    c = parse_config_string(entry.config)
    assert format_config_string(c) == entry.config
    assert parse_config_string(format_config_string(c)) == c


def test_base_fields_fill_the_rest():
    c = parse_config_string("mini/41/41/2/0", seed=9, threshold_general=0.4)
    assert c.seed == 9 and c.threshold_general == 0.4 and with_seed(c, 3).seed == 3


def test_grid_has_26_unique_ids():
    grid = load_grid("paper26")
    assert len(grid) == 26 and len({e.id for e in grid}) == 26
    published = {e.id: e.config for e in grid if e.source != "reconstructed"}
    assert published["16"] == "mini/41/multi/5/0" and published["24"] == "41/mini/multi/5/0"


def test_leaderboard_lists_top_k():
    rs = [result(str(k), k / 10, 1) for k in range(6)]
    md = leaderboard_markdown(rs, k=4)
    assert md.startswith("| Top-4 by")
    f1_rows = [line for line in md.splitlines() if line.startswith("| F1 |")]
    assert [row.split("|")[2].strip() for row in f1_rows] == ["5", "4", "3", "2"]


def test_config_result_round_trip():
    r = ConfigResult("x", parse_config_string("mini/41/multi/2/0.7"), summary(0.5, 10, annotations=("n",)), "mini/41/multi/2/0.7")
    assert ConfigResult.from_dict(json.loads(json.dumps(r.to_dict()))) == r
