import json

import pytest

from halluguard.cli import main
from halluguard.evaluation import save_dataset


def run(*argv):
    return main([str(a) for a in argv])


def test_detect_supported_exits_zero(mock_run_file, tmp_path, capsys):
    code = run("detect", "--config", mock_run_file, "--chunk", "drug|treats|flu", "--answer", "drug|treats|flu.")
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["response_score"] == 0.0 and report["action"]["kind"] == "pass"


def test_detect_contradicted_exits_two(mock_run_file, tmp_path):
    out = tmp_path / "r.json"
    code = run("detect", "--config", mock_run_file, "--chunk", "drug|worsens|flu", "--answer", "drug|treats|flu.", "--out", out)
    assert code == 2
    assert json.loads(out.read_text())["flagged"] is True


def test_detect_context_file_and_audit(mock_run_file, tmp_path):
    ctx = tmp_path / "ctx.json"
    ctx.write_text(json.dumps(["drug|treats|flu"]))
    log = tmp_path / "audit.jsonl"
    ans = tmp_path / "a.txt"
    ans.write_text("drug|treats|flu.")
    code = run("detect", "--config", mock_run_file, "--context-file", ctx, "--answer-file", ans, "--audit-log", log, "--out", tmp_path / "r.json")
    assert code == 0 and len(log.read_text().splitlines()) == 1


def test_detect_missing_answer_exits_one(mock_run_file, capsys):
    assert run("detect", "--config", mock_run_file, "--chunk", "x") == 1
    assert "--answer" in capsys.readouterr().err


def test_detect_empty_context_exits_one(mock_run_file, capsys):
    assert run("detect", "--config", mock_run_file, "--answer", "a|p|b.") == 1
    assert "EmptyContext" in capsys.readouterr().err


def test_unknown_subcommand_exits_one():
    assert run("frobnicate") == 1


@pytest.fixture
def dataset_file(dataset_20, tmp_path):
    path = tmp_path / "data.jsonl"
    save_dataset(dataset_20, path)
    return path


def test_evaluate_single_seed(mock_run_file, dataset_file, tmp_path):
    out = tmp_path / "out"
    assert run("evaluate", "--dataset", dataset_file, "--config", mock_run_file, "--out-dir", out) == 0
    doc = json.loads((out / "config.json").read_text())
    assert doc["metrics"]["f1"] == pytest.approx(0.88)
    assert doc["config_string"] == "mini/41/41/2/0"
    assert (out / "leaderboard.md").exists()


def test_evaluate_seeds_write_consistency(mock_run_file, dataset_file, tmp_path):
    out = tmp_path / "out"
    assert run("evaluate", "--dataset", dataset_file, "--config", mock_run_file, "--seeds", "1,2", "--out-dir", out) == 0
    assert {p.name for p in out.glob("*.json")} == {"config-s1.json", "config-s2.json"}
    rep = json.loads((out / "consistency" / "config.json").read_text())
    assert rep["seeds"] == [1, 2]
    assert rep["metrics"]["f1"]["std"] == 0.0


def test_evaluate_grid(mock_run_file, dataset_file, tmp_path):
    out = tmp_path / "out"
    assert run("evaluate", "--dataset", dataset_file, "--grid", "paper26", "--models", mock_run_file, "--out-dir", out) == 0
    assert len(list(out.glob("*.json"))) == 26
    rows = (out / "leaderboard.md").read_text().splitlines()
    assert sum(row.startswith("| F1 |") for row in rows) == 4


def test_evaluate_needs_exactly_one_source(dataset_file, tmp_path):
    assert run("evaluate", "--dataset", dataset_file, "--out-dir", tmp_path) == 1


def _write_results(directory, points):
    directory.mkdir(exist_ok=True)
    for cid, f1, tokens in points:
        doc = {
            "config_id": cid,
            "config_string": "mini/41/41/2/0",
            "config": {"decomposition_model": "d", "generation_model": "g", "verifier": "v"},
            "metrics": {"precision": 0, "recall": 0, "f1": f1, "accuracy": 0, "tp": 0, "fp": 0, "tn": 0, "fn": 0, "mean_latency_ms": 0, "mean_total_tokens": tokens},
        }
        (directory / f"{cid}.json").write_text(json.dumps(doc))


def test_pareto_three_points(tmp_path):
    _write_results(tmp_path / "res", [("a", 0.94, 100), ("b", 0.93, 80), ("c", 0.90, 120)])
    out = tmp_path / "front.json"
    assert run("pareto", "--results-dir", tmp_path / "res", "--out", out) == 0
    assert [p["config_id"] for p in json.loads(out.read_text())["points"]] == ["b", "a"]


def test_pareto_single_file(tmp_path, capsys):
    _write_results(tmp_path / "res", [("only", 0.5, 10)])
    assert run("pareto", "--results-dir", tmp_path / "res") == 0
    assert json.loads(capsys.readouterr().out)["points"][0]["config_id"] == "only"


def test_pareto_bad_cost(tmp_path, capsys):
    _write_results(tmp_path / "res", [("a", 0.5, 10)])
    assert run("pareto", "--results-dir", tmp_path / "res", "--cost", "dollars") == 1
    assert "dollars" in capsys.readouterr().err


def test_pareto_empty_dir(tmp_path):
    (tmp_path / "res").mkdir()
    assert run("pareto", "--results-dir", tmp_path / "res") == 1
