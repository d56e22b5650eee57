import json

import pytest

from halluguard import BackendSet, RunConfig, TopicRuleSet, TripleWorldMock
from halluguard.evaluation import EvalRecord
from halluguard.gateway import Gateway, RetryPolicy

SYNONYMS = {
    "p": ("p1", "p2", "p3", "p4", "p5"),
    "treats": ("cures", "remedies"),
    "located_in": ("situated_in", "found_in"),
    "requires": ("needs", "demands"),
}
ANTONYMS = {
    "p": ("np1", "np2", "np3", "np4", "np5"),
    "treats": ("worsens", "aggravates"),
    "located_in": ("absent_from",),
    "requires": ("exempts",),
}


@pytest.fixture
def world():
    return TripleWorldMock(SYNONYMS, ANTONYMS)


@pytest.fixture
def small_world():
    return TripleWorldMock({"p": ("p1", "p2")}, {"p": ("np1", "np2")})


@pytest.fixture
def config():
    return RunConfig("mock-decomp", "mock-gen", "mock-verify", n_variants=2, temperature=0.0, seed=7)


@pytest.fixture
def backends(small_world):
    return BackendSet.single(small_world)


@pytest.fixture
def no_rules():
    return TopicRuleSet()


@pytest.fixture
def fast_gateway():
    return Gateway(retry=RetryPolicy(attempts=3, base_delay_s=0.001), sleep=lambda s: None)


# Hand-built 20-record world. Each category fixes the outcome by the mock
# rules: S = every claim stated in context (H = 0), C = context states the
# opposite (H = 1), U = context silent (H = 0.5), M = one supported and one
# contradicted claim (H = 1 via the max).
DATASET_PLAN = (
    [("C", True)] * 5
    + [("U", True)] * 3
    + [("M", True)] * 3
    + [("C", False)] * 1
    + [("S", False)] * 6
    + [("S", True)] * 2
)


def _record(k, category, label):
    s, o = f"drug{k}", f"condition{k}"
    claim = f"{s}|treats|{o}"
    if category == "S":
        answer, context = claim + ".", [f"{claim}\nfiller{k}|located_in|ward{k}"]
    elif category == "C":
        answer, context = claim + ".", [f"{s}|worsens|{o}"]
    elif category == "U":
        answer, context = claim + ".", [f"other{k}|requires|form{k}"]
    else:
        answer = f"clinic{k}|located_in|city{k}. {claim}."
        context = [f"clinic{k}|located_in|city{k}", f"{s}|aggravates|{o}"]
    return EvalRecord(f"r{k:02d}", f"does {s} treat {o}?", tuple(context), answer, label)


@pytest.fixture
def dataset_20():
    return [_record(k, cat, lab) for k, (cat, lab) in enumerate(DATASET_PLAN)]


@pytest.fixture
def mock_run_file(tmp_path):
    """Run file whose models all resolve to the triple-world mock."""
    world = {
        "type": "triple_world",
        "synonyms": {k: list(v) for k, v in SYNONYMS.items()},
        "antonyms": {k: list(v) for k, v in ANTONYMS.items()},
    }
    models = {m: world for m in ("gpt-4.1-mini", "gpt-4.1", "gpt-4.1-nano", "claude-sonnet-4")}
    doc = {"config_string": "mini/41/41/2/0", "run": {"seed": 1}, "models": models}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path



def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when != "call":
                continue
            for key, value in getattr(report, "user_properties", ()):
                if key == "criterion":
                    lines.append((value, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for value, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {value}")
