"""
Topic-aware thresholds and escalation
=====================================

Queries touching sensitive domains (pregnancy, asylum, labour rights) use the
stricter identity threshold. Very high scores in those domains escalate to a
human instead of being shown with highlights.
"""

import tempfile
from pathlib import Path

from halluguard import BackendSet, DetectionInput, RunConfig, TripleWorldMock, default_rules, detect
from halluguard.policy import AuditSink, render_highlights, select_threshold, tag_topics

rules = default_rules()
config = RunConfig("d", "g", "v", n_variants=2)

###############################################################################
# Threshold selection from the query and context.

for query in ("Can pregnant women take ibuprofen?", "Do refugees automatically receive protection?", "What is the capital of France?"):
    topics = tag_topics(query, ["(context)"], rules)
    print(f"{query:48s} topics={topics} tau={select_threshold(topics, config, rules)}")

###############################################################################
# A contradicted claim in a sensitive domain escalates. An audit record
# without any user identity goes to a JSONL file.

world = TripleWorldMock({"safe_during": ("harmless_during",)}, {"safe_during": ("risky_during",)})
answer = "ibuprofen|safe_during|pregnancy."
inp = DetectionInput("Can pregnant women take ibuprofen?", ["ibuprofen|risky_during|pregnancy"], answer)
with tempfile.TemporaryDirectory() as tmp:
    sink = AuditSink(Path(tmp) / "audit.jsonl")
    report = detect(inp, config, BackendSet.single(world), rules, audit_sink=sink)
    print("H =", report.response_score, "tau =", report.threshold_used, "->", report.action.kind.value, "|", report.action.reason)
    print("audit:", Path(sink.path).read_text().strip()[:160], "...")

###############################################################################
# A moderate score gets a flag with highlighted spans and a citation request.

inp = DetectionInput("Do refugees get protection?", ["x|q|y"], answer)
report = detect(inp, config, BackendSet.single(world), rules)
print(report.action.kind.value, "citation required:", report.action.citation_required)
print(render_highlights(answer, report.action))
