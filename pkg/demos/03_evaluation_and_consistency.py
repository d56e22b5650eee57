"""
Evaluating a configuration and checking run-to-run stability
============================================================

Records are labelled ``True`` when the answer is hallucinated (the positive
class). ``evaluate`` returns the confusion matrix, and ``consistency``
summarises repeated seeded runs as mean, sample std and CV.
"""

from halluguard import BackendSet, RunConfig, TripleWorldMock
from halluguard.evaluation import EvalRecord, consistency, evaluate, with_seed

world = TripleWorldMock({"treats": ("cures",)}, {"treats": ("worsens",)})

records = [
    EvalRecord("grounded", "q", ("a|treats|b",), "a|treats|b.", False),
    EvalRecord("contradicted", "q", ("c|worsens|d",), "c|treats|d.", True),
    EvalRecord("unsupported", "q", ("x|y|z",), "e|treats|f.", True),
    # context silent but labelled grounded: a false positive at tau = 0.5
    EvalRecord("silent-but-fine", "q", ("x|y|z",), "g|treats|h.", False),
]
config = RunConfig("d", "g", "v", n_variants=2)

m = evaluate(records, config, BackendSet.single(world))
print(f"TP={m.tp} FP={m.fp} TN={m.tn} FN={m.fn}")
print(f"P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f} Acc={m.accuracy:.3f}")

###############################################################################
# Five seeds. The mock is deterministic, so every quality metric has zero
# spread. Latency is wall-clock time and so varies a little.

runs = [evaluate(records, with_seed(config, s), BackendSet.single(world)) for s in range(1, 6)]
report = consistency(runs, seeds=range(1, 6))
for name, stat in report.metrics.items():
    print(f"{name:18s} mean={stat.mean:.4f} std={stat.std:.4f} cv={stat.cv}")
