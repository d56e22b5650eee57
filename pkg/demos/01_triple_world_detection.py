"""
Detecting an unsupported claim, offline
=======================================

The triple-world mock stands in for every model role. Facts are written as
``subject|predicate|object``; the mock knows which predicates are synonyms
and antonyms of each other, so the whole detector runs deterministically
without network access.
"""

from halluguard import BackendSet, DetectionInput, RunConfig, TopicRuleSet, TripleWorldMock, detect

world = TripleWorldMock(
    synonyms={"treats": ("cures", "remedies"), "located_in": ("situated_in", "found_in")},
    antonyms={"treats": ("worsens", "aggravates"), "located_in": ("absent_from",)},
)
config = RunConfig("decomposer", "generator", "verifier", n_variants=2)
backends = BackendSet.single(world)

###############################################################################
# A grounded answer: every synonym variant is entailed by the context and
# every antonym variant is contradicted, so each penalty is 0.

context = ["aspirin|treats|headache", "clinic|located_in|paris"]
grounded = detect(DetectionInput("what does aspirin do?", context, "aspirin|treats|headache. clinic|located_in|paris."), config, backends, TopicRuleSet())
for f in grounded.factoids:
    print(f"S_{f.index} = {f.score:.3f}  {f.text}")
print("H =", grounded.response_score, "flagged:", grounded.flagged)

###############################################################################
# The second claim is not in the context. The verifier answers "Not sure" to
# every variant, each costs 0.5, and H = max S_i reaches the 0.5 threshold.

partly = detect(DetectionInput("what does aspirin do?", context, "aspirin|treats|headache. aspirin|treats|fever."), config, backends, TopicRuleSet())
for f in partly.factoids:
    print(f"S_{f.index} = {f.score:.3f}  {f.text}")
    for check in f.checks:
        print(f"    {check.variant.kind.value:8s} {check.variant.text:28s} -> {check.verdict.label.value:9s} penalty {float(check.penalty)}")
print("H =", partly.response_score, "flagged:", partly.flagged, "action:", partly.action.kind.value)

###############################################################################
# Token and call accounting per stage: one decomposition call, two mutation
# calls per factoid, and M x 2N verification calls.

u = partly.usage
print({stage: getattr(u, stage).calls for stage in ("decompose", "mutate", "verify")}, "total tokens:", u.totals.total_tokens)
