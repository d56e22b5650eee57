"""Metamorphic hallucination detection for retrieval-augmented generation.

An answer is split into factoids, each factoid is rewritten into synonym
and antonym variants, every variant is checked against the retrieved
context, and the resulting penalties become factoid scores and a
response-level score.
"""

__version__ = "0.1.0"

from .core import (
    DetectionInput,
    DetectionReport,
    Ensemble,
    Factoid,
    FactoidScore,
    MutatedFactoid,
    MutationKind,
    Penalty,
    RunConfig,
    UsageStats,
    Verdict,
    VerdictLabel,
    validate_input,
)
from .gateway import Gateway, RemoteModel, ScriptedMock, TripleWorldMock
from .pipeline import BackendSet, ModelRegistry, detect, detect_batch
from .policy import TopicRuleSet, default_rules, load_rules
from .scorer import classify, factoid_score, penalty, response_score

__all__ = [
    "BackendSet",
    "DetectionInput",
    "DetectionReport",
    "Ensemble",
    "Factoid",
    "FactoidScore",
    "Gateway",
    "ModelRegistry",
    "MutatedFactoid",
    "MutationKind",
    "Penalty",
    "RemoteModel",
    "RunConfig",
    "ScriptedMock",
    "TopicRuleSet",
    "TripleWorldMock",
    "UsageStats",
    "Verdict",
    "VerdictLabel",
    "classify",
    "default_rules",
    "detect",
    "detect_batch",
    "factoid_score",
    "load_rules",
    "penalty",
    "response_score",
    "validate_input",
]
