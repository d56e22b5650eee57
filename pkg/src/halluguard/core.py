"""Domain types shared by every stage of the detector.

All types are frozen dataclasses or enums and serialize to canonical JSON
through ``to_dict`` / ``from_dict``. Field names are snake_case and stable.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

SCHEMA_VERSION = "1"


class DetectorError(Exception):
    """Base class for every error raised by this package."""


class InputError(DetectorError):
    """A DetectionInput violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name

    @property
    def code(self) -> str:
        return type(self).__name__


class EmptyAnswer(InputError):
    pass


class EmptyContext(InputError):
    pass


class EmptyChunk(InputError):
    pass


class ConfigError(DetectorError, ValueError):
    pass


@dataclass(frozen=True)
class DetectionInput:
    query: str
    context: tuple[str, ...]
    answer: str

    def __post_init__(self):
        # lists are accepted at construction but stored as tuples
        object.__setattr__(self, "context", tuple(self.context))

    def to_dict(self) -> dict:
        return {"query": self.query, "context": list(self.context), "answer": self.answer}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionInput":
        return cls(query=d.get("query", ""), context=tuple(d.get("context", ())), answer=d.get("answer", ""))

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def validate_input(inp: DetectionInput) -> DetectionInput:
    """Return ``inp`` unchanged, or raise the first invariant it breaks."""
    if not inp.answer or not inp.answer.strip():
        raise EmptyAnswer("answer", "answer must be non-empty")
    if len(inp.context) == 0:
        raise EmptyContext("context", "at least one context chunk is required")
    for k, chunk in enumerate(inp.context):
        if not isinstance(chunk, str) or not chunk.strip():
            raise EmptyChunk(f"context[{k}]", "context chunks must be non-empty text")
    return inp


@dataclass(frozen=True)
class Factoid:
    index: int
    text: str
    answer_span: tuple[int, int] | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("factoid indices start at 1")
        if not self.text.strip() or "\n" in self.text:
            raise ValueError(f"factoid text must be one non-empty line: {self.text!r}")
        if self.answer_span is not None:
            object.__setattr__(self, "answer_span", tuple(self.answer_span))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "answer_span": list(self.answer_span) if self.answer_span else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Factoid":
        span = d.get("answer_span")
        return cls(d["index"], d["text"], tuple(span) if span else None)


class MutationKind(str, Enum):
    SYNONYM = "synonym"
    ANTONYM = "antonym"


@dataclass(frozen=True)
class MutatedFactoid:
    parent_index: int
    variant_index: int
    kind: MutationKind
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("mutated factoid text must be non-empty")

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.parent_index, self.kind.value, self.variant_index)

    @property
    def id(self) -> str:
        return f"{self.parent_index}:{self.kind.value}:{self.variant_index}"

    def to_dict(self) -> dict:
        return {
            "parent_index": self.parent_index,
            "variant_index": self.variant_index,
            "kind": self.kind.value,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MutatedFactoid":
        return cls(d["parent_index"], d["variant_index"], MutationKind(d["kind"]), d["text"])


class VerdictLabel(str, Enum):
    YES = "yes"
    NO = "no"
    NOT_SURE = "not_sure"


@dataclass(frozen=True)
class Verdict:
    label: VerdictLabel
    raw_response: str = ""
    unparseable: bool = False

    def to_dict(self) -> dict:
        return {"label": self.label.value, "raw_response": self.raw_response, "unparseable": self.unparseable}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(VerdictLabel(d["label"]), d.get("raw_response", ""), d.get("unparseable", False))


class Penalty(float, Enum):
    """Cost of one verification outcome. Only these three values exist."""

    NONE = 0.0
    HALF = 0.5
    FULL = 1.0


@dataclass(frozen=True)
class VariantCheck:
    """One verified mutation: what was asked, what came back, what it cost."""

    variant: MutatedFactoid
    verdict: Verdict
    penalty: Penalty

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.to_dict(),
            "verdict": self.verdict.to_dict(),
            "penalty": float(self.penalty),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariantCheck":
        return cls(MutatedFactoid.from_dict(d["variant"]), Verdict.from_dict(d["verdict"]), Penalty(d["penalty"]))


@dataclass(frozen=True)
class FactoidScore:
    index: int
    text: str
    score: float
    checks: tuple[VariantCheck, ...] = ()
    answer_span: tuple[int, int] | None = None
    undersampled: bool = False

    @property
    def penalties(self) -> list[tuple[str, Penalty]]:
        return [(c.variant.id, c.penalty) for c in self.checks]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "score": self.score,
            "answer_span": list(self.answer_span) if self.answer_span else None,
            "undersampled": self.undersampled,
            "checks": [c.to_dict() for c in self.checks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactoidScore":
        span = d.get("answer_span")
        return cls(
            index=d["index"],
            text=d["text"],
            score=d["score"],
            checks=tuple(VariantCheck.from_dict(c) for c in d.get("checks", ())),
            answer_span=tuple(span) if span else None,
            undersampled=d.get("undersampled", False),
        )


STAGES = ("decompose", "mutate", "verify")


@dataclass(frozen=True)
class StageUsage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __add__(self, other: "StageUsage") -> "StageUsage":
        return StageUsage(
            self.calls + other.calls,
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict:
        return {"calls": self.calls, "prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass(frozen=True)
class UsageStats:
    decompose: StageUsage = StageUsage()
    mutate: StageUsage = StageUsage()
    verify: StageUsage = StageUsage()

    @property
    def totals(self) -> StageUsage:
        # derived, so it can never drift from the stage counters
        return self.decompose + self.mutate + self.verify

    def stage(self, name: str) -> StageUsage:
        if name not in STAGES:
            raise ValueError(f"unknown stage {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        out = {s: self.stage(s).to_dict() for s in STAGES}
        out["totals"] = self.totals.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "UsageStats":
        return cls(**{s: StageUsage(**d[s]) for s in STAGES})


@dataclass(frozen=True)
class Ensemble:
    """Verifier marker: majority vote over several member models."""

    members: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")


@dataclass(frozen=True)
class RunConfig:
    decomposition_model: str
    generation_model: str
    verifier: str | Ensemble
    n_variants: int = 2
    temperature: float = 0.0
    threshold_general: float = 0.5
    threshold_identity: float = 0.3
    seed: int = 0
    escalation_threshold: float = 0.8
    escalation_mode: str = "escalate"
    fallback_decomposition: bool = False

    def __post_init__(self):
        if not isinstance(self.n_variants, int) or self.n_variants < 1:
            raise ConfigError(f"n_variants must be an integer >= 1, got {self.n_variants!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature must be in [0, 2], got {self.temperature}")
        for name in ("threshold_general", "threshold_identity", "escalation_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.escalation_mode not in ("escalate", "abstain", "regenerate"):
            raise ConfigError(f"unknown escalation_mode {self.escalation_mode!r}")
        if self.threshold_identity > self.threshold_general:
            warnings.warn(
                f"threshold_identity ({self.threshold_identity}) is looser than "
                f"threshold_general ({self.threshold_general})",
                stacklevel=3,
            )

    @property
    def verifier_members(self) -> tuple[str, ...]:
        if isinstance(self.verifier, Ensemble):
            return self.verifier.members
        return (self.verifier,)

    def to_dict(self) -> dict:
        verifier: Any = self.verifier
        if isinstance(verifier, Ensemble):
            verifier = {"ensemble": list(verifier.members)}
        return {
            "decomposition_model": self.decomposition_model,
            "generation_model": self.generation_model,
            "verifier": verifier,
            "n_variants": self.n_variants,
            "temperature": self.temperature,
            "threshold_general": self.threshold_general,
            "threshold_identity": self.threshold_identity,
            "seed": self.seed,
            "escalation_threshold": self.escalation_threshold,
            "escalation_mode": self.escalation_mode,
            "fallback_decomposition": self.fallback_decomposition,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        verifier = d.get("verifier")
        if isinstance(verifier, dict):
            d["verifier"] = Ensemble(tuple(verifier["ensemble"]))
        elif isinstance(verifier, list):
            d["verifier"] = Ensemble(tuple(verifier))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown RunConfig fields: {sorted(unknown)}")
        if "temperature" in d:
            d["temperature"] = float(d["temperature"])
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]


def canonical_json(obj: Any, indent: int | None = None) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent, separators=None if indent else (",", ":"))


@dataclass(frozen=True)
class DetectionReport:
    input: DetectionInput
    factoids: tuple[FactoidScore, ...]
    response_score: float
    threshold_used: float
    flagged: bool
    topics: tuple[str, ...]
    action: Any  # policy.PolicyAction; kept untyped here to avoid an import cycle
    usage: UsageStats
    latency_ms: float
    config_fingerprint: str = ""
    fallback_used: bool = False
    schema_version: str = SCHEMA_VERSION
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.flagged != (self.response_score >= self.threshold_used):
            raise ValueError("flagged must equal response_score >= threshold_used")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "input": self.input.to_dict(),
            "factoids": [f.to_dict() for f in self.factoids],
            "response_score": self.response_score,
            "threshold_used": self.threshold_used,
            "flagged": self.flagged,
            "topics": list(self.topics),
            "action": self.action.to_dict(),
            "usage": self.usage.to_dict(),
            "latency_ms": self.latency_ms,
            "config_fingerprint": self.config_fingerprint,
            "fallback_used": self.fallback_used,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        from .policy import PolicyAction

        return cls(
            input=DetectionInput.from_dict(d["input"]),
            factoids=tuple(FactoidScore.from_dict(f) for f in d["factoids"]),
            response_score=d["response_score"],
            threshold_used=d["threshold_used"],
            flagged=d["flagged"],
            topics=tuple(d["topics"]),
            action=PolicyAction.from_dict(d["action"]),
            usage=UsageStats.from_dict(d["usage"]),
            latency_ms=d["latency_ms"],
            config_fingerprint=d.get("config_fingerprint", ""),
            fallback_used=d.get("fallback_used", False),
            schema_version=d.get("schema_version", SCHEMA_VERSION),
            notes=tuple(d.get("notes", ())),
        )

    def to_json(self, indent: int | None = 2) -> str:
        return canonical_json(self.to_dict(), indent=indent)


TIMING_FIELDS = ("latency_ms",)


def without_timing(report: dict) -> dict:
    """Copy of a serialized report with wall-clock fields removed."""
    return {k: v for k, v in report.items() if k not in TIMING_FIELDS}
