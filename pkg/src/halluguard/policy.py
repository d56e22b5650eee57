"""Deployment hooks: topic tags, topic-aware thresholds, actions, audit log.

Topic rules are keyword/regex lists. Only the topic of the query or the
retrieved context is used; nothing about the user is inferred or stored.

Rule file schema (JSON list)::

    [{"label": "healthcare/pregnancy",
      "patterns": ["\\\\bpregnan", ...],   # case-insensitive regexes
      "sensitive": true,
      "threshold": 0.3}]                   # optional per-topic override
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .core import DetectorError, FactoidScore, RunConfig


@dataclass(frozen=True)
class TopicRule:
    label: str
    patterns: tuple[str, ...]
    sensitive: bool = False
    threshold: float | None = None
    _compiled: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(self, "_compiled", tuple(re.compile(p, re.IGNORECASE) for p in self.patterns))
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"{self.label}: threshold must be in [0, 1]")

    def matches(self, text: str) -> bool:
        return any(rx.search(text) for rx in self._compiled)

    def to_dict(self) -> dict:
        d = {"label": self.label, "patterns": list(self.patterns), "sensitive": self.sensitive}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        return d


@dataclass(frozen=True)
class TopicRuleSet:
    rules: tuple[TopicRule, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        labels = [r.label for r in self.rules]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate topic labels in {labels}")

    def get(self, label: str) -> TopicRule | None:
        return next((r for r in self.rules if r.label == label), None)

    def is_sensitive(self, labels: Iterable[str]) -> bool:
        return any((r := self.get(lab)) is not None and r.sensitive for lab in labels)

    def to_list(self) -> list[dict]:
        return [r.to_dict() for r in self.rules]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "TopicRuleSet":
        return cls(
            tuple(
                TopicRule(
                    label=it["label"],
                    patterns=tuple(it.get("patterns", ())),
                    sensitive=bool(it.get("sensitive", False)),
                    threshold=it.get("threshold"),
                )
                for it in items
            )
        )


def default_rules() -> TopicRuleSet:
    text = resources.files("halluguard").joinpath("data/topic_rules.json").read_text(encoding="utf-8")
    return TopicRuleSet.from_list(json.loads(text))


def load_rules(path: str | Path) -> TopicRuleSet:
    return TopicRuleSet.from_list(json.loads(Path(path).read_text(encoding="utf-8")))


def tag_topics(query: str, context: Sequence[str], rules: TopicRuleSet) -> list[str]:
    texts = [query, *context]
    return [r.label for r in rules.rules if any(r.matches(t) for t in texts)]


def select_threshold(topics: Sequence[str], config: RunConfig, rules: TopicRuleSet | None = None) -> float:
    """Strictest threshold among the matched topics.

    A sensitive topic contributes its own override or ``threshold_identity``;
    a non-sensitive one its override or ``threshold_general``.
    """
    rules = rules if rules is not None else default_rules()
    candidates = []
    for label in topics:
        rule = rules.get(label)
        if rule is None:
            continue
        if rule.threshold is not None:
            candidates.append(rule.threshold)
        elif rule.sensitive:
            candidates.append(config.threshold_identity)
        else:
            candidates.append(config.threshold_general)
    return min(candidates) if candidates else config.threshold_general


class ActionKind(str, Enum):
    PASS = "pass"
    FLAG = "flag_with_highlights"
    ESCALATE = "escalate"
    ABSTAIN = "abstain"


SEVERITY = {ActionKind.PASS: 0, ActionKind.FLAG: 1, ActionKind.ESCALATE: 2, ActionKind.ABSTAIN: 2}


@dataclass(frozen=True)
class Highlight:
    factoid_index: int
    text: str
    score: float
    span: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "factoid_index": self.factoid_index,
            "text": self.text,
            "score": self.score,
            "span": list(self.span) if self.span else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Highlight":
        return cls(d["factoid_index"], d["text"], d["score"], tuple(d["span"]) if d.get("span") else None)


@dataclass(frozen=True)
class PolicyAction:
    kind: ActionKind
    threshold: float
    highlights: tuple[Highlight, ...] = ()
    citation_required: bool = False
    reason: str | None = None

    @property
    def spans(self) -> tuple[tuple[int, int], ...]:
        return tuple(h.span for h in self.highlights if h.span is not None)

    @property
    def severity(self) -> int:
        return SEVERITY[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "threshold": self.threshold,
            "highlights": [h.to_dict() for h in self.highlights],
            "spans": [list(s) for s in self.spans],
            "citation_required": self.citation_required,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyAction":
        return cls(
            kind=ActionKind(d["kind"]),
            threshold=d["threshold"],
            highlights=tuple(Highlight.from_dict(h) for h in d.get("highlights", ())),
            citation_required=d.get("citation_required", False),
            reason=d.get("reason"),
        )


def decide_action(
    h: float,
    tau: float,
    topics: Sequence[str],
    factoids: Sequence[FactoidScore],
    escalation_threshold: float = 0.8,
    rules: TopicRuleSet | None = None,
    mode: str = "escalate",
) -> PolicyAction:
    """Map a response score to an action.

    Below ``tau`` the answer passes. From ``tau`` up every factoid scoring at
    least ``tau`` is highlighted and citations are forced. At or above
    ``escalation_threshold`` a sensitive topic turns the flag into an
    escalation (or an abstention, per ``mode``).
    """
    if escalation_threshold < tau:
        raise ValueError("escalation_threshold must be >= tau")
    if h < tau:
        return PolicyAction(ActionKind.PASS, tau)
    rules = rules if rules is not None else default_rules()
    highlights = tuple(Highlight(f.index, f.text, f.score, f.answer_span) for f in factoids if f.score >= tau)
    if h >= escalation_threshold and rules.is_sensitive(topics):
        if mode == "escalate":
            return PolicyAction(ActionKind.ESCALATE, tau, highlights, True, "human review required")
        reason = "regenerate" if mode == "regenerate" else "expert verification required"
        return PolicyAction(ActionKind.ABSTAIN, tau, highlights, True, reason)
    return PolicyAction(ActionKind.FLAG, tau, highlights, True)


def render_highlights(answer: str, action: PolicyAction, mark: tuple[str, str] = ("[[", "]]")) -> str:
    """Wrap flagged spans in markers; the whole answer if none could be located."""
    if action.kind is ActionKind.PASS:
        return answer
    spans = sorted(set(action.spans))
    if not spans:
        return f"{mark[0]}{answer}{mark[1]}"
    merged: list[list[int]] = []
    for s, e in spans:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    out, pos = [], 0
    for s, e in merged:
        out += [answer[pos:s], mark[0], answer[s:e], mark[1]]
        pos = e
    out.append(answer[pos:])
    return "".join(out)


class SinkUnavailable(DetectorError):
    pass


@dataclass(frozen=True)
class AuditFactoid:
    text: str
    score: float
    span: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {"text": self.text, "score": self.score, "span": list(self.span) if self.span else None}


@dataclass(frozen=True)
class AuditRecord:
    timestamp: str
    input_digest: str
    topics: tuple[str, ...]
    response_score: float
    threshold: float
    factoids: tuple[AuditFactoid, ...]
    action: PolicyAction
    config_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "input_digest": self.input_digest,
            "topics": list(self.topics),
            "response_score": self.response_score,
            "threshold": self.threshold,
            "factoids": [f.to_dict() for f in self.factoids],
            "action": self.action.to_dict(),
            "config_fingerprint": self.config_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        return cls(
            timestamp=d["timestamp"],
            input_digest=d["input_digest"],
            topics=tuple(d["topics"]),
            response_score=d["response_score"],
            threshold=d["threshold"],
            factoids=tuple(
                AuditFactoid(f["text"], f["score"], tuple(f["span"]) if f.get("span") else None) for f in d["factoids"]
            ),
            action=PolicyAction.from_dict(d["action"]),
            config_fingerprint=d["config_fingerprint"],
        )

    @classmethod
    def from_report(cls, report, timestamp: str | None = None) -> "AuditRecord":
        return cls(
            timestamp=timestamp or datetime.now(timezone.utc).isoformat(),
            input_digest=report.input.digest(),
            topics=tuple(report.topics),
            response_score=report.response_score,
            threshold=report.threshold_used,
            factoids=tuple(AuditFactoid(f.text, f.score, f.answer_span) for f in report.factoids),
            action=report.action,
            config_fingerprint=report.config_fingerprint,
        )


class AuditSink:
    """Append-only JSONL file. Appends from many threads are serialized."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: AuditRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False)
        with self._lock:
            try:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise SinkUnavailable(f"cannot append to {self.path}: {exc}") from exc

    def read(self) -> list[AuditRecord]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as fh:
            return [AuditRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def append_audit(record: AuditRecord, sink: AuditSink | str | Path) -> bool:
    if not isinstance(sink, AuditSink):
        sink = AuditSink(sink)
    sink.append(record)
    return True
