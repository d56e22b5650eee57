"""End-to-end detection: decompose, mutate, verify, score, apply policy.

Scheduling is two-phase: every mutation request for every factoid is
issued first, then every verification. Results are joined by
``(factoid, kind, variant)`` key, so the report does not depend on
completion order or on the degree of parallelism.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .core import (
    DetectionInput,
    DetectionReport,
    DetectorError,
    ConfigError,
    FactoidScore,
    MutatedFactoid,
    MutationKind,
    RunConfig,
    VariantCheck,
    validate_input,
)
from .decomposer import decompose
from .gateway import (
    BackendError,
    BackendSpec,
    Gateway,
    RemoteModel,
    UsageMeter,
    backend_from_dict,
    default_gateway,
)
from .mutator import MutationShortfall, generate_mutations
from .policy import AuditRecord, AuditSink, TopicRuleSet, decide_action, default_rules, select_threshold, tag_topics
from .scorer import classify, factoid_score, penalty, response_score
from .verifier import ensemble_verify, verify

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"


@dataclass(frozen=True)
class BackendSet:
    decompose: BackendSpec
    mutate: BackendSpec
    verify: tuple[BackendSpec, ...]

    def __post_init__(self):
        if isinstance(self.verify, (list, tuple)):
            object.__setattr__(self, "verify", tuple(self.verify))
        else:
            object.__setattr__(self, "verify", (self.verify,))
        if not self.verify:
            raise ConfigError("at least one verifier backend is required")

    @classmethod
    def single(cls, backend: BackendSpec) -> "BackendSet":
        return cls(backend, backend, (backend,))


@dataclass
class ModelRegistry:
    """Model id -> backend. Unknown ids fall back to a remote endpoint if one is set."""

    models: dict[str, BackendSpec] = field(default_factory=dict)
    fallback_endpoint: str | None = None
    api_key_env: str | None = "OPENAI_API_KEY"

    def backend(self, model_id: str) -> BackendSpec:
        if model_id in self.models:
            return self.models[model_id]
        if self.fallback_endpoint:
            return RemoteModel(self.fallback_endpoint, model_id, self.api_key_env)
        raise ConfigError(f"no backend registered for model {model_id!r}")

    def resolve(self, config: RunConfig) -> BackendSet:
        return BackendSet(
            self.backend(config.decomposition_model),
            self.backend(config.generation_model),
            tuple(self.backend(m) for m in config.verifier_members),
        )

    @classmethod
    def from_dict(cls, models: Mapping[str, Mapping], fallback_endpoint: str | None = None) -> "ModelRegistry":
        return cls({k: backend_from_dict(v) for k, v in models.items()}, fallback_endpoint)

    @classmethod
    def from_env(cls) -> "ModelRegistry":
        return cls({}, os.environ.get("HALLUGUARD_ENDPOINT", DEFAULT_ENDPOINT))


def _run_all(fn: Callable, items: Sequence, parallelism: int) -> list:
    """Map ``fn`` over ``items``, returning each result or the exception raised."""

    def guarded(item):
        try:
            return fn(item)
        except DetectorError as exc:
            return exc

    if parallelism <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
        return list(pool.map(guarded, items))


_KIND_ORDER = {kind: n for n, kind in enumerate(MutationKind)}


def _check_order(check: VariantCheck) -> tuple[int, int]:
    """Synonym variants first, each kind in variant order."""
    return (_KIND_ORDER[check.variant.kind], check.variant.variant_index)


def detect(
    inp: DetectionInput,
    config: RunConfig,
    backends: BackendSet,
    rules: TopicRuleSet | None = None,
    gateway: Gateway | None = None,
    parallelism: int = 8,
    audit_sink: AuditSink | None = None,
) -> DetectionReport:
    """Score one (query, context, answer) triple."""
    validate_input(inp)
    t0 = time.perf_counter()
    rules = rules if rules is not None else default_rules()
    gateway = gateway or default_gateway()
    meter = UsageMeter()
    notes: list[str] = []

    topics = tag_topics(inp.query, inp.context, rules)
    tau = select_threshold(topics, config, rules)

    factoids, fallback_used = decompose(inp.answer, backends.decompose, config, gateway, meter)
    if fallback_used:
        notes.append("decomposition returned nothing; whole answer scored as one factoid")

    # phase 1: all mutations
    jobs = [(f, kind) for f in factoids for kind in MutationKind]

    def mutate(job):
        f, kind = job
        return generate_mutations(
            f, inp.query, config.n_variants, kind, backends.mutate, config.temperature, config.seed, gateway, meter
        )

    variants: list[MutatedFactoid] = []
    undersampled: set[int] = set()
    for (f, kind), out in zip(jobs, _run_all(mutate, jobs, parallelism)):
        if isinstance(out, MutationShortfall):
            notes.append(str(out))
            undersampled.add(f.index)
            out = out.obtained
        elif isinstance(out, Exception):
            raise out
        variants.extend(out)

    # phase 2: all verifications
    def check(variant: MutatedFactoid):
        if len(backends.verify) == 1:
            return verify(variant, inp.context, backends.verify[0], gateway, config.seed, meter)
        return ensemble_verify(variant, inp.context, backends.verify, gateway, config.seed, meter)

    checks: dict[int, list[VariantCheck]] = {f.index: [] for f in factoids}
    for variant, verdict in zip(variants, _run_all(check, variants, parallelism)):
        if isinstance(verdict, BackendError):
            notes.append(f"verification of {variant.id} failed: {verdict}")
            undersampled.add(variant.parent_index)
            continue
        if isinstance(verdict, Exception):
            raise verdict
        checks[variant.parent_index].append(VariantCheck(variant, verdict, penalty(verdict, variant.kind)))

    scores = []
    for f in factoids:
        fc = sorted(checks[f.index], key=_check_order)
        if not fc:
            raise BackendError(f"no variant of factoid {f.index} could be verified")
        syn = [c.penalty for c in fc if c.variant.kind is MutationKind.SYNONYM]
        ant = [c.penalty for c in fc if c.variant.kind is MutationKind.ANTONYM]
        scores.append(FactoidScore(f.index, f.text, factoid_score(syn, ant), tuple(fc), f.answer_span, f.index in undersampled))

    h = response_score([s.score for s in scores])
    flagged = classify(h, tau)
    action = decide_action(
        h, tau, topics, scores, max(config.escalation_threshold, tau), rules, config.escalation_mode
    )
    report = DetectionReport(
        input=inp,
        factoids=tuple(scores),
        response_score=h,
        threshold_used=tau,
        flagged=flagged,
        topics=tuple(topics),
        action=action,
        usage=meter.stats,
        latency_ms=(time.perf_counter() - t0) * 1000,
        config_fingerprint=config.fingerprint(),
        fallback_used=fallback_used,
        notes=tuple(notes),
    )
    if audit_sink is not None:
        audit_sink.append(AuditRecord.from_report(report))
    return report


@dataclass(frozen=True)
class DetectionFailure:
    """Stands in a batch result slot when one input could not be scored."""

    index: int
    error_type: str
    message: str
    error: Exception | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "error_type": self.error_type, "message": self.message}


def detect_batch(
    inputs: Sequence[DetectionInput],
    config: RunConfig,
    backends: BackendSet,
    rules: TopicRuleSet | None = None,
    parallelism: int = 1,
    gateway: Gateway | None = None,
    stage_parallelism: int = 8,
    audit_sink: AuditSink | None = None,
) -> list[DetectionReport | DetectionFailure]:
    """Reports in input order; a failing input leaves a DetectionFailure in its slot."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    rules = rules if rules is not None else default_rules()

    def one(pair):
        k, inp = pair
        try:
            return detect(inp, config, backends, rules, gateway, stage_parallelism, audit_sink)
        except DetectorError as exc:
            log.warning("input %d failed: %s", k, exc)
            return DetectionFailure(k, type(exc).__name__, str(exc), exc)

    pairs = list(enumerate(inputs))
    if parallelism == 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, pairs))
