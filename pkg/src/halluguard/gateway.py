"""Chat-completion gateway.

Every pipeline stage talks to a model through :class:`Gateway`. Three
backends exist:

* :class:`RemoteModel` -- a chat-completion style JSON POST endpoint.
* :class:`ScriptedMock` -- replies looked up by request digest.
* :class:`TripleWorldMock` -- a deterministic world of
  ``subject|predicate|object`` triples that implements decomposition,
  mutation and verification with fixed synonym/antonym tables.

Mocks are pure: the same request always yields the same result.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence, Union
from urllib.parse import urlparse

import httpx

from . import prompts
from .core import STAGES, DetectorError, StageUsage, UsageStats, canonical_json

log = logging.getLogger(__name__)


class BackendError(DetectorError):
    """A model call failed for good."""


class TransportError(BackendError):
    """Network-level failure; retried before surfacing."""


class RateLimited(TransportError):
    pass


class MalformedResponse(BackendError):
    pass


class ScriptMiss(BackendError):
    """ScriptedMock received a request it has no reply for."""


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def digest(self) -> str:
        payload = {
            "system": self.system_prompt,
            "user": self.user_prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }
        return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0
    model_id: str = ""

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class RemoteModel:
    endpoint: str
    model: str
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout_s: float = 60.0

    def __post_init__(self):
        u = urlparse(self.endpoint)
        if u.scheme not in ("http", "https") or not u.netloc:
            raise ValueError(f"not a usable endpoint URL: {self.endpoint!r}")

    @property
    def model_id(self) -> str:
        return self.model


@dataclass(frozen=True)
class ScriptedMock:
    """Replies from a table keyed by :meth:`CompletionRequest.digest`."""

    script: Mapping[str, str] = field(default_factory=dict)
    default: str | None = None
    name: str = "scripted"

    @property
    def model_id(self) -> str:
        return self.name


@dataclass(frozen=True)
class TripleWorldMock:
    synonyms: Mapping[str, Sequence[str]] = field(default_factory=dict)
    antonyms: Mapping[str, Sequence[str]] = field(default_factory=dict)
    name: str = "triple-world"

    @property
    def model_id(self) -> str:
        return self.name

    # -- predicate algebra -------------------------------------------------

    def canonical(self, predicate: str) -> tuple[str, bool]:
        """Map a predicate to ``(base, positive)``.

        Synonyms collapse onto their table key; antonyms of ``p`` (and
        ``not_p``) become ``(p, False)``.
        """
        if predicate.startswith("not_"):
            base, positive = self.canonical(predicate[4:])
            return base, not positive
        if predicate in self.synonyms:
            return predicate, True
        for key, syns in self.synonyms.items():
            if predicate in syns:
                return key, True
        for key, ants in self.antonyms.items():
            if predicate in ants:
                return self.canonical(key)[0], False
        return predicate, True

    def synonym_variant(self, predicate: str, j: int) -> str:
        syns = self.synonyms.get(predicate, ())
        return syns[j - 1] if j <= len(syns) else predicate

    def antonym_variant(self, predicate: str, j: int) -> str:
        ants = self.antonyms.get(predicate, ())
        if not ants:
            return f"not_{predicate}"
        return ants[(j - 1) % len(ants)]

    # -- the three tasks ---------------------------------------------------

    def respond(self, request: CompletionRequest) -> str:
        user = request.user_prompt
        answer = prompts.extract_tag(user, "answer")
        if answer is not None:
            return "\n".join(s.strip() for s in answer.split(".") if s.strip())
        kind = prompts.extract_tag(user, "mutation")
        if kind is not None:
            factoid = (prompts.extract_tag(user, "factoid") or "").strip()
            n = int(prompts.extract_tag(user, "count") or 1)
            triple = parse_triple(factoid)
            if triple is None:
                return "\n".join([factoid] * n)
            s, p, o = triple
            pick = self.synonym_variant if kind.strip() == "synonym" else self.antonym_variant
            return "\n".join(f"{s}|{pick(p, j)}|{o}" for j in range(1, n + 1))
        claim = prompts.extract_tag(user, "claim")
        context = prompts.extract_tag(user, "context")
        if claim is not None and context is not None:
            return self.judge(claim.strip(), prompts.context_chunks(context))
        raise MalformedResponse("triple-world mock cannot identify the task in this request")

    def judge(self, claim: str, chunks: Sequence[str]) -> str:
        triple = parse_triple(claim)
        if triple is None:
            return "Not sure"
        facts = set()
        for chunk in chunks:
            for line in chunk.splitlines():
                t = parse_triple(line)
                if t:
                    facts.add((t[0], *self.canonical(t[1]), t[2]))
        s, p, o = triple
        base, positive = self.canonical(p)
        if (s, base, positive, o) in facts:
            return "Yes"
        if (s, base, not positive, o) in facts:
            return "No"
        return "Not sure"


def parse_triple(text: str) -> tuple[str, str, str] | None:
    parts = [p.strip() for p in text.strip().strip(".").split("|")]
    if len(parts) != 3 or not all(parts):
        return None
    return parts[0], parts[1], parts[2]


BackendSpec = Union[RemoteModel, ScriptedMock, TripleWorldMock]


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay_s: float = 0.25
    jitter: float = 0.5

    def delay(self, attempt: int, rng: random.Random) -> float:
        d = self.base_delay_s * (2**attempt)
        return d * (1 + rng.uniform(-self.jitter, self.jitter))


@dataclass(frozen=True)
class MemberFailure:
    """An ensemble member that failed; sits in the member's result slot."""

    member_id: str
    error: BackendError


def _count_tokens(text: str) -> int:
    return len(text.split())


class Gateway:
    """Thread-safe entry point for model calls.

    Remote calls are bounded by ``max_in_flight`` and retried per
    ``retry``; mock calls are neither bounded nor retried.
    """

    def __init__(
        self,
        max_in_flight: int = 8,
        retry: RetryPolicy = RetryPolicy(),
        http_client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self.retry = retry
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = http_client
        self._client_lock = threading.Lock()
        self._sleep = sleep
        self._rng = random.Random()

    @property
    def client(self) -> httpx.Client:
        with self._client_lock:
            if self._client is None:
                self._client = httpx.Client()
            return self._client

    def complete(self, backend: BackendSpec, request: CompletionRequest) -> CompletionResult:
        if isinstance(backend, TripleWorldMock):
            return self._mock_result(backend, request, backend.respond(request))
        if isinstance(backend, ScriptedMock):
            text = backend.script.get(request.digest(), backend.default)
            if text is None:
                raise ScriptMiss(f"{backend.name}: no scripted reply for request {request.digest()[:12]}")
            return self._mock_result(backend, request, text)
        if isinstance(backend, RemoteModel):
            return self._remote(backend, request)
        raise TypeError(f"unsupported backend {type(backend).__name__}")

    @staticmethod
    def _mock_result(backend, request: CompletionRequest, text: str) -> CompletionResult:
        return CompletionResult(
            text=text,
            prompt_tokens=_count_tokens(request.system_prompt) + _count_tokens(request.user_prompt),
            completion_tokens=_count_tokens(text),
            latency_ms=0.0,
            model_id=backend.model_id,
        )

    def _remote(self, backend: RemoteModel, request: CompletionRequest) -> CompletionResult:
        last: TransportError | None = None
        for attempt in range(self.retry.attempts):
            if attempt:
                wait = self.retry.delay(attempt - 1, self._rng)
                log.warning("retrying %s in %.2fs (attempt %d): %s", backend.model, wait, attempt + 1, last)
                self._sleep(wait)
            try:
                with self._slots:
                    return self._post(backend, request)
            except TransportError as exc:
                last = exc
        raise last

    def _post(self, backend: RemoteModel, request: CompletionRequest) -> CompletionResult:
        payload = {
            "model": backend.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {}
        key = os.environ.get(backend.api_key_env) if backend.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        t0 = time.perf_counter()
        try:
            resp = self.client.post(backend.endpoint, json=payload, headers=headers, timeout=backend.timeout_s)
        except httpx.TransportError as exc:
            raise TransportError(f"{backend.endpoint}: {exc}") from exc
        latency = (time.perf_counter() - t0) * 1000
        if resp.status_code == 429:
            raise RateLimited(f"{backend.model}: rate limited")
        if resp.status_code >= 500:
            raise TransportError(f"{backend.model}: server error {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"{backend.model}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage") or {}
            if not isinstance(text, str):
                raise TypeError("content is not text")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"{backend.model}: unexpected response shape ({exc})") from exc
        return CompletionResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=latency,
            model_id=body.get("model", backend.model),
        )

    def ensemble_complete(
        self, members: Sequence[BackendSpec], request: CompletionRequest, concurrent: bool = True
    ) -> list[CompletionResult | MemberFailure]:
        """One slot per member, in member order; failures are returned, not raised."""
        if not members:
            raise ValueError("ensemble needs at least one member")

        def call(member):
            try:
                return self.complete(member, request)
            except BackendError as exc:
                return MemberFailure(member.model_id, exc)

        if not concurrent or len(members) == 1:
            return [call(m) for m in members]
        with ThreadPoolExecutor(max_workers=len(members)) as pool:
            return list(pool.map(call, members))

    def close(self):
        if self._client is not None:
            self._client.close()


_default_gateway: Gateway | None = None
_default_lock = threading.Lock()


def default_gateway() -> Gateway:
    global _default_gateway
    with _default_lock:
        if _default_gateway is None:
            _default_gateway = Gateway()
        return _default_gateway


def complete(backend: BackendSpec, request: CompletionRequest) -> CompletionResult:
    return default_gateway().complete(backend, request)


def ensemble_complete(members: Sequence[BackendSpec], request: CompletionRequest) -> list:
    return default_gateway().ensemble_complete(members, request)


def record_usage(stats: UsageStats, stage: str, result: CompletionResult) -> UsageStats:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    inc = StageUsage(1, result.prompt_tokens, result.completion_tokens)
    return replace(stats, **{stage: stats.stage(stage) + inc})


class UsageMeter:
    """Lock-protected accumulator for results arriving from worker threads."""

    def __init__(self):
        self._stats = UsageStats()
        self._lock = threading.Lock()

    def record(self, stage: str, result: CompletionResult) -> None:
        with self._lock:
            self._stats = record_usage(self._stats, stage, result)

    @property
    def stats(self) -> UsageStats:
        with self._lock:
            return self._stats


def backend_from_dict(d: Mapping) -> BackendSpec:
    """Build a backend from its config-file form (``{"type": ..., ...}``)."""
    d = dict(d)
    kind = d.pop("type")
    if kind == "remote":
        return RemoteModel(**d)
    if kind == "scripted":
        return ScriptedMock(script=dict(d.get("script", {})), default=d.get("default"), name=d.get("name", "scripted"))
    if kind == "triple_world":
        return TripleWorldMock(
            synonyms={k: tuple(v) for k, v in d.get("synonyms", {}).items()},
            antonyms={k: tuple(v) for k, v in d.get("antonyms", {}).items()},
            name=d.get("name", "triple-world"),
        )
    raise ValueError(f"unknown backend type {kind!r}")


def backend_to_dict(b: BackendSpec) -> dict:
    if isinstance(b, RemoteModel):
        return {"type": "remote", "endpoint": b.endpoint, "model": b.model, "api_key_env": b.api_key_env, "timeout_s": b.timeout_s}
    if isinstance(b, ScriptedMock):
        return {"type": "scripted", "script": dict(b.script), "default": b.default, "name": b.name}
    return {
        "type": "triple_world",
        "synonyms": {k: list(v) for k, v in b.synonyms.items()},
        "antonyms": {k: list(v) for k, v in b.antonyms.items()},
        "name": b.name,
    }
