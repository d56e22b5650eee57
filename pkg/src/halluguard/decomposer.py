"""Step 1: split an answer into atomic factoids."""

from __future__ import annotations

import re
from difflib import SequenceMatcher

from . import prompts
from .core import DetectorError, Factoid, RunConfig
from .gateway import BackendSpec, CompletionRequest, Gateway, UsageMeter, default_gateway

DECOMPOSE_MAX_TOKENS = 1024
SPAN_MIN_COVERAGE = 0.6

# "1." "2)" "-" "*" "•" "(a)" and similar list markers
_MARKER = re.compile(r"^\s*(?:(?:\d+[.)]|\(\w\)|[-*–])(?=\s)|[•·])\s*")
_QUOTES = "\"'“”‘’`"


class DecompositionEmpty(DetectorError):
    """The model produced no parseable factoid lines."""


def clean_line(line: str) -> str:
    line = _MARKER.sub("", line.strip(), count=1)
    return line.strip().strip(_QUOTES).strip()


def parse_factoid_lines(raw: str) -> list[str]:
    out = []
    for line in raw.splitlines():
        line = clean_line(line)
        if line:
            out.append(line)
    return out


def align_span(factoid_text: str, answer: str) -> tuple[int, int] | None:
    """Locate a factoid inside the answer.

    Uses the longest case-insensitive common substring; the match must cover
    at least 60% of the factoid to count.
    """
    if not factoid_text or not answer:
        return None
    a, b = factoid_text.lower(), answer.lower()
    m = SequenceMatcher(None, a, b, autojunk=False).find_longest_match(0, len(a), 0, len(b))
    if m.size == 0 or m.size < SPAN_MIN_COVERAGE * len(factoid_text):
        return None
    return (m.b, m.b + m.size)


def build_request(answer: str, template: prompts.PromptTemplate | None = None, seed: int | None = None) -> CompletionRequest:
    template = template or prompts.load(prompts.DECOMPOSE)
    system, user = template.render(answer=answer)
    # temperature is pinned to 0; the ablation temperature only drives mutation
    return CompletionRequest(system, user, temperature=0.0, max_tokens=DECOMPOSE_MAX_TOKENS, seed=seed)


def decompose(
    answer: str,
    backend: BackendSpec,
    config: RunConfig,
    gateway: Gateway | None = None,
    meter: UsageMeter | None = None,
    fallback: bool | None = None,
) -> tuple[list[Factoid], bool]:
    """Return ``(factoids, fallback_used)``.

    With ``fallback`` on (default: ``config.fallback_decomposition``) an
    empty decomposition becomes a single factoid holding the whole answer.
    """
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    gateway = gateway or default_gateway()
    fallback = config.fallback_decomposition if fallback is None else fallback
    result = gateway.complete(backend, build_request(answer, seed=config.seed))
    if meter is not None:
        meter.record("decompose", result)
    lines = parse_factoid_lines(result.text)
    used_fallback = False
    if not lines:
        if not fallback:
            raise DecompositionEmpty(f"no factoid lines in decomposer output {result.text[:80]!r}")
        lines = [" ".join(answer.split())]
        used_fallback = True
    factoids = [Factoid(i, text, align_span(text, answer)) for i, text in enumerate(lines, 1)]
    return factoids, used_fallback
