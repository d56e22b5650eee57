"""Step 3: check each mutated factoid against the retrieved context."""

from __future__ import annotations

import logging
import re
from collections import Counter
from typing import Sequence

from . import prompts
from .core import MutatedFactoid, Verdict, VerdictLabel
from .gateway import (
    BackendError,
    BackendSpec,
    CompletionRequest,
    Gateway,
    MemberFailure,
    UsageMeter,
    default_gateway,
)

log = logging.getLogger(__name__)

VERIFY_MAX_TOKENS = 16

_LEAD = re.compile(r"^[\s\"'`*_#>\-:\[\(]+")
_ANSWER = re.compile(r"^(not\s+sure|notsure|unsure|yes|no)\b", re.IGNORECASE)
_LABELS = {"yes": VerdictLabel.YES, "no": VerdictLabel.NO}


def parse_verdict(raw: str) -> Verdict:
    """Read Yes / No / Not sure off the front of a model reply.

    Anything else is NotSure with ``unparseable`` set.
    """
    m = _ANSWER.match(_LEAD.sub("", raw or ""))
    if m is None:
        return Verdict(VerdictLabel.NOT_SURE, raw, unparseable=True)
    word = m.group(1).lower()
    return Verdict(_LABELS.get(word, VerdictLabel.NOT_SURE), raw)


def build_request(claim: str, context: Sequence[str], seed: int | None = None) -> CompletionRequest:
    system, user = prompts.load(prompts.VERIFY).render(context=prompts.render_context(context), claim=claim)
    return CompletionRequest(system, user, temperature=0.0, max_tokens=VERIFY_MAX_TOKENS, seed=seed)


def verify(
    variant: MutatedFactoid,
    context: Sequence[str],
    backend: BackendSpec,
    gateway: Gateway | None = None,
    seed: int | None = None,
    meter: UsageMeter | None = None,
) -> Verdict:
    if not context:
        raise ValueError("context must be non-empty")
    gateway = gateway or default_gateway()
    result = gateway.complete(backend, build_request(variant.text, context, seed))
    if meter is not None:
        meter.record("verify", result)
    return parse_verdict(result.text)


def majority(labels: Sequence[VerdictLabel]) -> VerdictLabel:
    """Strict majority; anything short of it is NotSure."""
    if not labels:
        raise ValueError("no votes")
    label, count = Counter(labels).most_common(1)[0]
    return label if 2 * count > len(labels) else VerdictLabel.NOT_SURE


def ensemble_verify(
    variant: MutatedFactoid,
    context: Sequence[str],
    members: Sequence[BackendSpec],
    gateway: Gateway | None = None,
    seed: int | None = None,
    meter: UsageMeter | None = None,
) -> Verdict:
    if not members:
        raise ValueError("ensemble needs at least one member")
    if not context:
        raise ValueError("context must be non-empty")
    gateway = gateway or default_gateway()
    outcomes = gateway.ensemble_complete(members, build_request(variant.text, context, seed))
    votes, raws, failed = [], [], []
    for outcome in outcomes:
        if isinstance(outcome, MemberFailure):
            failed.append(outcome)
            log.warning("verifier member %s failed: %s", outcome.member_id, outcome.error)
            continue
        if meter is not None:
            meter.record("verify", outcome)
        v = parse_verdict(outcome.text)
        votes.append(v.label)
        raws.append(outcome.text.strip())
    if not votes:
        raise BackendError("every ensemble member failed: " + "; ".join(f"{f.member_id}: {f.error}" for f in failed))
    return Verdict(majority(votes), " | ".join(raws))
