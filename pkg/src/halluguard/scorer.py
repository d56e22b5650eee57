"""Step 4: penalties, factoid scores, the response score and the flag."""

from __future__ import annotations

from typing import Sequence

from .core import DetectorError, MutationKind, Penalty, VerdictLabel

PENALTY_TABLE: dict[tuple[VerdictLabel, MutationKind], Penalty] = {
    (VerdictLabel.YES, MutationKind.SYNONYM): Penalty.NONE,
    (VerdictLabel.NOT_SURE, MutationKind.SYNONYM): Penalty.HALF,
    (VerdictLabel.NO, MutationKind.SYNONYM): Penalty.FULL,
    (VerdictLabel.YES, MutationKind.ANTONYM): Penalty.FULL,
    (VerdictLabel.NOT_SURE, MutationKind.ANTONYM): Penalty.HALF,
    (VerdictLabel.NO, MutationKind.ANTONYM): Penalty.NONE,
}


class NoPenalties(DetectorError):
    pass


class NoFactoids(DetectorError):
    pass


def penalty(verdict, kind: MutationKind) -> Penalty:
    """Synonyms should be entailed and antonyms contradicted; deviation costs."""
    label = getattr(verdict, "label", verdict)
    return PENALTY_TABLE[(VerdictLabel(label), MutationKind(kind))]


def factoid_score(syn_penalties: Sequence[float], ant_penalties: Sequence[float]) -> float:
    """Mean penalty over every variant that was actually checked.

    With a full sample this is the sum over 2N variants divided by 2N; on a
    shortfall the denominator is the number obtained.
    """
    n = len(syn_penalties) + len(ant_penalties)
    if n == 0:
        raise NoPenalties("a factoid needs at least one verified variant")
    return (sum(float(p) for p in syn_penalties) + sum(float(p) for p in ant_penalties)) / n


def response_score(factoid_scores: Sequence[float]) -> float:
    if len(factoid_scores) == 0:
        raise NoFactoids("cannot score a response without factoids")
    return max(factoid_scores)


def classify(h: float, tau: float) -> bool:
    # equality flags
    return h >= tau
