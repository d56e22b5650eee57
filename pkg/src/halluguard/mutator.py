"""Step 2: synonym and antonym variants of each factoid."""

from __future__ import annotations

from . import prompts
from .core import DetectorError, Factoid, MutatedFactoid, MutationKind
from .decomposer import parse_factoid_lines
from .gateway import BackendSpec, CompletionRequest, Gateway, UsageMeter, default_gateway

MUTATE_MAX_TOKENS = 1024

_TEMPLATES = {
    MutationKind.SYNONYM: prompts.MUTATE_SYNONYM,
    MutationKind.ANTONYM: prompts.MUTATE_ANTONYM,
}


class MutationShortfall(DetectorError):
    """Fewer variants than requested came back, even after a retry."""

    def __init__(self, factoid_index: int, kind: MutationKind, wanted: int, obtained: list[MutatedFactoid]):
        super().__init__(f"factoid {factoid_index} {kind.value}: wanted {wanted}, got {len(obtained)}")
        self.factoid_index = factoid_index
        self.kind = kind
        self.wanted = wanted
        self.obtained = obtained


def parse_mutation_lines(raw: str, expected: int) -> list[str]:
    if expected < 1:
        raise ValueError("expected must be >= 1")
    return parse_factoid_lines(raw)[:expected]


def build_request(factoid_text: str, query: str, n: int, kind: MutationKind, temperature: float, seed: int | None) -> CompletionRequest:
    system, user = prompts.load(_TEMPLATES[kind]).render(factoid=factoid_text, query=query or "(none)", n=n)
    return CompletionRequest(system, user, temperature=temperature, max_tokens=MUTATE_MAX_TOKENS, seed=seed)


def generate_mutations(
    factoid: Factoid,
    query: str,
    n: int,
    kind: MutationKind,
    backend: BackendSpec,
    temperature: float = 0.0,
    seed: int | None = None,
    gateway: Gateway | None = None,
    meter: UsageMeter | None = None,
) -> list[MutatedFactoid]:
    if n < 1:
        raise ValueError("n must be >= 1")
    gateway = gateway or default_gateway()
    request = build_request(factoid.text, query, n, kind, temperature, seed)
    best: list[str] = []
    for _ in range(2):  # one retry on shortfall
        result = gateway.complete(backend, request)
        if meter is not None:
            meter.record("mutate", result)
        lines = parse_mutation_lines(result.text, n)
        if len(lines) > len(best):
            best = lines
        if len(best) == n:
            break
    # duplicates are kept on purpose: the score averages over every slot
    variants = [MutatedFactoid(factoid.index, j, kind, text) for j, text in enumerate(best, 1)]
    if len(variants) < n:
        raise MutationShortfall(factoid.index, kind, n, variants)
    return variants
