import json
import random
import threading

import httpx
import pytest

from halluguard import prompts
from halluguard.core import UsageStats
from halluguard.decomposer import build_request as decomposition_request
from halluguard.gateway import (
    BackendError,
    CompletionRequest,
    CompletionResult,
    Gateway,
    MalformedResponse,
    MemberFailure,
    RateLimited,
    RemoteModel,
    RetryPolicy,
    ScriptedMock,
    ScriptMiss,
    TransportError,
    backend_from_dict,
    backend_to_dict,
    record_usage,
)
from halluguard.verifier import build_request as verification_request


def req(text="hello", seed=None):
    return CompletionRequest("sys", text, seed=seed)


def test_triple_world_decomposition(world, fast_gateway):
    r = fast_gateway.complete(world, decomposition_request("paris|capital_of|france."))
    assert r.text == "paris|capital_of|france"
    assert r.prompt_tokens > 0 and r.completion_tokens == 1


def test_scripted_mock_lookup(fast_gateway):
    r = req("is it?")
    mock = ScriptedMock({r.digest(): "Yes"})
    assert fast_gateway.complete(mock, r).text == "Yes"
    with pytest.raises(ScriptMiss):
        fast_gateway.complete(mock, req("something else"))


def test_digest_depends_on_seed():
    assert req(seed=1).digest() != req(seed=2).digest()
    assert req(seed=1).digest() == req(seed=1).digest()


def test_mock_determinism(world, fast_gateway):
    request = verification_request("a|p1|b", ["a|p|b"], seed=3)
    texts = {fast_gateway.complete(world, request).text for _ in range(100)}
    assert texts == {"Yes"}


def test_unreachable_endpoint_raises_after_retries():
    sleeps = []
    gw = Gateway(retry=RetryPolicy(attempts=3, base_delay_s=0.25), sleep=sleeps.append)
    backend = RemoteModel("http://127.0.0.1:9/v1/chat/completions", "m", api_key_env=None, timeout_s=0.5)
    with pytest.raises(TransportError):
        gw.complete(backend, req())
    assert len(sleeps) == 2
    # exponential backoff from 250 ms with +-50% jitter
    assert 0.125 <= sleeps[0] <= 0.375 and 0.25 <= sleeps[1] <= 0.75


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_wire_format(monkeypatch):
    seen = {}

    def handler(request: httpx.Request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(
            200,
            json={"model": "m", "choices": [{"message": {"content": "Not sure"}}], "usage": {"prompt_tokens": 12, "completion_tokens": 2}},
        )

    monkeypatch.setenv("TEST_KEY", "sk-test")
    gw = Gateway(http_client=_client(handler))
    out = gw.complete(RemoteModel("https://llm.example/v1/chat/completions", "m", "TEST_KEY"), CompletionRequest("S", "U", 0.7, 16, 5))
    assert out.text == "Not sure" and out.prompt_tokens == 12 and out.completion_tokens == 2
    body = seen["body"]
    assert body["messages"] == [{"role": "system", "content": "S"}, {"role": "user", "content": "U"}]
    assert body["temperature"] == 0.7 and body["seed"] == 5 and body["max_tokens"] == 16
    assert seen["auth"] == "Bearer sk-test"


def test_rate_limit_is_retried_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(429)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Yes"}}]})

    gw = Gateway(http_client=_client(handler), sleep=lambda s: None)
    out = gw.complete(RemoteModel("https://x.example/v1", "m", None), req())
    assert out.text == "Yes" and len(calls) == 3


def test_rate_limit_exhausts_budget():
    gw = Gateway(http_client=_client(lambda r: httpx.Response(429)), sleep=lambda s: None)
    with pytest.raises(RateLimited):
        gw.complete(RemoteModel("https://x.example/v1", "m", None), req())


def test_malformed_response_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(200, json={"nope": True})

    gw = Gateway(http_client=_client(handler), sleep=lambda s: None)
    with pytest.raises(MalformedResponse):
        gw.complete(RemoteModel("https://x.example/v1", "m", None), req())
    assert len(calls) == 1


def test_in_flight_bound():
    active, peak = [0], [0]
    lock = threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        threading.Event().wait(0.01)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "Yes"}}]})

    gw = Gateway(max_in_flight=2, http_client=_client(handler))
    backend = RemoteModel("https://x.example/v1", "m", None)
    threads = [threading.Thread(target=gw.complete, args=(backend, req(str(k)))) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert 1 <= peak[0] <= 2


def test_remote_model_rejects_bad_url():
    with pytest.raises(ValueError):
        RemoteModel("not a url", "m")


def test_ensemble_preserves_member_order(fast_gateway):
    members = [ScriptedMock(default=f"Yes {k}", name=f"m{k}") for k in range(4)]
    out = fast_gateway.ensemble_complete(members, req())
    assert [r.text for r in out] == ["Yes 0", "Yes 1", "Yes 2", "Yes 3"]
    seq = fast_gateway.ensemble_complete(members, req(), concurrent=False)
    assert [r.text for r in seq] == [r.text for r in out]


def test_ensemble_singleton(fast_gateway):
    out = fast_gateway.ensemble_complete([ScriptedMock(default="No")], req())
    assert len(out) == 1 and out[0].text == "No"


def test_ensemble_partial_failure(fast_gateway):
    members = [ScriptedMock(default="Yes", name="ok"), ScriptedMock(name="broken")]
    out = fast_gateway.ensemble_complete(members, req())
    assert out[0].text == "Yes"
    assert isinstance(out[1], MemberFailure) and out[1].member_id == "broken"
    assert isinstance(out[1].error, BackendError)


def test_record_usage_examples():
    r = CompletionResult("x", 10, 5)
    s = record_usage(UsageStats(), "verify", r)
    assert (s.verify.calls, s.verify.prompt_tokens, s.verify.completion_tokens) == (1, 10, 5)
    assert (s.totals.calls, s.totals.prompt_tokens, s.totals.completion_tokens) == (1, 10, 5)
    s2 = record_usage(s, "verify", r)
    assert s2.verify.calls == 2 and s2.totals.prompt_tokens == 20
    s3 = record_usage(UsageStats(), "mutate", CompletionResult("", 0, 0))
    assert s3.mutate.calls == 1 and s3.totals.total_tokens == 0
    with pytest.raises(ValueError):
        record_usage(UsageStats(), "retrieve", r)


def test_usage_fold_is_order_independent():
    rng = random.Random(0)
    events = [(rng.choice(["decompose", "mutate", "verify"]), CompletionResult("x", rng.randint(0, 50), rng.randint(0, 9))) for _ in range(40)]
    totals = set()
    for _ in range(10):
        rng.shuffle(events)
        s = UsageStats()
        for stage, r in events:
            s = record_usage(s, stage, r)
        totals.add(s)
    assert len(totals) == 1


def test_backend_config_round_trip(world):
    assert backend_from_dict(backend_to_dict(world)) == world
    remote = RemoteModel("https://x.example/v1", "m")
    assert backend_from_dict(backend_to_dict(remote)) == remote


class TestTripleWorldRules:
    def test_canonical_forms(self, small_world):
        assert small_world.canonical("p2") == ("p", True)
        assert small_world.canonical("np1") == ("p", False)
        assert small_world.canonical("not_p1") == ("p", False)
        assert small_world.canonical("zzz") == ("zzz", True)

    def test_short_tables(self, small_world):
        assert small_world.synonym_variant("p", 3) == "p"
        assert small_world.antonym_variant("p", 3) == "np1"
        assert small_world.antonym_variant("q", 1) == "not_q"

    def test_judge(self, small_world):
        assert small_world.judge("a|p1|b", ["a|p|b"]) == "Yes"
        assert small_world.judge("a|np2|b", ["a|p|b"]) == "No"
        assert small_world.judge("x|p|y", ["a|p|b"]) == "Not sure"
        assert small_world.judge("plain prose", ["a|p|b"]) == "Not sure"

    def test_unknown_task(self, small_world):
        with pytest.raises(MalformedResponse):
            small_world.respond(req("no tags at all"))

    def test_context_rendering_round_trip(self):
        chunks = ["a|p|b\nc|q|d", "e|r|f"]
        assert prompts.context_chunks(prompts.render_context(chunks)) == chunks
