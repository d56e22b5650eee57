"""HTTP service.

``POST /v1/detect`` takes ``{query, context: [...], answer, config_overrides?}``
and returns the detection report JSON. ``GET /health`` reports version and
backend reachability. Only N, temperature and the thresholds may be
overridden per request; backend URLs never are.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import replace
from urllib.parse import urlparse

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from . import __version__
from .core import SCHEMA_VERSION, ConfigError, DetectionInput, InputError, validate_input
from .decomposer import DecompositionEmpty
from .gateway import BackendError, Gateway, RemoteModel
from .pipeline import ModelRegistry, detect
from .policy import AuditSink, TopicRuleSet, default_rules

OVERRIDABLE = ("n_variants", "temperature", "threshold_general", "threshold_identity")


def _error(status: int, code: str, message: str, field: str | None = None) -> JSONResponse:
    body = {"error": code, "message": message}
    if field is not None:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def _reachable(backend, timeout: float = 0.5) -> bool:
    if not isinstance(backend, RemoteModel):
        return True
    u = urlparse(backend.endpoint)
    port = u.port or (443 if u.scheme == "https" else 80)
    try:
        with socket.create_connection((u.hostname, port), timeout=timeout):
            return True
    except OSError:
        return False


def parse_body(body) -> tuple[DetectionInput, dict]:
    if not isinstance(body, dict):
        raise InputError("body", "request body must be a JSON object")
    query = body.get("query", "")
    context = body.get("context")
    answer = body.get("answer", "")
    if not isinstance(query, str):
        raise InputError("query", "query must be text")
    if context is None:
        context = []
    if not isinstance(context, list) or not all(isinstance(c, str) for c in context):
        raise InputError("context", "context must be a list of strings")
    if not isinstance(answer, str):
        raise InputError("answer", "answer must be text")
    overrides = body.get("config_overrides") or {}
    if not isinstance(overrides, dict):
        raise InputError("config_overrides", "config_overrides must be an object")
    bad = sorted(set(overrides) - set(OVERRIDABLE))
    if bad:
        raise InputError("config_overrides", f"not overridable: {bad}; allowed: {list(OVERRIDABLE)}")
    return DetectionInput(query, tuple(context), answer), overrides


def create_app(
    config,
    registry: ModelRegistry,
    rules: TopicRuleSet | None = None,
    audit_sink: AuditSink | None = None,
    max_concurrent: int = 16,
    token: str | None = None,
    gateway: Gateway | None = None,
    parallelism: int = 8,
) -> FastAPI:
    rules = rules if rules is not None else default_rules()
    gateway = gateway or Gateway()
    backends = registry.resolve(config)
    capacity = threading.BoundedSemaphore(max_concurrent)
    app = FastAPI(title="halluguard", version=__version__)

    @app.get("/health")
    async def health():
        def probe():
            seen = {}
            for model_id in {config.decomposition_model, config.generation_model, *config.verifier_members}:
                seen[model_id] = _reachable(registry.backend(model_id))
            return dict(sorted(seen.items()))

        return {"status": "ok", "version": __version__, "schema_version": SCHEMA_VERSION, "backends": await run_in_threadpool(probe)}

    @app.post("/v1/detect")
    async def detect_endpoint(request: Request):
        if token is not None and request.headers.get("authorization") != f"Bearer {token}":
            return _error(401, "Unauthorized", "missing or wrong bearer token")
        try:
            body = json.loads(await request.body() or b"null")
        except json.JSONDecodeError:
            return _error(400, "InvalidJSON", "request body is not valid JSON")
        try:
            inp, overrides = parse_body(body)
            validate_input(inp)
            run_config = replace(config, **overrides) if overrides else config
        except InputError as exc:
            return _error(400, exc.code, str(exc), exc.field)
        except (ConfigError, TypeError) as exc:
            return _error(400, "BadConfigOverride", str(exc), "config_overrides")
        if not capacity.acquire(blocking=False):
            return _error(503, "OverCapacity", "too many requests in flight")
        try:
            report = await run_in_threadpool(detect, inp, run_config, backends, rules, gateway, parallelism, audit_sink)
        except (BackendError, DecompositionEmpty) as exc:
            return _error(502, type(exc).__name__, str(exc))
        finally:
            capacity.release()
        return JSONResponse(content=report.to_dict())

    return app
