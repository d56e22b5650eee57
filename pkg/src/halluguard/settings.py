"""Run-file loading shared by the CLI and the service.

A run file is JSON::

    {
      "config_string": "mini/41/multi/2/0",     # or "run": {RunConfig fields}
      "run": {"seed": 3, "threshold_general": 0.5},
      "aliases": {"mini": "gpt-4.1-mini", ...},  # optional, replaces defaults
      "models": {"gpt-4.1-mini": {"type": "remote", "endpoint": "...", "model": "gpt-4.1-mini"}},
      "endpoint": "https://.../chat/completions" # optional fallback for unlisted models
    }

Anything that is not an existing file is read as a bare config string.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .core import ConfigError, RunConfig
from .evaluation import default_aliases, parse_config_string
from .pipeline import DEFAULT_ENDPOINT, ModelRegistry


@dataclass
class Settings:
    config: RunConfig
    registry: ModelRegistry
    aliases: dict


def _registry(doc: dict) -> ModelRegistry:
    endpoint = doc.get("endpoint")
    models = doc.get("models") or {}
    if endpoint is None and not models:
        endpoint = os.environ.get("HALLUGUARD_ENDPOINT", DEFAULT_ENDPOINT)
    return ModelRegistry.from_dict(models, endpoint)


def load_models(path: str | Path | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_settings(config_arg: str, models_path: str | Path | None = None) -> Settings:
    p = Path(config_arg)
    doc = json.loads(p.read_text(encoding="utf-8")) if p.is_file() else {"config_string": config_arg}
    extra = load_models(models_path)
    for key in ("models", "aliases", "endpoint"):
        if key in extra and key not in doc:
            doc[key] = extra[key]
    aliases = doc.get("aliases") or default_aliases()
    run = dict(doc.get("run") or {})
    if "config_string" in doc:
        five = {"decomposition_model", "generation_model", "verifier", "n_variants", "temperature"}
        clash = five & set(run)
        if clash:
            raise ConfigError(f"fields {sorted(clash)} are set by config_string; drop them from 'run'")
        config = parse_config_string(doc["config_string"], aliases, **run)
    elif run:
        config = RunConfig.from_dict(run)
    else:
        raise ConfigError(f"{config_arg}: run file needs 'config_string' or 'run'")
    return Settings(config, _registry(doc), aliases)
