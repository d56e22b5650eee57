"""Evaluation harness: labelled datasets, binary metrics, seed consistency,
Pareto fronts and the five-field configuration strings.

Dataset format is JSONL, one record per line::

    {"id": "r1", "query": "...", "context": ["chunk", ...], "answer": "...",
     "label": true, "topics": ["optional"]}

``label`` is true when the answer is hallucinated (the positive class).
"""

from __future__ import annotations

import json
import statistics
import warnings
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import ConfigError, DetectionInput, DetectorError, Ensemble, RunConfig
from .pipeline import BackendSet, DetectionFailure, detect_batch
from .policy import TopicRuleSet


class FileMissing(DetectorError, FileNotFoundError):
    pass


class SchemaError(DetectorError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TooFewSeeds(DetectorError, ValueError):
    pass


class UnknownMetricKey(DetectorError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown metric key"


class BadConfigString(ConfigError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class EvalRecord:
    id: str
    query: str
    context: tuple[str, ...]
    answer: str
    label: bool
    topics: tuple[str, ...] | None = None

    def to_input(self) -> DetectionInput:
        return DetectionInput(self.query, self.context, self.answer)

    def to_dict(self) -> dict:
        d = {"id": self.id, "query": self.query, "context": list(self.context), "answer": self.answer, "label": self.label}
        if self.topics is not None:
            d["topics"] = list(self.topics)
        return d


def _record_from_dict(d: dict, line: int) -> EvalRecord:
    if not isinstance(d, dict):
        raise SchemaError(line, "record must be a JSON object")
    for key in ("id", "query", "context", "answer", "label"):
        if key not in d:
            raise SchemaError(line, f"missing field {key!r}")
    if not isinstance(d["label"], bool):
        raise SchemaError(line, "label must be true or false")
    ctx = d["context"]
    if not isinstance(ctx, list) or not ctx or not all(isinstance(c, str) and c.strip() for c in ctx):
        raise SchemaError(line, "context must be a non-empty list of non-empty strings")
    if not isinstance(d["answer"], str) or not d["answer"].strip():
        raise SchemaError(line, "answer must be non-empty text")
    topics = d.get("topics")
    return EvalRecord(str(d["id"]), str(d["query"]), tuple(ctx), d["answer"], d["label"], tuple(topics) if topics is not None else None)


def load_dataset(path: str | Path) -> list[EvalRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"dataset not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(n, f"invalid JSON ({exc.msg})") from exc
            records.append(_record_from_dict(d, n))
    if not records:
        warnings.warn(f"dataset {path} is empty", stacklevel=2)
    return records


def save_dataset(records: Sequence[EvalRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class MetricsSummary:
    precision: float
    recall: float
    f1: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    mean_latency_ms: float = 0.0
    mean_total_tokens: float = 0.0
    excluded: tuple[str, ...] = ()
    annotations: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["excluded"] = list(self.excluded)
        d["annotations"] = list(self.annotations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsSummary":
        d = dict(d)
        d["excluded"] = tuple(d.get("excluded", ()))
        d["annotations"] = tuple(d.get("annotations", ()))
        return cls(**d)


def confusion_metrics(predicted: Sequence[bool], actual: Sequence[bool], **extra) -> MetricsSummary:
    """Binary metrics with hallucinated as the positive class.

    Undefined precision or recall is reported as 0 and named in
    ``annotations``.
    """
    if len(predicted) != len(actual):
        raise ValueError("predicted and actual differ in length")
    tp = sum(p and a for p, a in zip(predicted, actual))
    fp = sum(p and not a for p, a in zip(predicted, actual))
    tn = sum(not p and not a for p, a in zip(predicted, actual))
    fn = sum(not p and a for p, a in zip(predicted, actual))
    notes = list(extra.pop("annotations", ()))
    if tp + fp == 0:
        precision = 0.0
        notes.append("precision undefined (no predicted positives); reported as 0")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        notes.append("recall undefined (no actual positives); reported as 0")
    else:
        recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    return MetricsSummary(precision, recall, f1, accuracy, tp, fp, tn, fn, annotations=tuple(notes), **extra)


def evaluate(
    records: Sequence[EvalRecord],
    config: RunConfig,
    backends: BackendSet,
    rules: TopicRuleSet | None = None,
    parallelism: int = 1,
    gateway=None,
    stage_parallelism: int = 8,
) -> MetricsSummary:
    """Run detection over labelled records and score the flags against labels.

    Passing an empty ``TopicRuleSet`` applies ``threshold_general`` to every
    record, which is the fixed-threshold protocol.
    """
    if not records:
        raise ValueError("records must be non-empty")
    rules = rules if rules is not None else TopicRuleSet()
    outcomes = detect_batch(
        [r.to_input() for r in records], config, backends, rules, parallelism, gateway, stage_parallelism
    )
    predicted, actual, latencies, tokens, excluded = [], [], [], [], []
    for rec, out in zip(records, outcomes):
        if isinstance(out, DetectionFailure):
            excluded.append(rec.id)
            continue
        predicted.append(out.flagged)
        actual.append(rec.label)
        latencies.append(out.latency_ms)
        tokens.append(out.usage.totals.total_tokens)
    notes = [f"{len(excluded)} record(s) excluded after detection errors"] if excluded else []
    return confusion_metrics(
        predicted,
        actual,
        mean_latency_ms=float(np.mean(latencies)) if latencies else 0.0,
        mean_total_tokens=float(np.mean(tokens)) if tokens else 0.0,
        excluded=tuple(excluded),
        annotations=notes,
    )


CONSISTENCY_METRICS = ("precision", "recall", "f1", "accuracy", "mean_latency_ms", "mean_total_tokens")


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float
    cv: float | None

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "cv": self.cv}


@dataclass(frozen=True)
class ConsistencyReport:
    seeds: tuple[int, ...]
    metrics: Mapping[str, MetricStat]

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "metrics": {k: v.to_dict() for k, v in self.metrics.items()}}


def coefficient_of_variation(mean: float, std: float) -> float | None:
    if mean > 0:
        return std / mean
    return 0.0 if std == 0 else None


def consistency(summaries: Sequence[MetricsSummary], seeds: Sequence[int] | None = None) -> ConsistencyReport:
    """Mean, sample standard deviation and CV of each metric across seeds."""
    if len(summaries) < 2:
        raise TooFewSeeds(f"need at least 2 runs, got {len(summaries)}")
    seeds = tuple(seeds) if seeds is not None else tuple(range(len(summaries)))
    if len(seeds) != len(summaries):
        raise ValueError("one seed per summary")
    stats = {}
    for name in CONSISTENCY_METRICS:
        # statistics works in exact rational arithmetic, so identical runs
        # give a standard deviation of exactly zero.
        values = [float(getattr(s, name)) for s in summaries]
        mean = float(statistics.mean(values))
        std = float(statistics.stdev(values))
        stats[name] = MetricStat(mean, std, coefficient_of_variation(mean, std))
    return ConsistencyReport(seeds, stats)


# -- configuration strings -------------------------------------------------

CONFIG_FIELDS = ("decomposition_model", "generation_model", "verifier", "n_variants", "temperature")


def default_aliases() -> dict:
    return json.loads(resources.files("halluguard").joinpath("data/aliases.json").read_text(encoding="utf-8"))


def _resolve_model(token: str, field_name: str, aliases: Mapping) -> str | Ensemble:
    if not token:
        raise BadConfigString(field_name, "empty field")
    if "+" in token:
        members = []
        for part in token.split("+"):
            m = _resolve_model(part, field_name, aliases)
            if isinstance(m, Ensemble):
                raise BadConfigString(field_name, "nested ensembles are not allowed")
            members.append(m)
        target = Ensemble(tuple(members))
    else:
        target = aliases.get(token, token)
        if isinstance(target, list):
            target = Ensemble(tuple(target))
    if isinstance(target, Ensemble) and field_name != "verifier":
        raise BadConfigString(field_name, "only the verifier may be an ensemble")
    return target


def parse_config_string(s: str, aliases: Mapping | None = None, **base) -> RunConfig:
    """Parse ``decomp/generation/verifier/N/temperature``.

    Tokens are looked up in the alias map and used verbatim when absent; a
    ``+``-joined verifier token is an ensemble. ``base`` fills the remaining
    RunConfig fields.
    """
    aliases = default_aliases() if aliases is None else aliases
    parts = s.strip().split("/")
    if len(parts) != 5:
        raise BadConfigString("format", f"expected 5 slash-separated fields, got {len(parts)}")
    decomp, gen, ver, n_raw, t_raw = (p.strip() for p in parts)
    if not n_raw.isdigit() or int(n_raw) < 1:
        raise BadConfigString("n_variants", f"N must be an integer >= 1, got {n_raw!r}")
    try:
        temperature = float(t_raw)
    except ValueError:
        raise BadConfigString("temperature", f"not a number: {t_raw!r}") from None
    if not 0.0 <= temperature <= 2.0:
        raise BadConfigString("temperature", f"must be in [0, 2], got {temperature}")
    return RunConfig(
        decomposition_model=_resolve_model(decomp, "decomposition_model", aliases),
        generation_model=_resolve_model(gen, "generation_model", aliases),
        verifier=_resolve_model(ver, "verifier", aliases),
        n_variants=int(n_raw),
        temperature=temperature,
        **base,
    )


def _alias_for(target, aliases: Mapping) -> str:
    for alias, value in aliases.items():
        if isinstance(target, Ensemble) and isinstance(value, list) and tuple(value) == target.members:
            return alias
        if isinstance(target, str) and value == target:
            return alias
    if isinstance(target, Ensemble):
        return "+".join(_alias_for(m, aliases) for m in target.members)
    return target


def format_config_string(config: RunConfig, aliases: Mapping | None = None) -> str:
    aliases = default_aliases() if aliases is None else aliases
    return "/".join(
        [
            _alias_for(config.decomposition_model, aliases),
            _alias_for(config.generation_model, aliases),
            _alias_for(config.verifier, aliases),
            str(config.n_variants),
            format(config.temperature, "g"),
        ]
    )


@dataclass(frozen=True)
class GridEntry:
    id: str
    config: str
    source: str = "custom"


def load_grid(name_or_path: str | Path) -> list[GridEntry]:
    """A grid preset by name (``paper26``) or a JSON file of ``{id, config}`` rows."""
    p = Path(name_or_path)
    if p.is_file():
        rows = json.loads(p.read_text(encoding="utf-8"))
    else:
        try:
            text = resources.files("halluguard").joinpath(f"data/grid_{name_or_path}.json").read_text(encoding="utf-8")
        except FileNotFoundError:
            raise FileMissing(f"no grid file or preset named {name_or_path!r}") from None
        rows = json.loads(text)
    entries = [GridEntry(str(r["id"]), r["config"], r.get("source", "custom")) for r in rows]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ConfigError("grid config ids must be unique")
    return entries


# -- results and Pareto fronts ---------------------------------------------


@dataclass(frozen=True)
class ConfigResult:
    config_id: str
    config: RunConfig
    metrics: MetricsSummary
    config_string: str | None = None

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "config": self.config.to_dict(),
            "config_string": self.config_string,
            "metrics": self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigResult":
        return cls(d["config_id"], RunConfig.from_dict(d["config"]), MetricsSummary.from_dict(d["metrics"]), d.get("config_string"))


METRIC_ALIASES = {"tokens": "mean_total_tokens", "latency": "mean_latency_ms"}
_NUMERIC = {f.name for f in fields(MetricsSummary) if f.name not in ("excluded", "annotations")}


def metric_value(result: ConfigResult, key: str) -> float:
    name = METRIC_ALIASES.get(key, key)
    if name not in _NUMERIC:
        raise UnknownMetricKey(f"unknown metric key {key!r}; choose from {sorted(_NUMERIC | set(METRIC_ALIASES))}")
    return float(getattr(result.metrics, name))


def pareto_front(results: Sequence[ConfigResult], objective: str = "f1", cost: str = "tokens") -> list[ConfigResult]:
    """Configurations that no other beats on the objective at equal or lower cost.

    ``r`` is dropped iff some ``r'`` has ``objective(r') > objective(r)`` and
    ``cost(r') <= cost(r)``. Output is ordered by cost ascending.
    """
    if not results:
        raise ValueError("results must be non-empty")
    obj = np.array([metric_value(r, objective) for r in results])
    cst = np.array([metric_value(r, cost) for r in results])
    dominated = ((obj[None, :] > obj[:, None]) & (cst[None, :] <= cst[:, None])).any(axis=1)
    keep = [k for k in range(len(results)) if not dominated[k]]
    keep.sort(key=lambda k: (cst[k], -obj[k], results[k].config_id))
    return [results[k] for k in keep]


def pareto_points(front: Sequence[ConfigResult], objective: str, cost: str) -> list[dict]:
    return [
        {"config_id": r.config_id, "config_string": r.config_string, objective: metric_value(r, objective), cost: metric_value(r, cost)}
        for r in front
    ]


def leaderboard_markdown(results: Sequence[ConfigResult], k: int = 4) -> str:
    """Top-k tables by F1, precision and recall."""
    lines = [
        f"| Top-{k} by | ID | Config. | F1 | Prec. | Rec. | Acc. |",
        "|---|---|---|---|---|---|---|",
    ]
    for label, key in (("F1", "f1"), ("Precision", "precision"), ("Recall", "recall")):
        ranked = sorted(results, key=lambda r: (-metric_value(r, key), r.config_id))[:k]
        for r in ranked:
            m = r.metrics
            lines.append(
                f"| {label} | {r.config_id} | {r.config_string or format_config_string(r.config)} "
                f"| {m.f1:.4f} | {m.precision:.4f} | {m.recall:.4f} | {m.accuracy:.4f} |"
            )
    return "\n".join(lines) + "\n"


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)
