"""Reference-free hallucination detection for retrieval-augmented answers.

``halluguard detect`` exits 0 when the answer passes, 2 when it is flagged
and 1 on any error, so shell pipelines can branch on the result.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .core import DetectionInput, DetectorError, canonical_json
from .evaluation import (
    ConfigResult,
    consistency,
    evaluate,
    format_config_string,
    leaderboard_markdown,
    load_dataset,
    load_grid,
    parse_config_string,
    pareto_front,
    pareto_points,
    with_seed,
)
from .pipeline import detect
from .policy import AuditSink, TopicRuleSet, default_rules, load_rules
from .settings import load_settings

EXIT_PASS, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2

log = logging.getLogger("halluguard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as "flagged"
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _rules(path: str | None, default: TopicRuleSet) -> TopicRuleSet:
    return load_rules(path) if path else default


def cmd_detect(args) -> int:
    if args.answer is None and args.answer_file is None:
        raise UsageError("one of --answer or --answer-file is required")
    answer = args.answer if args.answer is not None else Path(args.answer_file).read_text(encoding="utf-8")
    chunks = list(args.chunk or [])
    if args.context_file:
        loaded = json.loads(Path(args.context_file).read_text(encoding="utf-8"))
        if not isinstance(loaded, list):
            raise UsageError("--context-file must hold a JSON list of strings")
        chunks = loaded + chunks
    settings = load_settings(args.config, args.models)
    rules = _rules(args.rules, default_rules())
    sink = AuditSink(args.audit_log) if args.audit_log else None
    report = detect(
        DetectionInput(args.query, tuple(chunks), answer),
        settings.config,
        settings.registry.resolve(settings.config),
        rules,
        parallelism=args.parallelism,
        audit_sink=sink,
    )
    _write(args.out, report.to_json() + ("\n" if not args.out else ""))
    return EXIT_FLAGGED if report.flagged else EXIT_PASS


def cmd_evaluate(args) -> int:
    if bool(args.grid) == bool(args.config):
        raise UsageError("give exactly one of --grid or --config")
    records = load_dataset(args.dataset)
    if not records:
        raise UsageError(f"dataset {args.dataset} has no records")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]
    rules = _rules(args.rules, TopicRuleSet())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.grid:
        base = load_settings(load_grid(args.grid)[0].config, args.models)
        cells = [(e.id, parse_config_string(e.config, base.aliases)) for e in load_grid(args.grid)]
        registry, aliases = base.registry, base.aliases
    else:
        s = load_settings(args.config, args.models)
        cells = [("config", s.config)]
        registry, aliases = s.registry, s.aliases

    results = []
    for cell_id, config in cells:
        backends = registry.resolve(config)
        summaries = []
        for seed in seeds:
            cfg = with_seed(config, seed)
            metrics = evaluate(records, cfg, backends, rules, parallelism=args.parallelism)
            summaries.append(metrics)
            rid = cell_id if len(seeds) == 1 else f"{cell_id}-s{seed}"
            result = ConfigResult(rid, cfg, metrics, format_config_string(cfg, aliases))
            results.append(result)
            (out / f"{rid}.json").write_text(canonical_json(result.to_dict(), indent=2), encoding="utf-8")
            log.info("%s: F1=%.4f P=%.4f R=%.4f", rid, metrics.f1, metrics.precision, metrics.recall)
        if len(seeds) > 1:
            (out / "consistency").mkdir(exist_ok=True)
            report = consistency(summaries, seeds)
            (out / "consistency" / f"{cell_id}.json").write_text(canonical_json(report.to_dict(), indent=2), encoding="utf-8")
    (out / "leaderboard.md").write_text(leaderboard_markdown(results), encoding="utf-8")
    return EXIT_PASS


def cmd_pareto(args) -> int:
    results = []
    for path in sorted(Path(args.results_dir).glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "config_id" in doc and "metrics" in doc:
            results.append(ConfigResult.from_dict(doc))
    if not results:
        raise UsageError(f"no result files in {args.results_dir}")
    front = pareto_front(results, args.objective, args.cost)
    doc = {"objective": args.objective, "cost": args.cost, "points": pareto_points(front, args.objective, args.cost)}
    _write(args.out, canonical_json(doc, indent=2) + "\n")
    return EXIT_PASS


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    settings = load_settings(args.config, args.models)
    port = args.port if args.port is not None else int(os.environ.get("HALLUGUARD_PORT", "8080"))
    app = create_app(
        settings.config,
        settings.registry,
        _rules(args.rules, default_rules()),
        AuditSink(args.audit_log) if args.audit_log else None,
        max_concurrent=args.max_concurrent,
        token=args.token or os.environ.get("HALLUGUARD_TOKEN"),
    )
    uvicorn.run(app, host=args.host, port=port)
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="halluguard", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="score one answer against its context")
    d.add_argument("--query", default="")
    d.add_argument("--context-file", help="JSON list of context chunks")
    d.add_argument("--chunk", action="append", help="one context chunk (repeatable)")
    d.add_argument("--answer")
    d.add_argument("--answer-file")
    d.add_argument("--config", required=True, help="run file (JSON) or config string such as mini/41/multi/2/0")
    d.add_argument("--models", help="JSON file with 'models'/'aliases'/'endpoint' sections")
    d.add_argument("--rules", help="topic rule file (JSON); defaults to the built-in rules")
    d.add_argument("--out", help="write the report here instead of stdout")
    d.add_argument("--audit-log", help="append an audit record to this JSONL file")
    d.add_argument("--parallelism", type=int, default=8)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="metrics over a labelled JSONL dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--grid", help="grid file or preset name (paper26)")
    e.add_argument("--config")
    e.add_argument("--models")
    e.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3,4,5")
    e.add_argument("--rules", help="topic rules; without them every record uses threshold_general")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--parallelism", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("pareto", help="non-dominated configurations from a results directory")
    r.add_argument("--results-dir", required=True)
    r.add_argument("--objective", default="f1")
    r.add_argument("--cost", default="tokens")
    r.add_argument("--out")
    r.set_defaults(func=cmd_pareto)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--config", required=True)
    s.add_argument("--models")
    s.add_argument("--rules")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int)
    s.add_argument("--audit-log")
    s.add_argument("--max-concurrent", type=int, default=16)
    s.add_argument("--token", help="require this bearer token on /v1/detect")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_PASS if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"halluguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DetectorError, OSError, ValueError, KeyError) as exc:
        print(f"halluguard {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
