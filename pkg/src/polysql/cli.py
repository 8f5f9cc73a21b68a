"""Operator command line: link, gen, ask, eval, synth, introspect.

Every command reads one JSON config (via --config or $POLYSQL_CONFIG),
honors --seed/--workers overrides, writes machine-readable artifacts under
--out, and exits 0 on success, 1 on pipeline failure, 2 on config or usage
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigInvalid, PolysqlError
from .evaluation import load_dataset
from .harness import resolve_db_file, run_eval
from .pipeline import Pipeline
from .schema import introspect, render_schema
from .synthesis import reformat_sql, synth_multitask, synth_selection


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polysql",
        description="Multi-candidate text-to-SQL pipeline with schema filtering and "
        "consistency-based selection.",
    )
    parser.add_argument("--config", help="path to the JSON config file (or set $POLYSQL_CONFIG)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--workers", type=int, help="override the config worker cap")
    parser.add_argument("--out", default="polysql_out", help="output directory for artifacts")
    parser.add_argument(
        "--timings", action="store_true", help="include elapsed-ms timings in outputs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("introspect", help="print the rendered schema text of a database")
    p.add_argument("db")

    for name, help_text in (
        ("link", "run the schema filter for one question"),
        ("gen", "generate the full candidate list for one question"),
        ("ask", "answer one question end to end"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("db")
        p.add_argument("--question", required=True)
        p.add_argument("--evidence", default="")
        if name == "ask":
            p.add_argument("--execute", action="store_true", help="also execute the chosen SQL")

    p = sub.add_parser("eval", help="evaluate the pipeline over a benchmark dataset")
    p.add_argument("dataset")
    p.add_argument("--flavor", choices=("bird", "spider"), default="bird")
    p.add_argument("--db-dir", required=True, help="directory holding the benchmark databases")
    p.add_argument("--limit", type=int, help="evaluate only the first N items")

    p = sub.add_parser("synth", help="synthesize training records from a dataset")
    p.add_argument("dataset")
    p.add_argument("--task", choices=("multitask", "selection", "reformat"), required=True)
    p.add_argument("--flavor", choices=("bird", "spider"), default="bird")
    p.add_argument("--db-dir", required=True, help="directory holding the source databases")
    p.add_argument("--limit", type=int, help="use only the first N items")
    p.add_argument(
        "--style",
        choices=("complex_pattern", "standardized"),
        default="complex_pattern",
        help="rewrite style for --task reformat",
    )
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> None:
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.timings:
        config.emit_timings = True


def _db_map(items, db_dir: str):
    files = {}
    missing = []
    for item in items:
        if item.db_id in files or item.db_id in missing:
            continue
        path = resolve_db_file(db_dir, item.db_id)
        if path is None:
            missing.append(item.db_id)
        else:
            files[item.db_id] = path
    return files, missing


def _candidate_record(candidate, emit_timings: bool) -> dict:
    record = {
        "generator_id": candidate.generator_id,
        "schema_index": candidate.schema_index,
        "refined": candidate.refined,
        "sql": candidate.sql,
        "status": candidate.outcome.status.value,
        "message": candidate.outcome.message,
    }
    if candidate.outcome.is_ok:
        record["rows"] = [list(row) for row in candidate.outcome.rows]
    if emit_timings:
        record["elapsed_ms"] = candidate.outcome.elapsed_ms
    return record


def _run(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)

    if args.command == "introspect":
        config = load_config(args.config)
        _apply_overrides(config, args)
        doc = introspect(args.db, sample_cap=config.sample_cap)
        text = render_schema(doc)
        print(text)
        _write_json(out_dir / "schema.json", {"db_id": doc.db_id, "schema_text": text})
        return 0

    config = load_config(args.config)
    _apply_overrides(config, args)

    if args.command == "link":
        pipeline = Pipeline(config)
        link = pipeline.link(args.db, args.question, args.evidence)
        record = link.report_record(pipeline.doc_for(args.db).db_id)
        _write_jsonl(out_dir / "link_report.jsonl", [record])
        print(json.dumps(record, sort_keys=True, indent=2))
        return 0

    if args.command == "gen":
        pipeline = Pipeline(config)
        link = pipeline.link(args.db, args.question, args.evidence)
        candidates = pipeline.generate(args.db, args.question, args.evidence, link.subsets)
        rows = [_candidate_record(c, config.emit_timings) for c in candidates]
        _write_jsonl(out_dir / "candidates.jsonl", rows)
        ok = sum(1 for c in candidates if c.outcome.is_ok)
        print(f"{len(candidates)} candidates ({ok} executed ok) -> {out_dir / 'candidates.jsonl'}")
        return 0

    if args.command == "ask":
        pipeline = Pipeline(config)
        result = pipeline.ask(args.db, args.question, args.evidence)
        transcript = result.transcript(pipeline.doc_for(args.db).db_id, config.emit_timings)
        _write_json(out_dir / "ask_transcript.json", transcript)
        print(result.sql)
        if args.execute:
            outcome = pipeline.execute_sql(result.sql, args.db)
            if outcome.is_ok:
                for row in outcome.rows:
                    print(json.dumps(list(row), sort_keys=True))
            else:
                print(f"execution failed: {outcome.status.value}: {outcome.message}", file=sys.stderr)
                return 1
        return 0

    if args.command == "eval":
        items = load_dataset(args.dataset, args.flavor)
        if args.limit:
            items = items[: args.limit]
        pipeline = Pipeline(config)
        report, records = run_eval(pipeline, items, args.db_dir, workers=config.workers)
        _write_json(out_dir / "eval_report.json", report.to_dict())
        _write_jsonl(out_dir / "eval_items.jsonl", [r.to_dict() for r in records])
        print(f"EX: {report.ex:.4f} over {report.scored_items} scored items")
        for i, metrics in enumerate(report.subset_metrics, start=1):
            recall = metrics["value_recall"]
            print(
                f"subset {i}: P={metrics['precision']:.4f} "
                f"Rc={metrics['column_recall']:.4f} "
                f"Rv={'n/a' if recall is None else f'{recall:.4f}'}"
            )
        return 0

    if args.command == "synth":
        items = load_dataset(args.dataset, args.flavor)
        if args.limit:
            items = items[: args.limit]
        db_files, missing = _db_map(items, args.db_dir)
        if missing:
            print(f"missing databases: {', '.join(sorted(missing))}", file=sys.stderr)
            return 1
        items = [item for item in items if item.db_id in db_files]
        pipeline = Pipeline(config)
        docs = {db_id: pipeline.doc_for(path) for db_id, path in db_files.items()}

        if args.task == "multitask":
            result = synth_multitask(
                items,
                docs,
                db_files,
                pipeline.prompts,
                seed=config.seed,
                timeout_ms=config.exec_timeout_ms,
                mode=config.equivalence_mode,  # type: ignore[arg-type]
            )
            rows = [
                {"task": s.task, "prompt": s.prompt, "target": s.target, "meta": s.meta}
                for s in result.samples
            ]
            _write_jsonl(out_dir / "training_multitask.jsonl", rows)
            _write_json(
                out_dir / "synth_report.json",
                {"emitted": len(rows), "skipped": [[qid, why] for qid, why in result.skipped]},
            )
            print(f"{len(rows)} samples, {len(result.skipped)} skipped")
            return 0

        if args.task == "selection":

            def candidate_fn(item):
                db_file = db_files[item.db_id]
                link = pipeline.link(db_file, item.question, item.evidence)
                return pipeline.generate(db_file, item.question, item.evidence, link.subsets)

            result = synth_selection(
                items,
                candidate_fn,
                db_files,
                pipeline.prompts,
                seed=config.seed,
                timeout_ms=config.exec_timeout_ms,
                mode=config.equivalence_mode,  # type: ignore[arg-type]
            )
            rows = [
                {"task": s.task, "prompt": s.prompt, "target": s.target, "meta": s.meta}
                for s in result.samples
            ]
            _write_jsonl(out_dir / "training_selection.jsonl", rows)
            _write_json(
                out_dir / "synth_report.json",
                {
                    "emitted": len(rows),
                    "skipped": [[qid, why] for qid, why in result.skipped],
                    "position_counts": {
                        str(k): v for k, v in sorted(result.balance.position_counts.items())
                    },
                    "combination_counts": {
                        f"{c}+{w}": n
                        for (c, w), n in sorted(result.balance.combination_counts.items())
                    },
                    "target_generator_counts": dict(
                        sorted(result.balance.target_generator_counts.items())
                    ),
                },
            )
            print(f"{len(rows)} samples, {len(result.skipped)} skipped")
            return 0

        # reformat
        rows = []
        rejections = 0
        for item in items:
            outcome = reformat_sql(
                item.gold_sql,
                args.style,
                db_files[item.db_id],
                pipeline.registry,
                pipeline.prompts,
                timeout_ms=config.exec_timeout_ms,
                mode=config.equivalence_mode,  # type: ignore[arg-type]
            )
            rejections += int(not outcome.accepted)
            rows.append(
                {
                    "question_id": item.question_id,
                    "db_id": item.db_id,
                    "style": outcome.style,
                    "original": outcome.original,
                    "sql": outcome.sql,
                    "accepted": outcome.accepted,
                }
            )
        _write_jsonl(out_dir / "training_reformat.jsonl", rows)
        print(f"{len(rows)} rewrites, {rejections} rejected")
        return 0

    raise ConfigInvalid(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PolysqlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
