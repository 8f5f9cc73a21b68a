"""Benchmark runner: drive the pipeline over a dataset and aggregate reports."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import PolysqlError
from .evaluation import (
    BenchItem,
    ContributionReport,
    EvalReport,
    ItemTranscript,
    SubsetMetrics,
    Verdict,
    contribution_report,
    extract_gold_identifiers,
    schema_metrics,
    score_ex,
    summarize_subset_metrics,
)
from .execution import equivalent, execute
from .pipeline import Pipeline


def resolve_db_file(db_dir: str | Path, db_id: str) -> Path | None:
    """Locate a database file under the benchmark layout.

    Tries <db_dir>/<db_id>/<db_id>.sqlite first (BIRD/Spider distribution
    layout), then <db_dir>/<db_id>.sqlite.
    """
    base = Path(db_dir)
    for candidate in (base / db_id / f"{db_id}.sqlite", base / f"{db_id}.sqlite"):
        if candidate.is_file():
            return candidate
    return None


@dataclass
class ItemRecord:
    """Per-item evaluation record, serialized one JSON line each."""

    question_id: int
    db_id: str
    verdict: str
    predicted_sql: str
    branch: str
    refine_triggers: int
    metrics: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "db_id": self.db_id,
            "verdict": self.verdict,
            "predicted_sql": self.predicted_sql,
            "branch": self.branch,
            "refine_triggers": self.refine_triggers,
            "metrics": self.metrics,
        }


def run_eval(
    pipeline: Pipeline,
    items: Sequence[BenchItem],
    db_dir: str | Path,
    *,
    workers: int = 1,
) -> tuple[EvalReport, list[ItemRecord]]:
    """Evaluate the pipeline over benchmark items.

    Items run independently (optionally concurrently); aggregation is a
    deterministic fold in item order. Reference queries that fail to execute
    exclude their items from the accuracy denominator.
    """
    mode = pipeline.config.equivalence_mode
    timeout_ms = pipeline.config.exec_timeout_ms

    def run_item(item: BenchItem):
        db_file = resolve_db_file(db_dir, item.db_id)
        if db_file is None:
            return ("skip", item, "missing_database", None, None, None)
        try:
            ask = pipeline.ask(db_file, item.question, item.evidence)
        except PolysqlError as exc:
            return ("skip", item, f"pipeline_error: {exc}", None, None, None)
        verdict = score_ex(ask.sql, item.gold_sql, db_file, mode, timeout_ms)  # type: ignore[arg-type]

        doc = pipeline.doc_for(db_file)
        gold_columns, gold_values = extract_gold_identifiers(item.gold_sql, doc)
        metrics = schema_metrics(ask.link.subsets, gold_columns, gold_values, ask.link.values)

        gold_outcome = execute(item.gold_sql, db_file, timeout_ms)
        correctness = [
            (c.generator_id, gold_outcome.is_ok and equivalent(c.outcome, gold_outcome, mode))  # type: ignore[arg-type]
            for c in ask.candidates
        ]
        transcript = ItemTranscript(
            question_id=item.question_id,
            contested=ask.selection.report.branch in ("majority", "minority"),
            chosen_generator=ask.selection.candidate.generator_id,
            candidate_correctness=correctness,
        )
        return ("ok", item, verdict, ask, metrics, transcript)

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_item, items))
    else:
        results = [run_item(item) for item in items]

    verdicts: list[tuple[int, str]] = []
    skipped: list[tuple[int, str]] = []
    records: list[ItemRecord] = []
    per_item_metrics: list[list[SubsetMetrics]] = []
    transcripts: list[ItemTranscript] = []
    refine_triggers = 0
    selector_fallbacks = 0
    degenerate_items = 0
    gold_errors = 0
    correct = 0
    scored = 0

    for status, item, payload, ask, metrics, transcript in results:
        if status == "skip":
            skipped.append((item.question_id, payload))
            continue
        verdict: Verdict = payload
        refines = sum(1 for c in ask.candidates if c.refined)
        refine_triggers += refines
        selector_fallbacks += int(
            ask.selection.report.selector_fallback or ask.selection.report.backend_failed
        )
        degenerate_items += int(ask.selection.report.degenerate)
        records.append(
            ItemRecord(
                question_id=item.question_id,
                db_id=item.db_id,
                verdict=verdict.value,
                predicted_sql=ask.sql,
                branch=ask.selection.report.branch,
                refine_triggers=refines,
                metrics=[
                    {
                        "precision": m.precision,
                        "column_recall": m.column_recall,
                        "value_recall": m.value_recall,
                    }
                    for m in metrics
                ],
            )
        )
        if verdict is Verdict.GOLD_ERROR:
            gold_errors += 1
            continue
        verdicts.append((item.question_id, verdict.value))
        scored += 1
        correct += int(verdict is Verdict.CORRECT)
        per_item_metrics.append(metrics)
        transcripts.append(transcript)

    contribution: ContributionReport = contribution_report(transcripts)
    report = EvalReport(
        ex=correct / scored if scored else 0.0,
        verdicts=verdicts,
        subset_metrics=summarize_subset_metrics(per_item_metrics),
        contribution=contribution,
        refine_triggers=refine_triggers,
        selector_fallbacks=selector_fallbacks,
        degenerate_items=degenerate_items,
        gold_errors=gold_errors,
        skipped=skipped,
        scored_items=scored,
    )
    return report, records
