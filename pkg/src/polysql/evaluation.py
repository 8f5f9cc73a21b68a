"""Evaluation harness: dataset loading, execution accuracy, filter metrics.

Loads BIRD- and Spider-format benchmark files, scores predicted SQL against
reference SQL by execution-result equivalence, measures schema-filter
precision/recall per selection round, and attributes contested final answers
to the generators that produced them.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import MalformedDataset
from .execution import Mode, equivalent, execute
from .linking import RetrievedValue
from .schema import ColumnRef, SchemaDoc, SchemaSubset


@dataclass(frozen=True)
class BenchItem:
    """One benchmark question with its reference SQL."""

    question_id: int
    db_id: str
    question: str
    evidence: str
    gold_sql: str


def _load_records(path: Path) -> list:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedDataset(f"cannot read {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDataset(f"{path}: invalid JSON: {exc}") from exc
    records = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise MalformedDataset(f"{path}:{i + 1}: invalid JSON line: {exc}") from exc
    return records


def load_dataset(path: str | Path, flavor: str = "bird") -> list[BenchItem]:
    """Load a benchmark file.

    The bird flavor maps {question_id, db_id, question, evidence, SQL};
    spider maps {db_id, question, query} with empty evidence and sequential
    ids. The first malformed record aborts the load.
    """
    if flavor not in ("bird", "spider"):
        raise MalformedDataset(f"unknown dataset flavor {flavor!r}")
    records = _load_records(Path(path))
    if not isinstance(records, list):
        raise MalformedDataset(f"{path}: expected a list of records")
    items = []
    sql_key = "SQL" if flavor == "bird" else "query"
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            raise MalformedDataset(f"{path}: record {i} is not an object")
        missing = [key for key in ("db_id", "question", sql_key) if key not in record]
        if missing:
            raise MalformedDataset(f"{path}: record {i} missing {', '.join(missing)}")
        items.append(
            BenchItem(
                question_id=int(record.get("question_id", i)) if flavor == "bird" else i,
                db_id=str(record["db_id"]),
                question=str(record["question"]),
                evidence=str(record.get("evidence", "")) if flavor == "bird" else "",
                gold_sql=str(record[sql_key]),
            )
        )
    return items


class Verdict(str, Enum):
    CORRECT = "correct"
    WRONG = "wrong"
    PRED_ERROR = "pred_error"
    GOLD_ERROR = "gold_error"


def score_ex(
    pred: str,
    gold: str,
    db_file: str | Path,
    mode: Mode = "set",
    timeout_ms: int = 30_000,
) -> Verdict:
    """Execution-accuracy verdict for one (prediction, reference) pair.

    A failing reference excludes the item (gold_error); a failing prediction
    counts as wrong (pred_error).
    """
    gold_outcome = execute(gold, db_file, timeout_ms)
    if not gold_outcome.is_ok:
        return Verdict.GOLD_ERROR
    pred_outcome = execute(pred, db_file, timeout_ms)
    if not pred_outcome.is_ok:
        return Verdict.PRED_ERROR
    return Verdict.CORRECT if equivalent(pred_outcome, gold_outcome, mode) else Verdict.WRONG


@dataclass(frozen=True)
class SubsetMetrics:
    """Precision and recall of one schema subset against gold annotations."""

    precision: float
    column_recall: float
    value_recall: float | None


def schema_metrics(
    subsets: Sequence[SchemaSubset],
    gold_columns: frozenset[ColumnRef] | set[ColumnRef],
    gold_values: Sequence[tuple[ColumnRef, str]],
    retrieved: Sequence[RetrievedValue] = (),
) -> list[SubsetMetrics]:
    """Per-subset precision, column recall, and value recall.

    Value recall is the fraction of gold (column, literal) pairs whose column
    is in the subset and whose literal was actually retrieved by value
    retrieval; None when no gold values are annotated.
    """
    gold = frozenset(gold_columns)
    retrieved_pairs = {(v.column, v.value_text) for v in retrieved}
    out = []
    for subset in subsets:
        hit = len(subset.columns & gold)
        if subset.columns:
            precision = hit / len(subset.columns)
        else:
            precision = 1.0 if not gold else 0.0
        column_recall = hit / len(gold) if gold else 1.0
        value_recall = None
        if gold_values:
            hits = sum(
                1
                for column, literal in gold_values
                if column in subset.columns and (column, literal) in retrieved_pairs
            )
            value_recall = hits / len(gold_values)
        out.append(SubsetMetrics(precision, column_recall, value_recall))
    return out


_ALIAS_RE = re.compile(
    r"\b(?:from|join)\s+[\"'`\[]?(\w+)[\"'`\]]?\s+(?:as\s+)?([A-Za-z_]\w*)\b", re.IGNORECASE
)
_LITERAL_RE = re.compile(r"'((?:[^']|'')*)'")
_KEYWORDISH = frozenset(
    """select from where group by having order limit offset join inner left right full
    outer cross on as and or not in exists like between union all distinct case when
    then else end with is null asc desc""".split()
)


def extract_gold_identifiers(
    gold_sql: str, doc: SchemaDoc
) -> tuple[frozenset[ColumnRef], list[tuple[ColumnRef, str]]]:
    """Schema-aware identifier scan of a reference query.

    Tables are matched by name token; aliases from FROM/JOIN clauses are
    resolved; qualified column references always count, and bare column
    tokens count for every referenced table that has such a column. String
    literals are attributed to the column named immediately before them in a
    comparison (=, !=, <>, LIKE, IN).
    """
    lowered = gold_sql.lower()
    table_names = {t.name.lower(): t.name for t in doc.tables}

    aliases: dict[str, str] = {}
    for match in _ALIAS_RE.finditer(gold_sql):
        table_token, alias = match.group(1).lower(), match.group(2).lower()
        if table_token in table_names and alias not in _KEYWORDISH:
            aliases[alias] = table_names[table_token]

    word_tokens = set(re.findall(r"[A-Za-z_]\w*", lowered))
    referenced = {name for low, name in table_names.items() if low in word_tokens}
    referenced.update(aliases.values())

    columns: set[ColumnRef] = set()
    for meta in doc.columns():
        table_low = meta.ref.table_name.lower()
        column_low = meta.ref.column_name.lower()
        qualified_names = [f"{table_low}.{column_low}"] + [
            f"{alias}.{column_low}" for alias, table in aliases.items() if table == meta.ref.table_name
        ]
        if any(q in lowered for q in qualified_names):
            columns.add(meta.ref)
            continue
        if meta.ref.table_name in referenced and re.search(
            rf"(?<![\w.]){re.escape(column_low)}(?![\w])", lowered
        ):
            columns.add(meta.ref)

    values: list[tuple[ColumnRef, str]] = []
    for match in _LITERAL_RE.finditer(gold_sql):
        literal = match.group(1).replace("''", "'")
        prefix = gold_sql[: match.start()]
        col_match = re.search(
            r"[\"'`\[]?([A-Za-z_]\w*)[\"'`\]]?\s*(?:=|!=|<>|like|in\s*\()\s*$",
            prefix,
            re.IGNORECASE,
        )
        if not col_match:
            continue
        name = col_match.group(1).lower()
        for ref in sorted(columns):
            if ref.column_name.lower() == name:
                values.append((ref, literal))
                break
    return frozenset(columns), values


@dataclass
class ItemTranscript:
    """Selection provenance for one evaluated item."""

    question_id: int
    contested: bool
    chosen_generator: str
    candidate_correctness: list[tuple[str, bool]] = field(default_factory=list)


@dataclass
class ContributionReport:
    """Per-generator share of contested final answers."""

    contribution_ratio: dict[str, float]
    unanimous_share: float
    contested_items: int
    avg_ex: dict[str, float]


def contribution_report(transcripts: Sequence[ItemTranscript]) -> ContributionReport:
    """Attribute contested choices to generators; unanimous items are tallied apart."""
    contested = [t for t in transcripts if t.contested]
    ratio: dict[str, float] = {}
    if contested:
        counts: dict[str, int] = {}
        for t in contested:
            counts[t.chosen_generator] = counts.get(t.chosen_generator, 0) + 1
        ratio = {g: n / len(contested) for g, n in sorted(counts.items())}

    unanimous_share = (
        (len(transcripts) - len(contested)) / len(transcripts) if transcripts else 0.0
    )

    totals: dict[str, list[int]] = {}
    for t in transcripts:
        for generator_id, correct in t.candidate_correctness:
            bucket = totals.setdefault(generator_id, [0, 0])
            bucket[0] += int(correct)
            bucket[1] += 1
    avg_ex = {g: hits / n for g, (hits, n) in sorted(totals.items()) if n}
    return ContributionReport(
        contribution_ratio=ratio,
        unanimous_share=unanimous_share,
        contested_items=len(contested),
        avg_ex=avg_ex,
    )


@dataclass
class EvalReport:
    """Aggregate result of an evaluation run."""

    ex: float
    verdicts: list[tuple[int, str]]
    subset_metrics: list[dict[str, float | None]]
    contribution: ContributionReport
    refine_triggers: int
    selector_fallbacks: int
    degenerate_items: int
    gold_errors: int
    skipped: list[tuple[int, str]]
    scored_items: int

    def to_dict(self) -> dict:
        return {
            "ex": self.ex,
            "scored_items": self.scored_items,
            "verdicts": [[qid, v] for qid, v in self.verdicts],
            "subset_metrics": self.subset_metrics,
            "contribution_ratio": self.contribution.contribution_ratio,
            "avg_ex_per_generator": self.contribution.avg_ex,
            "unanimous_share": self.contribution.unanimous_share,
            "contested_items": self.contribution.contested_items,
            "refine_triggers": self.refine_triggers,
            "selector_fallbacks": self.selector_fallbacks,
            "degenerate_items": self.degenerate_items,
            "gold_errors": self.gold_errors,
            "skipped": [[qid, reason] for qid, reason in self.skipped],
        }


def summarize_subset_metrics(
    per_item: Sequence[Sequence[SubsetMetrics]],
) -> list[dict[str, float | None]]:
    """Mean P/R_c/R_v per subset index across items."""
    if not per_item:
        return []
    rounds = max(len(metrics) for metrics in per_item)
    out = []
    for i in range(rounds):
        precisions = [m[i].precision for m in per_item if len(m) > i]
        column_recalls = [m[i].column_recall for m in per_item if len(m) > i]
        value_recalls = [
            m[i].value_recall for m in per_item if len(m) > i and m[i].value_recall is not None
        ]
        out.append(
            {
                "precision": sum(precisions) / len(precisions),
                "column_recall": sum(column_recalls) / len(column_recalls),
                "value_recall": (sum(value_recalls) / len(value_recalls)) if value_recalls else None,
            }
        )
    return out
