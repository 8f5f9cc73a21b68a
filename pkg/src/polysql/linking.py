"""Schema filtering: multi-path retrieval plus iterative column selection.

Retrieval scores every (keyword, column) pair as the product of two cosine
similarities — question-and-evidence against the column's table metadata,
and the keyword against the column metadata — and locates cell values by
edit distance, an LSH prefilter, and an embedding threshold. Column
selection then asks the schema-analyst model for relevant columns over a
shrinking retrieved pool, emitting one nested schema subset per iteration.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import BackendRegistry, ChatRequest
from .errors import UnreadableDatabase
from .prompts import PromptLibrary
from .schema import (
    ColumnMeta,
    ColumnRef,
    SchemaDoc,
    SchemaSubset,
    TableMeta,
    pf_key_closure,
    render_schema,
    sqlite_uri,
)
from .textmatch import MinHashLsh, SubwordTokenizer, top_k_by_distance

DISTANCE_CAP_FLOOR = 8

_STOPWORDS = frozenset(
    """a an and are as at be been by did do does for from had has have how in is it its
    of on or that the their there they this to was were what when where which who will
    with would""".split()
)


@dataclass(frozen=True)
class KeywordSet:
    """Keywords extracted from a question and its evidence text."""

    keywords: tuple[str, ...]
    source_question: str
    source_evidence: str = ""


@dataclass(frozen=True)
class ScoredColumn:
    """One (keyword, column) relevance hit; score is the cosine product."""

    ref: ColumnRef
    keyword: str
    score: float


@dataclass(frozen=True)
class RetrievedValue:
    """A cell value matched to a keyword, with its match provenance."""

    column: ColumnRef
    value_text: str
    edit_distance: int
    cosine: float


def parse_keyword_list(text: str) -> list[str]:
    """Split a model response into trimmed, case-insensitively unique keywords."""
    pieces = []
    for chunk in text.replace(";", ",").replace("\n", ",").split(","):
        cleaned = chunk.strip().strip("\"'`•*-– ").strip()
        cleaned = cleaned.lstrip("0123456789.)( ").strip()
        if cleaned:
            pieces.append(cleaned)
    out: list[str] = []
    seen: set[str] = set()
    for piece in pieces:
        key = piece.casefold()
        if key not in seen:
            seen.add(key)
            out.append(piece)
    return out


def content_words(text: str) -> list[str]:
    """Fallback keyword source: non-stopword word tokens, deduplicated."""
    out: list[str] = []
    seen: set[str] = set()
    word = []
    for ch in text + " ":
        if ch.isalnum() or ch == "_":
            word.append(ch)
            continue
        if word:
            token = "".join(word)
            word = []
            key = token.casefold()
            if key not in _STOPWORDS and key not in seen:
                seen.add(key)
                out.append(token)
    return out


def extract_keywords(
    question: str,
    evidence: str,
    registry: BackendRegistry,
    prompts: PromptLibrary,
    *,
    role: str = "schema_analyst",
    temperature: float = 0.0,
    max_tokens: int = 256,
) -> KeywordSet:
    """Ask the schema-analyst model for keywords; fall back to content words."""
    if not question:
        raise ValueError("question must be non-empty")
    prompt = prompts.render("keyword_extraction", question=question, evidence=evidence)
    response = registry.chat(
        ChatRequest(role, (("user", prompt),), temperature=temperature, max_tokens=max_tokens)
    )
    keywords = parse_keyword_list(response)
    if not keywords:
        keywords = content_words(question_evidence_text(question, evidence))
    return KeywordSet(tuple(keywords), question, evidence)


def question_evidence_text(question: str, evidence: str) -> str:
    return f"{question}\n{evidence}" if evidence else question


def column_embed_text(meta: ColumnMeta) -> str:
    """Column metadata string embedded for relevance scoring (no sample values)."""
    text = f"{meta.ref.table_name}.{meta.ref.column_name}: {meta.data_type}"
    if meta.description:
        text += f", {meta.description}"
    return text


def table_embed_text(table: TableMeta) -> str:
    if table.description:
        return f"{table.name}: {table.description}"
    return table.name


def score_columns(
    keywords: KeywordSet,
    doc: SchemaDoc,
    registry: BackendRegistry,
) -> list[ScoredColumn]:
    """Score every (keyword, column) pair.

    Score = cosine(question-and-evidence, table metadata) *
    cosine(keyword, column metadata). Results come back grouped by keyword
    (in keyword order), sorted by descending score within each keyword; ties
    keep document column order.
    """
    columns = list(doc.columns())
    if not columns:
        raise ValueError(f"{doc.db_id}: document has no columns")
    if not keywords.keywords:
        return []

    qe_text = question_evidence_text(keywords.source_question, keywords.source_evidence)
    table_texts = [table_embed_text(t) for t in doc.tables]
    column_texts = [column_embed_text(c) for c in columns]
    texts = [qe_text] + table_texts + column_texts + list(keywords.keywords)
    vectors = registry.embed(texts)

    qe_vec = vectors[0]
    table_vecs = dict(zip((t.name for t in doc.tables), vectors[1 : 1 + len(table_texts)]))
    col_vecs = vectors[1 + len(table_texts) : 1 + len(table_texts) + len(column_texts)]
    keyword_vecs = vectors[1 + len(table_texts) + len(column_texts) :]

    table_scores = {name: qe_vec.cosine(vec) for name, vec in table_vecs.items()}
    out: list[ScoredColumn] = []
    for keyword, k_vec in zip(keywords.keywords, keyword_vecs):
        scored = [
            ScoredColumn(col.ref, keyword, table_scores[col.ref.table_name] * k_vec.cosine(c_vec))
            for col, c_vec in zip(columns, col_vecs)
        ]
        scored.sort(key=lambda s: -s.score)
        out.extend(scored)
    return out


def is_text_affinity(data_type: str) -> bool:
    upper = data_type.upper()
    return "CHAR" in upper or "TEXT" in upper or "CLOB" in upper


def load_column_values(db_file: str | Path, doc: SchemaDoc) -> dict[ColumnRef, list[str]]:
    """Distinct non-null values of every text-affinity column, sorted."""
    path = Path(db_file)
    if not path.is_file():
        raise UnreadableDatabase(f"no such database file: {path}")
    try:
        conn = sqlite3.connect(sqlite_uri(path), uri=True)
    except sqlite3.Error as exc:
        raise UnreadableDatabase(f"cannot open {path}: {exc}") from exc
    values: dict[ColumnRef, list[str]] = {}
    try:
        for meta in doc.columns():
            if not is_text_affinity(meta.data_type):
                continue
            table = meta.ref.table_name.replace('"', '""')
            column = meta.ref.column_name.replace('"', '""')
            try:
                rows = conn.execute(
                    f'SELECT DISTINCT "{column}" FROM "{table}"'
                    f' WHERE "{column}" IS NOT NULL ORDER BY "{column}"'
                ).fetchall()
            except sqlite3.Error as exc:
                raise UnreadableDatabase(f"cannot scan {meta.ref.dotted()}: {exc}") from exc
            values[meta.ref] = [str(row[0]) for row in rows]
    finally:
        conn.close()
    return values


def retrieve_values(
    keywords: KeywordSet,
    db_file: str | Path,
    doc: SchemaDoc,
    registry: BackendRegistry | None = None,
    *,
    top_k: int = 5,
    cosine_threshold: float = 0.60,
    lsh: MinHashLsh | None = None,
    tokenizer: SubwordTokenizer | None = None,
    distance_cap_floor: int = DISTANCE_CAP_FLOOR,
) -> list[RetrievedValue]:
    """Three-stage value retrieval per (keyword, text column).

    1. top-k distinct values by ascending edit distance (ties lexicographic),
       ignoring values farther than max(len(keyword), distance_cap_floor);
    2. optional banded-LSH prefilter comparing keyword and value subword
       tokens (one shared tokenizer covers values and column metadata);
    3. keep values whose embedding cosine with the keyword reaches the
       threshold (a threshold of -1 keeps everything).

    Results are ordered by (keyword index, document column order, rank).
    """
    column_values = load_column_values(db_file, doc)
    text_columns = [meta for meta in doc.columns() if meta.ref in column_values]
    if tokenizer is None:
        tokenizer = SubwordTokenizer()

    staged: list[tuple[int, ColumnRef, str, int]] = []
    for k_index, keyword in enumerate(keywords.keywords):
        cap = max(len(keyword), distance_cap_floor)
        keyword_tokens = tokenizer.tokenize(keyword)
        for meta in text_columns:
            ranked = top_k_by_distance(keyword, column_values[meta.ref], top_k, cap)
            if lsh is not None:
                ranked = [
                    (value, distance)
                    for value, distance in ranked
                    if lsh.candidate_match(keyword_tokens, tokenizer.tokenize(value))
                ]
            for value, distance in ranked:
                staged.append((k_index, meta.ref, value, distance))

    if not staged:
        return []

    cosines: list[float]
    if registry is not None:
        keyword_list = list(keywords.keywords)
        texts = keyword_list + [value for _k, _ref, value, _d in staged]
        vectors = registry.embed(texts)
        keyword_vecs = vectors[: len(keyword_list)]
        value_vecs = vectors[len(keyword_list) :]
        cosines = [keyword_vecs[k].cosine(vec) for (k, _ref, _v, _d), vec in zip(staged, value_vecs)]
    else:
        cosines = [1.0] * len(staged)

    out = []
    for (k_index, ref, value, distance), cos in zip(staged, cosines):
        if cos >= cosine_threshold:
            out.append(RetrievedValue(ref, value, distance, cos))
    return out


def build_retrieved_schema(
    scored: Sequence[ScoredColumn],
    values: Sequence[RetrievedValue],
    doc: SchemaDoc,
    top_k_cols: int = 5,
) -> SchemaSubset:
    """Union the per-keyword top columns, value-hit columns, and key closure."""
    cols: set[ColumnRef] = set()
    per_keyword: dict[str, int] = {}
    for hit in scored:
        taken = per_keyword.get(hit.keyword, 0)
        if taken < top_k_cols:
            cols.add(hit.ref)
            per_keyword[hit.keyword] = taken + 1
    cols.update(v.column for v in values)
    if cols:
        cols |= pf_key_closure(doc, cols)
    return SchemaSubset.closed(doc, cols, iteration_index=1)


def parse_column_refs(text: str, doc: SchemaDoc) -> frozenset[ColumnRef]:
    """Find table.column mentions of known columns in a model response."""
    lowered = text.lower()
    found: set[ColumnRef] = set()
    for meta in doc.columns():
        dotted = meta.ref.dotted().lower()
        start = 0
        while True:
            pos = lowered.find(dotted, start)
            if pos < 0:
                break
            before = lowered[pos - 1] if pos > 0 else " "
            after_idx = pos + len(dotted)
            after = lowered[after_idx] if after_idx < len(lowered) else " "
            if not (before.isalnum() or before == "_") and not (after.isalnum() or after == "_"):
                found.add(meta.ref)
                break
            start = pos + 1
    return frozenset(found)


@dataclass
class SelectionIteration:
    """Per-iteration trace of the column-selection loop."""

    index: int
    selected: frozenset[ColumnRef]
    key_closure: frozenset[ColumnRef]
    unparseable: bool


def select_columns(
    retrieved: SchemaSubset,
    question: str,
    evidence: str,
    iterations: int,
    registry: BackendRegistry,
    prompts: PromptLibrary,
    *,
    role: str = "schema_analyst",
    temperature: float = 0.0,
    max_tokens: int = 512,
    trace: list[SelectionIteration] | None = None,
) -> list[SchemaSubset]:
    """Iterative column selection over a shrinking retrieved pool.

    Each round asks the schema-analyst model to pick columns from the current
    pool, closes them over primary/foreign keys, unions with every previous
    round's subset, then removes the picked (non-key) columns from the pool.
    Later subsets therefore always contain earlier ones. A response naming no
    valid column contributes an empty pick; the round still emits the union
    of previous subsets.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    doc = retrieved.parent
    pool = set(retrieved.columns)
    union_prev: set[ColumnRef] = set()
    subsets: list[SchemaSubset] = []
    for i in range(1, iterations + 1):
        pool_subset = SchemaSubset(doc, frozenset(pool), iteration_index=i)
        prompt = prompts.render(
            "column_selection",
            schema=render_schema(doc, pool_subset),
            question=question,
            evidence=evidence,
        )
        response = registry.chat(
            ChatRequest(role, (("user", prompt),), temperature=temperature, max_tokens=max_tokens)
        )
        picked = parse_column_refs(response, doc) & frozenset(pool)
        closure = pf_key_closure(doc, picked)
        subset = SchemaSubset.closed(doc, union_prev | picked | closure, iteration_index=i)
        subsets.append(subset)
        if trace is not None:
            trace.append(SelectionIteration(i, picked, closure, unparseable=not picked))
        union_prev = set(subset.columns)
        pool -= picked - closure
    return subsets
