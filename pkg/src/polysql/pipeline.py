"""End-to-end orchestration: filter the schema, generate candidates, select.

A Pipeline owns one backend registry and prompt library built from a
validated config. Every stage emits machine-readable records; `ask` returns
a transcript dict that is byte-identical across runs for deterministic
(mock) backends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendRegistry
from .config import PipelineConfig, SCHEMA_ANALYST_ROLE, SELECTOR_ROLE
from .evaluation import BenchItem, load_dataset
from .execution import execute
from .generation import CandidateSql, generate_all
from .linking import (
    KeywordSet,
    RetrievedValue,
    ScoredColumn,
    SelectionIteration,
    build_retrieved_schema,
    extract_keywords,
    retrieve_values,
    score_columns,
    select_columns,
)
from .prompts import PromptLibrary
from .schema import SchemaDoc, SchemaSubset, introspect
from .selection import SelectionResult, select_final
from .textmatch import MinHashLsh


@dataclass
class LinkResult:
    """Everything the schema-filter stage produced for one question."""

    keywords: KeywordSet
    scored: list[ScoredColumn]
    values: list[RetrievedValue]
    retrieved: SchemaSubset
    subsets: list[SchemaSubset]
    iterations: list[SelectionIteration] = field(default_factory=list)

    def report_record(self, db_id: str) -> dict:
        top_per_keyword: dict[str, list[dict]] = {}
        for hit in self.scored:
            bucket = top_per_keyword.setdefault(hit.keyword, [])
            if len(bucket) < 10:
                bucket.append({"column": hit.ref.dotted(), "score": round(hit.score, 9)})
        return {
            "db_id": db_id,
            "question": self.keywords.source_question,
            "evidence": self.keywords.source_evidence,
            "keywords": list(self.keywords.keywords),
            "columns": top_per_keyword,
            "values": [
                {
                    "column": v.column.dotted(),
                    "value": v.value_text,
                    "edit_distance": v.edit_distance,
                    "cosine": round(v.cosine, 9),
                }
                for v in self.values
            ],
            "retrieved": sorted(r.dotted() for r in self.retrieved.columns),
            "subsets": [sorted(r.dotted() for r in s.columns) for s in self.subsets],
        }


@dataclass
class AskResult:
    sql: str
    link: LinkResult
    candidates: list[CandidateSql]
    selection: SelectionResult

    def transcript(self, db_id: str, emit_timings: bool = False) -> dict:
        candidates = []
        for c in self.candidates:
            record = {
                "generator_id": c.generator_id,
                "schema_index": c.schema_index,
                "refined": c.refined,
                "sql": c.sql,
                "status": c.outcome.status.value,
                "message": c.outcome.message,
            }
            if emit_timings:
                record["elapsed_ms"] = c.outcome.elapsed_ms
            candidates.append(record)
        report = self.selection.report
        return {
            "db_id": db_id,
            "question": self.link.keywords.source_question,
            "evidence": self.link.keywords.source_evidence,
            "keywords": list(self.link.keywords.keywords),
            "subsets": [sorted(r.dotted() for r in s.columns) for s in self.link.subsets],
            "candidates": candidates,
            "selection": {
                "branch": report.branch,
                "cluster_sizes": report.cluster_sizes,
                "emitted_indexes": report.emitted_indexes,
                "chosen_index": report.chosen_index,
                "selector_fallback": report.selector_fallback,
                "backend_failed": report.backend_failed,
                "degenerate": report.degenerate,
            },
            "sql": self.sql,
        }


class Pipeline:
    """Question-to-SQL pipeline bound to one configuration."""

    def __init__(self, config: PipelineConfig, registry: BackendRegistry | None = None):
        config.validate()
        self.config = config
        self.registry = registry if registry is not None else config.build_registry()
        self.prompts: PromptLibrary = config.prompt_library()
        self._docs: dict[str, SchemaDoc] = {}
        self._demo_pool: list[BenchItem] | None = None

    def doc_for(self, db_file: str | Path) -> SchemaDoc:
        key = str(Path(db_file).absolute())
        if key not in self._docs:
            self._docs[key] = introspect(db_file, sample_cap=self.config.sample_cap)
        return self._docs[key]

    def _lsh(self) -> MinHashLsh | None:
        retrieval = self.config.retrieval
        if not retrieval.lsh_enabled:
            return None
        return MinHashLsh(
            permutations=retrieval.lsh_permutations,
            bands=retrieval.lsh_bands,
            rows_per_band=retrieval.lsh_rows_per_band,
        )

    def link(self, db_file: str | Path, question: str, evidence: str = "") -> LinkResult:
        """Schema filter: keywords, column scores, value hits, nested subsets."""
        config = self.config
        doc = self.doc_for(db_file)
        keywords = extract_keywords(
            question,
            evidence,
            self.registry,
            self.prompts,
            role=SCHEMA_ANALYST_ROLE,
            temperature=config.analyst_temperature,
        )
        scored = score_columns(keywords, doc, self.registry)
        values = retrieve_values(
            keywords,
            db_file,
            doc,
            self.registry,
            top_k=config.retrieval.top_k_values,
            cosine_threshold=config.retrieval.value_cosine_threshold,
            lsh=self._lsh(),
            distance_cap_floor=config.retrieval.distance_cap_floor,
        )
        retrieved = build_retrieved_schema(scored, values, doc, config.retrieval.top_k_columns)
        iterations: list[SelectionIteration] = []
        subsets = select_columns(
            retrieved,
            question,
            evidence,
            config.schema_iterations,
            self.registry,
            self.prompts,
            role=SCHEMA_ANALYST_ROLE,
            temperature=config.analyst_temperature,
            trace=iterations,
        )
        return LinkResult(keywords, scored, values, retrieved, subsets, iterations)

    def _demos_text(self, question: str) -> str:
        """Nearest-neighbor demonstrations for in-context-learning templates."""
        config = self.config
        uses_demos = any(
            "{demos}" in self.prompts.get(b.prompt_template_id) for b in config.generators
        )
        if not uses_demos:
            return ""
        if self._demo_pool is None:
            if config.icl.pool_path:
                pool_path = config.resolve(config.icl.pool_path)
                self._demo_pool = load_dataset(pool_path, config.icl.pool_flavor)
            else:
                self._demo_pool = []
        if not self._demo_pool:
            return ""
        texts = [question] + [item.question for item in self._demo_pool]
        vectors = self.registry.embed(texts)
        scored = sorted(
            zip((v.cosine(vectors[0]) for v in vectors[1:]), range(len(self._demo_pool))),
            key=lambda pair: (-pair[0], pair[1]),
        )
        blocks = []
        for _cos, index in scored[: config.icl.shots]:
            item = self._demo_pool[index]
            blocks.append(f"Q: {item.question}\nSQL: {item.gold_sql}")
        return "\n\n".join(blocks)

    def generate(
        self,
        db_file: str | Path,
        question: str,
        evidence: str,
        subsets: list[SchemaSubset],
    ) -> list[CandidateSql]:
        config = self.config
        return generate_all(
            config.generators,
            question,
            evidence,
            subsets,
            db_file,
            self.registry,
            self.prompts,
            timeout_ms=config.exec_timeout_ms,
            temperature=config.generator_temperature,
            max_tokens=config.max_tokens,
            demos=self._demos_text(question),
            workers=config.workers,
        )

    def select(
        self,
        candidates: list[CandidateSql],
        subsets: list[SchemaSubset],
        question: str,
        evidence: str,
    ) -> SelectionResult:
        config = self.config
        ranks = {b.generator_id: b.rank for b in config.generators}
        return select_final(
            candidates,
            subsets,
            question,
            evidence,
            ranks,
            config.selector_policy,
            registry=self.registry,
            prompts=self.prompts,
            selector_role=SELECTOR_ROLE,
            mode=config.equivalence_mode,  # type: ignore[arg-type]
        )

    def ask(self, db_file: str | Path, question: str, evidence: str = "") -> AskResult:
        """Full pipeline for one question; returns the chosen SQL and trace."""
        link = self.link(db_file, question, evidence)
        candidates = self.generate(db_file, question, evidence, link.subsets)
        selection = self.select(candidates, link.subsets, question, evidence)
        return AskResult(selection.candidate.sql, link, candidates, selection)

    def execute_sql(self, sql: str, db_file: str | Path):
        return execute(sql, db_file, self.config.exec_timeout_ms)
