"""Multi-generator SQL candidate generation with a single self-refine retry.

Every (schema subset, generator) pair yields exactly one candidate: the
first response if it executes cleanly, otherwise the result of one
feedback-driven retry. Failures are never dropped; a candidate that could
not be produced at all is recorded with an empty SQL string and a non-ok
outcome so downstream accounting stays exact.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import BackendRegistry, ChatRequest
from .errors import BackendFailure, ConfigInvalid, ExtractionFailure
from .execution import ExecStatus, ExecutionOutcome, execute, render_feedback
from .prompts import PromptLibrary
from .schema import SchemaSubset, render_schema

_FENCE_RE = re.compile(r"```(?:sql)?\s*(.*?)```", re.IGNORECASE | re.DOTALL)
_STATEMENT_RE = re.compile(r"\b(select|with)\b", re.IGNORECASE)


@dataclass(frozen=True)
class GeneratorBinding:
    """One generator: a backend role plus its prompt template and quality rank."""

    generator_id: str
    backend_role: str
    prompt_template_id: str
    rank: int

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class CandidateSql:
    """One generated candidate with its execution outcome."""

    sql: str
    generator_id: str
    schema_index: int
    refined: bool
    outcome: ExecutionOutcome


def _first_statement(text: str) -> str:
    """Trim to the first statement: cut at the first semicolon outside quotes."""
    quote = None
    for i, ch in enumerate(text):
        if quote is not None:
            if ch == quote:
                quote = None
            continue
        if ch in ("'", '"', "`"):
            quote = ch
        elif ch == ";":
            return text[:i].strip()
    return text.strip()


def extract_sql(response: str) -> str:
    """Pull one SQL statement out of a chat response.

    Precedence: the last fenced code block, then the text from the first
    SELECT/WITH keyword onward, then the whole response.
    """
    blocks = _FENCE_RE.findall(response)
    if blocks:
        text = blocks[-1].strip()
    else:
        match = _STATEMENT_RE.search(response)
        text = response[match.start() :].strip() if match else response.strip()
    text = _first_statement(text)
    if not text:
        raise ExtractionFailure("no SQL statement found in response")
    return text


def generate_one(
    binding: GeneratorBinding,
    question: str,
    evidence: str,
    subset: SchemaSubset,
    db_file: str | Path,
    registry: BackendRegistry,
    prompts: PromptLibrary,
    *,
    refine_template_id: str = "refine",
    timeout_ms: int = 30_000,
    temperature: float = 0.1,
    max_tokens: int = 1024,
    demos: str = "",
) -> CandidateSql:
    """Produce one candidate for (generator, schema subset).

    The first response is executed; on any non-ok outcome (including a
    backend or extraction failure, recorded as an empty-SQL runtime error)
    exactly one self-refine call replaces the candidate with a new attempt
    carrying its own outcome.
    """
    schema_text = render_schema(subset.parent, subset)
    sql, outcome = _attempt(
        registry,
        binding,
        prompts.render(
            binding.prompt_template_id,
            schema=schema_text,
            question=question,
            evidence=evidence,
            demos=demos,
        ),
        db_file,
        timeout_ms,
        temperature,
        max_tokens,
    )
    if outcome.is_ok:
        return CandidateSql(sql, binding.generator_id, subset.iteration_index, False, outcome)

    refined_sql, refined_outcome = _attempt(
        registry,
        binding,
        prompts.render(
            refine_template_id,
            schema=schema_text,
            question=question,
            evidence=evidence,
            prev_sql=sql,
            exec_feedback=render_feedback(outcome),
        ),
        db_file,
        timeout_ms,
        temperature,
        max_tokens,
    )
    return CandidateSql(
        refined_sql, binding.generator_id, subset.iteration_index, True, refined_outcome
    )


def _attempt(
    registry: BackendRegistry,
    binding: GeneratorBinding,
    prompt: str,
    db_file: str | Path,
    timeout_ms: int,
    temperature: float,
    max_tokens: int,
) -> tuple[str, ExecutionOutcome]:
    request = ChatRequest(
        binding.backend_role, (("user", prompt),), temperature=temperature, max_tokens=max_tokens
    )
    try:
        response = registry.chat(request)
        sql = extract_sql(response)
    except (BackendFailure, ExtractionFailure) as exc:
        return "", ExecutionOutcome(
            ExecStatus.RUNTIME_ERROR, message=f"no candidate produced: {exc}"
        )
    return sql, execute(sql, db_file, timeout_ms)


def generate_all(
    bindings: Sequence[GeneratorBinding],
    question: str,
    evidence: str,
    subsets: Sequence[SchemaSubset],
    db_file: str | Path,
    registry: BackendRegistry,
    prompts: PromptLibrary,
    *,
    refine_template_id: str = "refine",
    timeout_ms: int = 30_000,
    temperature: float = 0.1,
    max_tokens: int = 1024,
    demos: str = "",
    workers: int = 1,
) -> list[CandidateSql]:
    """Run every generator over every schema subset.

    Emits exactly len(subsets) * len(bindings) candidates in deterministic
    order: schema-major, then generator rank. Generators run as independent
    lanes (one worker per generator, schemas in order within a lane), so a
    generator's scripted backend sees its calls in a fixed order even when
    lanes run concurrently.
    """
    if not bindings:
        raise ValueError("bindings must be non-empty")
    if not subsets:
        raise ValueError("subsets must be non-empty")
    ranks = sorted(b.rank for b in bindings)
    if ranks != list(range(1, len(bindings) + 1)):
        raise ConfigInvalid(f"generator ranks must be a permutation of 1..{len(bindings)}, got {ranks}")

    ordered = sorted(bindings, key=lambda b: b.rank)

    def lane(binding: GeneratorBinding) -> list[CandidateSql]:
        return [
            generate_one(
                binding,
                question,
                evidence,
                subset,
                db_file,
                registry,
                prompts,
                refine_template_id=refine_template_id,
                timeout_ms=timeout_ms,
                temperature=temperature,
                max_tokens=max_tokens,
                demos=demos,
            )
            for subset in subsets
        ]

    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(ordered))) as pool:
            lanes = list(pool.map(lane, ordered))
    else:
        lanes = [lane(binding) for binding in ordered]

    out: list[CandidateSql] = []
    for schema_pos in range(len(subsets)):
        for lane_result in lanes:
            out.append(lane_result[schema_pos])
    return out
