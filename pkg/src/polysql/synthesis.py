"""Training-corpus synthesis: multi-task samples, selection samples, rewrites.

Builds instruction-tuning records from (question, evidence, reference SQL)
datasets: the forward text-to-SQL task plus three alignment tasks (question
inference, evidence inference over a distractor pool, and self-refine over a
deliberately corrupted query), contrastive selection samples with balanced
correct-answer positions, and style rewrites gated on execution equivalence.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .backends import BackendRegistry, ChatRequest
from .errors import NoApplicableMutation
from .evaluation import BenchItem
from .execution import Mode, ExecutionOutcome, equivalent, execute, render_feedback
from .generation import CandidateSql, extract_sql
from .prompts import PromptLibrary
from .schema import SchemaDoc, render_schema
from .selection import deformalize

TASKS = ("text2sql", "question_inference", "evidence_inference", "self_refine", "selection")

_MUTATION_SEED_STRIDE = 1_000_003


@dataclass
class TrainingSample:
    """One instruction-tuning record."""

    task: str
    prompt: str
    target: str
    meta: dict

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.prompt or not self.target:
            raise ValueError("prompt and target must be non-empty")


@dataclass(frozen=True)
class TaskMix:
    """Relative share of each multi-task sample kind."""

    text2sql: float = 0.4
    question_inference: float = 0.2
    evidence_inference: float = 0.2
    self_refine: float = 0.2

    def apportion(self, n: int) -> dict[str, int]:
        """Largest-remainder apportionment of n samples over the four tasks."""
        weights = {
            "text2sql": self.text2sql,
            "question_inference": self.question_inference,
            "evidence_inference": self.evidence_inference,
            "self_refine": self.self_refine,
        }
        total = sum(weights.values())
        if total <= 0:
            raise ValueError("task mix must have positive total weight")
        exact = {task: n * w / total for task, w in weights.items()}
        counts = {task: int(v) for task, v in exact.items()}
        remainder = n - sum(counts.values())
        by_fraction = sorted(exact.items(), key=lambda kv: (-(kv[1] - int(kv[1])), kv[0]))
        for task, _frac in by_fraction[:remainder]:
            counts[task] += 1
        return counts


# --- seeded SQL corruption -------------------------------------------------

_AGGREGATES = ("COUNT", "SUM", "AVG", "MIN", "MAX")
_AGG_RE = re.compile(r"\b(count|sum|avg|min|max)\s*\(", re.IGNORECASE)
_NUMBER_RE = re.compile(r"(?<![\w.])(\d+)(?![\w.])")
_DISTINCT_RE = re.compile(r"\bdistinct\s+", re.IGNORECASE)
_FROM_RE = re.compile(r"\bfrom\b", re.IGNORECASE)
_QUALIFIED_RE = re.compile(r"\b([A-Za-z_]\w*)\.([A-Za-z_]\w*)\b")
_ON_RE = re.compile(r"\bon\b\s+", re.IGNORECASE)


def _swap_aggregate(sql: str, rng: random.Random) -> str | None:
    matches = list(_AGG_RE.finditer(sql))
    if not matches:
        return None
    match = rng.choice(matches)
    current = match.group(1).upper()
    replacement = rng.choice([a for a in _AGGREGATES if a != current])
    return sql[: match.start(1)] + replacement + sql[match.end(1) :]


def _perturb_number(sql: str, rng: random.Random) -> str | None:
    matches = list(_NUMBER_RE.finditer(sql))
    if not matches:
        return None
    match = rng.choice(matches)
    value = int(match.group(1))
    delta = rng.choice((-1, 1))
    if value + delta < 0:
        delta = 1
    return sql[: match.start(1)] + str(value + delta) + sql[match.end(1) :]


def _remove_distinct(sql: str, rng: random.Random) -> str | None:
    matches = list(_DISTINCT_RE.finditer(sql))
    if not matches:
        return None
    match = rng.choice(matches)
    return sql[: match.start()] + sql[match.end() :]


def _swap_sibling_column(sql: str, rng: random.Random) -> str | None:
    by_table: dict[str, list[str]] = {}
    for table, column in _QUALIFIED_RE.findall(sql):
        cols = by_table.setdefault(table, [])
        if column not in cols:
            cols.append(column)
    candidates = [(t, cols) for t, cols in sorted(by_table.items()) if len(cols) >= 2]
    if not candidates:
        return None
    table, cols = rng.choice(candidates)
    source = rng.choice(cols)
    target = rng.choice([c for c in cols if c != source])
    pattern = re.compile(rf"\b{re.escape(table)}\.{re.escape(source)}\b")
    match = pattern.search(sql)
    if not match:
        return None
    return sql[: match.start()] + f"{table}.{target}" + sql[match.end() :]


def _drop_join_predicate(sql: str, rng: random.Random) -> str | None:
    match = _ON_RE.search(sql)
    if not match:
        return None
    start = match.end()
    tail = sql[start:]
    boundary = re.search(
        r"\b(where|group|order|limit|having|join|inner|left|right|cross|union)\b",
        tail,
        re.IGNORECASE,
    )
    clause = tail[: boundary.start()] if boundary else tail
    conjuncts = re.split(r"\band\b", clause, flags=re.IGNORECASE)
    if len(conjuncts) >= 2:
        kept = conjuncts[1:]
        rebuilt = "AND".join(kept)
        return sql[:start] + rebuilt + (tail[boundary.start() :] if boundary else "")
    # single predicate: drop the whole ON clause (bare join)
    on_start = match.start()
    end = start + (boundary.start() if boundary else len(tail))
    return sql[:on_start] + sql[end:]


_MUTATIONS: tuple[tuple[str, Callable[[str, random.Random], str | None]], ...] = (
    ("swap_sibling_column", _swap_sibling_column),
    ("drop_join_predicate", _drop_join_predicate),
    ("swap_aggregate", _swap_aggregate),
    ("perturb_number", _perturb_number),
    ("remove_distinct", _remove_distinct),
)


def mutate_sql(gold: str, seed: int) -> str:
    """Apply one seeded, deterministic corruption to a query.

    The catalog: swap a column with a same-table sibling, drop one join
    predicate, swap an aggregate function, perturb a numeric literal by one,
    remove DISTINCT. Statements without a FROM clause are too simple to
    corrupt meaningfully and raise NoApplicableMutation; otherwise, when none
    of the preferred mutations applies, a numeric literal perturbation is the
    fallback.
    """
    if not _FROM_RE.search(gold):
        raise NoApplicableMutation("statement has no FROM clause")
    rng = random.Random(seed)
    order = list(_MUTATIONS)
    rng.shuffle(order)
    for _name, mutation in order:
        mutated = mutation(gold, rng)
        if mutated is not None and mutated != gold:
            return mutated
    fallback = _perturb_number(gold, rng)
    if fallback is not None and fallback != gold:
        return fallback
    raise NoApplicableMutation("no mutation changed the statement")


def mutation_name(gold: str, seed: int) -> str:
    """Name of the mutation mutate_sql(gold, seed) applies (for provenance)."""
    if not _FROM_RE.search(gold):
        raise NoApplicableMutation("statement has no FROM clause")
    rng = random.Random(seed)
    order = list(_MUTATIONS)
    rng.shuffle(order)
    for name, mutation in order:
        mutated = mutation(gold, rng)
        if mutated is not None and mutated != gold:
            return name
    fallback = _perturb_number(gold, rng)
    if fallback is not None and fallback != gold:
        return "perturb_number"
    raise NoApplicableMutation("no mutation changed the statement")


# --- multi-task corpus -----------------------------------------------------


@dataclass
class SynthResult:
    samples: list[TrainingSample]
    skipped: list[tuple[int, str]] = field(default_factory=list)


def synth_multitask(
    items: Sequence[BenchItem],
    docs: Mapping[str, SchemaDoc],
    db_files: Mapping[str, str | Path],
    prompts: PromptLibrary,
    *,
    mix: TaskMix = TaskMix(),
    seed: int = 0,
    distractors: int = 3,
    timeout_ms: int = 30_000,
    mode: Mode = "set",
    max_mutation_attempts: int = 5,
) -> SynthResult:
    """Build the four-task instruction corpus from reference pairs.

    Each input item receives one task so that task counts honor the mix
    (within rounding). Items whose reference SQL fails to execute are
    skipped; self-refine items whose corruption cannot be made inequivalent
    within the attempt budget are skipped too.
    """
    counts = mix.apportion(len(items))
    assignments: list[str] = []
    for task in ("text2sql", "question_inference", "evidence_inference", "self_refine"):
        assignments.extend([task] * counts[task])
    random.Random(seed).shuffle(assignments)

    evidence_pool = sorted({item.evidence for item in items if item.evidence})
    result = SynthResult(samples=[])
    for item, task in zip(items, assignments):
        doc = docs[item.db_id]
        db_file = db_files[item.db_id]
        gold_outcome = execute(item.gold_sql, db_file, timeout_ms)
        if not gold_outcome.is_ok:
            result.skipped.append((item.question_id, f"gold_{gold_outcome.status.value}"))
            continue
        schema_text = render_schema(doc)
        meta = {"question_id": item.question_id, "db_id": item.db_id, "task": task}

        if task == "evidence_inference" and not item.evidence:
            task = "text2sql"
            meta["task"] = task
            meta["reassigned_from"] = "evidence_inference"

        if task == "text2sql":
            prompt = prompts.render(
                "generate_default", schema=schema_text, question=item.question, evidence=item.evidence
            )
            result.samples.append(TrainingSample(task, prompt, item.gold_sql, meta))
        elif task == "question_inference":
            prompt = prompts.render(
                "question_inference", schema=schema_text, sql=item.gold_sql, evidence=item.evidence
            )
            result.samples.append(TrainingSample(task, prompt, item.question, meta))
        elif task == "evidence_inference":
            rng = random.Random(f"{seed}:{item.question_id}:evidence")
            pool = [e for e in evidence_pool if e != item.evidence]
            chosen = rng.sample(pool, min(distractors, len(pool)))
            options = chosen + [item.evidence]
            rng.shuffle(options)
            listing = "\n".join(f"{i + 1}. {option}" for i, option in enumerate(options))
            prompt = prompts.render(
                "evidence_inference",
                schema=schema_text,
                question=item.question,
                sql=item.gold_sql,
                options=listing,
            )
            meta["options"] = options
            meta["correct_option"] = options.index(item.evidence) + 1
            result.samples.append(TrainingSample(task, prompt, item.evidence, meta))
        else:  # self_refine
            sample = _self_refine_sample(
                item,
                schema_text,
                db_file,
                gold_outcome,
                prompts,
                seed=seed,
                timeout_ms=timeout_ms,
                mode=mode,
                max_attempts=max_mutation_attempts,
                meta=meta,
            )
            if sample is None:
                result.skipped.append((item.question_id, "mutation_failed"))
            else:
                result.samples.append(sample)
    return result


def _self_refine_sample(
    item: BenchItem,
    schema_text: str,
    db_file: str | Path,
    gold_outcome: ExecutionOutcome,
    prompts: PromptLibrary,
    *,
    seed: int,
    timeout_ms: int,
    mode: Mode,
    max_attempts: int,
    meta: dict,
) -> TrainingSample | None:
    for attempt in range(max_attempts):
        mutation_seed = seed * _MUTATION_SEED_STRIDE + item.question_id * 31 + attempt
        try:
            mutated = mutate_sql(item.gold_sql, mutation_seed)
        except NoApplicableMutation:
            return None
        if mutated == item.gold_sql:
            continue
        mutated_outcome = execute(mutated, db_file, timeout_ms)
        if equivalent(mutated_outcome, gold_outcome, mode):
            continue
        prompt = prompts.render(
            "refine",
            schema=schema_text,
            question=item.question,
            evidence=item.evidence,
            prev_sql=mutated,
            exec_feedback=render_feedback(mutated_outcome),
        )
        meta = dict(meta)
        meta["mutation"] = mutation_name(item.gold_sql, mutation_seed)
        meta["mutated_sql"] = mutated
        return TrainingSample("self_refine", prompt, item.gold_sql, meta)
    return None


# --- selection corpus ------------------------------------------------------


@dataclass
class BalanceReport:
    """Counts backing the three balance guarantees of the selection corpus."""

    position_counts: dict[int, int] = field(default_factory=dict)
    combination_counts: dict[tuple[int, int], int] = field(default_factory=dict)
    target_generator_counts: dict[str, int] = field(default_factory=dict)

    def position_within_tolerance(self, tolerance: float) -> bool:
        counts = list(self.position_counts.values())
        if not counts:
            return True
        total = sum(counts)
        uniform = total / len(counts)
        return all(abs(c - uniform) / uniform <= tolerance for c in counts)


@dataclass
class SelectionSynthResult:
    samples: list[TrainingSample]
    skipped: list[tuple[int, str]] = field(default_factory=list)
    balance: BalanceReport = field(default_factory=BalanceReport)
    tolerance: float = 0.05

    def within_tolerance(self) -> bool:
        return self.balance.position_within_tolerance(self.tolerance)


def synth_selection(
    items: Sequence[BenchItem],
    candidate_fn: Callable[[BenchItem], Sequence[CandidateSql]],
    db_files: Mapping[str, str | Path],
    prompts: PromptLibrary,
    *,
    n_options: int = 5,
    seed: int = 0,
    timeout_ms: int = 30_000,
    mode: Mode = "set",
    max_distractor_attempts: int = 5,
    balance_tolerance: float = 0.05,
) -> SelectionSynthResult:
    """Build contrastive selection samples, one per usable question.

    Candidates come from the supplied pipeline handle, are labelled by
    execution equivalence to the reference, and are listed deformalized in a
    seeded order. The correct option's position cycles through a seeded
    permutation per block of samples, so position frequencies are uniform by
    construction; the target generator and the (correct, incorrect)
    combination are balanced greedily. Questions with no correct candidate
    are skipped and counted. When real incorrect candidates run short,
    distractors are corrupted copies of the reference, accepted only if they
    execute to a different result.
    """
    result = SelectionSynthResult(samples=[], tolerance=balance_tolerance)
    balance = result.balance
    emitted = 0
    block_perm: list[int] = []

    for item in items:
        db_file = db_files[item.db_id]
        gold_outcome = execute(item.gold_sql, db_file, timeout_ms)
        if not gold_outcome.is_ok:
            result.skipped.append((item.question_id, f"gold_{gold_outcome.status.value}"))
            continue

        candidates = candidate_fn(item)
        corrects: list[CandidateSql] = []
        incorrects: list[CandidateSql] = []
        seen_texts: set[str] = set()
        for candidate in candidates:
            text = deformalize(candidate.sql)
            if not text or text in seen_texts:
                continue
            seen_texts.add(text)
            if candidate.outcome.is_ok and equivalent(candidate.outcome, gold_outcome, mode):
                corrects.append(candidate)
            else:
                incorrects.append(candidate)
        if not corrects:
            result.skipped.append((item.question_id, "no_correct_candidate"))
            continue

        rng = random.Random(f"{seed}:{item.question_id}:selection")

        target = min(
            corrects,
            key=lambda c: (balance.target_generator_counts.get(c.generator_id, 0), c.generator_id),
        )

        # combination balancing: how many correct options to include
        max_correct = min(len(corrects), n_options - 1) if len(corrects) > 1 else 1
        feasible = list(range(1, max_correct + 1))
        n_correct = min(
            feasible,
            key=lambda c: (balance.combination_counts.get((c, n_options - c), 0), c),
        )
        extra_correct = [c for c in corrects if c is not target]
        rng.shuffle(extra_correct)
        chosen_correct = [target] + extra_correct[: n_correct - 1]

        needed_incorrect = n_options - len(chosen_correct)
        pool_incorrect = list(incorrects)
        rng.shuffle(pool_incorrect)
        chosen_incorrect = pool_incorrect[:needed_incorrect]
        attempt = 0
        while len(chosen_incorrect) < needed_incorrect and attempt < max_distractor_attempts:
            mutation_seed = seed * _MUTATION_SEED_STRIDE + item.question_id * 131 + attempt
            attempt += 1
            try:
                mutated = mutate_sql(item.gold_sql, mutation_seed)
            except NoApplicableMutation:
                break
            text = deformalize(mutated)
            if not text or text in seen_texts:
                continue
            mutated_outcome = execute(mutated, db_file, timeout_ms)
            if equivalent(mutated_outcome, gold_outcome, mode):
                continue
            seen_texts.add(text)
            chosen_incorrect.append(
                CandidateSql(mutated, "distractor", 1, False, mutated_outcome)
            )
        options = chosen_correct + chosen_incorrect
        if len(options) < 2:
            result.skipped.append((item.question_id, "insufficient_options"))
            continue

        if emitted % n_options == 0:
            block_perm = list(range(n_options))
            random.Random(f"{seed}:{emitted // n_options}:block").shuffle(block_perm)
        position = block_perm[emitted % n_options] % len(options)

        others = [c for c in options if c is not target]
        rng.shuffle(others)
        arranged = others[:position] + [target] + others[position:]

        deformalized = [deformalize(c.sql) for c in arranged]
        listing = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(deformalized))
        schema_text = ""
        prompt = prompts.render(
            "selector",
            question=item.question,
            evidence=item.evidence,
            schema=schema_text,
            candidates=listing,
        )
        correct_position = position + 1
        meta = {
            "question_id": item.question_id,
            "db_id": item.db_id,
            "task": "selection",
            "options": deformalized,
            "option_generators": [c.generator_id for c in arranged],
            "correct_position": correct_position,
            "n_correct": len(chosen_correct),
            "n_incorrect": len(chosen_incorrect),
            "target_generator": target.generator_id,
        }
        result.samples.append(TrainingSample("selection", prompt, str(correct_position), meta))

        emitted += 1
        balance.position_counts[correct_position] = (
            balance.position_counts.get(correct_position, 0) + 1
        )
        combo = (len(chosen_correct), len(chosen_incorrect))
        balance.combination_counts[combo] = balance.combination_counts.get(combo, 0) + 1
        balance.target_generator_counts[target.generator_id] = (
            balance.target_generator_counts.get(target.generator_id, 0) + 1
        )
    return result


# --- execution-gated style rewrites ---------------------------------------


@dataclass
class ReformatResult:
    sql: str
    accepted: bool
    style: str
    original: str


def reformat_sql(
    gold: str,
    style: str,
    db_file: str | Path,
    registry: BackendRegistry,
    prompts: PromptLibrary,
    *,
    role: str = "schema_analyst",
    timeout_ms: int = 30_000,
    mode: Mode = "set",
    temperature: float = 0.0,
    max_tokens: int = 1024,
) -> ReformatResult:
    """Rewrite a query in the requested style, keeping it only if equivalent.

    The rewrite must execute to the same result as the original on the source
    database; otherwise the original is kept and the rejection is recorded.
    """
    if style not in ("complex_pattern", "standardized"):
        raise ValueError(f"unknown reformat style {style!r}")
    template_id = "reformat_complex_pattern" if style == "complex_pattern" else "reformat_standardized"
    prompt = prompts.render(template_id, sql=gold)
    response = registry.chat(
        ChatRequest(role, (("user", prompt),), temperature=temperature, max_tokens=max_tokens)
    )
    try:
        rewritten = extract_sql(response)
    except Exception:
        return ReformatResult(gold, False, style, gold)
    gold_outcome = execute(gold, db_file, timeout_ms)
    new_outcome = execute(rewritten, db_file, timeout_ms)
    if equivalent(new_outcome, gold_outcome, mode):
        return ReformatResult(rewritten, True, style, gold)
    return ReformatResult(gold, False, style, gold)
