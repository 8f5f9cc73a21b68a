"""Candidate selection: consistency clustering, reorganization, final choice.

Candidates that executed cleanly are clustered by execution-result
equivalence. Clusters are ordered by size (largest first) and candidates
within a cluster by generator quality. When the largest cluster holds at
least half of the clustered candidates, every candidate is shown to the
selection model in that order; otherwise one representative per cluster (its
shortest member) is shown. Placing the consensus first exploits selection
models' preference for early options.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backends import BackendRegistry, ChatRequest
from .errors import BackendFailure, EmptyClusterSet
from .execution import Mode, ResultKey, canonicalize, key_for_canonical
from .generation import CandidateSql, extract_sql
from .prompts import PromptLibrary
from .schema import SchemaSubset, render_schema

SQL_KEYWORDS = frozenset(
    """select from where group by having order limit offset join inner left right full
    outer cross natural on using as and or not in exists like glob between union all
    distinct case when then else end with recursive is null asc desc intersect except
    values cast collate avg count sum min max total group_concat coalesce ifnull nullif
    abs round length substr upper lower trim replace instr date time datetime strftime
    julianday current_date current_time current_timestamp""".split()
)

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT_RE = re.compile(r"\d+")


def _segments(sql: str) -> list[tuple[bool, str]]:
    """Split SQL into (is_quoted, text) segments, dropping comments.

    Quote pairs handled: single, double, backtick, and [bracket] identifiers.
    Doubled quote characters inside a quoted span stay inside it.
    """
    out: list[tuple[bool, str]] = []
    plain: list[str] = []
    i = 0
    n = len(sql)
    while i < n:
        ch = sql[i]
        if ch in ("'", '"', "`") or ch == "[":
            closer = "]" if ch == "[" else ch
            j = i + 1
            while j < n:
                if sql[j] == closer:
                    if closer != "]" and j + 1 < n and sql[j + 1] == closer:
                        j += 2
                        continue
                    j += 1
                    break
                j += 1
            else:
                j = n
            if plain:
                out.append((False, "".join(plain)))
                plain = []
            out.append((True, sql[i:j]))
            i = j
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end < 0 else end + 1
            plain.append(" ")
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end < 0 else end + 2
            plain.append(" ")
        else:
            plain.append(ch)
            i += 1
    if plain:
        out.append((False, "".join(plain)))
    return out


def deformalize(sql: str) -> str:
    """Normalize SQL surface style so candidates differ only semantically.

    Strips comments, collapses whitespace to single spaces, uppercases
    keywords, preserves quoted literals verbatim, and drops any trailing
    semicolon. Idempotent; non-SQL text passes through whitespace-collapsed.
    """
    pieces = []
    for quoted, text in _segments(sql):
        if quoted:
            pieces.append(text)
            continue
        text = re.sub(r"\s+", " ", text)
        text = _WORD_RE.sub(
            lambda m: m.group(0).upper() if m.group(0).lower() in SQL_KEYWORDS else m.group(0),
            text,
        )
        pieces.append(text)
    result = "".join(pieces).strip()
    while result.endswith(";"):
        result = result[:-1].rstrip()
    return result


def shortness_key(candidate: CandidateSql) -> tuple[int, str]:
    """Sort key for the shortest-SQL rule: deformalized length, then text."""
    text = deformalize(candidate.sql)
    return (len(text), text)


@dataclass(frozen=True)
class Cluster:
    """Candidates whose execution results are pairwise equivalent."""

    key: ResultKey
    members: tuple[CandidateSql, ...]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    total_candidates: int


def cluster_candidates(candidates: Sequence[CandidateSql], mode: Mode = "set") -> ClusterSet:
    """Group ok candidates by result equivalence; failed candidates are excluded.

    Fingerprint collisions cannot merge clusters: digest hits are verified
    against the full canonical form.
    """
    canon_forms: list[tuple[tuple[str, ...], ...]] = []
    members: list[list[CandidateSql]] = []
    keys: list[ResultKey] = []
    by_digest: dict[str, list[int]] = {}
    for candidate in candidates:
        if not candidate.outcome.is_ok:
            continue
        canon = canonicalize(candidate.outcome.rows, mode)
        key = key_for_canonical(canon, mode)
        placed = False
        for idx in by_digest.get(key.digest, []):
            if canon_forms[idx] == canon:
                members[idx].append(candidate)
                placed = True
                break
        if not placed:
            by_digest.setdefault(key.digest, []).append(len(canon_forms))
            canon_forms.append(canon)
            members.append([candidate])
            keys.append(key)
    clusters = tuple(Cluster(k, tuple(m)) for k, m in zip(keys, members))
    return ClusterSet(clusters, sum(c.size for c in clusters))


def majority_branch(cluster_set: ClusterSet) -> bool:
    """True when the largest cluster holds >= ceil(total/2) candidates."""
    if not cluster_set.clusters:
        raise EmptyClusterSet("no clusters to inspect")
    largest = max(c.size for c in cluster_set.clusters)
    return largest >= math.ceil(cluster_set.total_candidates / 2)


def _best_rank(cluster: Cluster, ranks: Mapping[str, int]) -> int:
    return min(ranks.get(m.generator_id, len(ranks) + 1) for m in cluster.members)


def shortest_member(members: Sequence[CandidateSql], ranks: Mapping[str, int]) -> CandidateSql:
    """Shortest deformalized candidate; full tie-break is (length, text,
    generator rank, position), so the pick is deterministic even when two
    candidates deformalize to identical text."""
    default = len(ranks) + 1
    return min(
        enumerate(members),
        key=lambda pair: shortness_key(pair[1]) + (ranks.get(pair[1].generator_id, default), pair[0]),
    )[1]


def sort_members(cluster: Cluster, ranks: Mapping[str, int]) -> tuple[CandidateSql, ...]:
    """Intra-group order: generator rank ascending, stable on insertion order."""
    default = len(ranks) + 1
    return tuple(sorted(cluster.members, key=lambda m: ranks.get(m.generator_id, default)))


def order_clusters(cluster_set: ClusterSet, ranks: Mapping[str, int]) -> list[Cluster]:
    """Inter-group order: size desc, then best member rank, then shortest SQL.

    Remaining ties keep first-seen cluster order. Members stay in insertion
    order; emission applies :func:`sort_members` separately.
    """
    if not cluster_set.clusters:
        raise EmptyClusterSet("no clusters to order")
    indexed = sorted(
        enumerate(cluster_set.clusters),
        key=lambda pair: (
            -pair[1].size,
            _best_rank(pair[1], ranks),
            min(shortness_key(m) for m in pair[1].members),
            pair[0],
        ),
    )
    return [cluster for _pos, cluster in indexed]


def reorganize(cluster_set: ClusterSet, ranks: Mapping[str, int]) -> list[CandidateSql]:
    """Order candidates for the selection model.

    Majority branch (largest cluster holds at least half of the clustered
    candidates): emit every member of every cluster, clusters by size,
    members by generator rank. Otherwise emit one representative per
    cluster, its shortest deformalized member.
    """
    ordered = order_clusters(cluster_set, ranks)
    if majority_branch(cluster_set):
        return [member for cluster in ordered for member in sort_members(cluster, ranks)]
    return [shortest_member(cluster.members, ranks) for cluster in ordered]


def schema_union(subsets: Sequence[SchemaSubset]) -> SchemaSubset:
    """Union of all column sets across subsets, against their shared parent."""
    if not subsets:
        raise ValueError("subsets must be non-empty")
    parent = subsets[0].parent
    columns: set = set()
    for subset in subsets:
        if subset.parent is not parent and subset.parent != parent:
            raise ValueError("subsets must share one parent document")
        columns |= subset.columns
    return SchemaSubset.closed(parent, columns, max(s.iteration_index for s in subsets))


def parse_selector_choice(response: str, emitted: Sequence[CandidateSql]) -> int | None:
    """Parse a selector response into a 0-based index into the emitted list.

    Accepts a 1-based index anywhere in the response, or a free-text SQL
    answer matched to a candidate by deformalized equality.
    """
    match = _INT_RE.search(response)
    if match:
        value = int(match.group(0))
        if 1 <= value <= len(emitted):
            return value - 1
    texts = []
    texts.append(deformalize(response))
    try:
        texts.append(deformalize(extract_sql(response)))
    except Exception:
        pass
    for text in texts:
        for i, candidate in enumerate(emitted):
            if text and deformalize(candidate.sql) == text:
                return i
    return None


@dataclass
class SelectionReport:
    """Observability record for one selection run."""

    branch: str  # unanimous | degenerate | majority | minority
    cluster_sizes: list[int] = field(default_factory=list)
    emitted_indexes: list[int] = field(default_factory=list)
    chosen_index: int = -1
    selector_fallback: bool = False
    backend_failed: bool = False
    degenerate: bool = False
    selector_response: str = ""


@dataclass
class SelectionResult:
    candidate: CandidateSql
    report: SelectionReport


def select_final(
    candidates: Sequence[CandidateSql],
    subsets: Sequence[SchemaSubset],
    question: str,
    evidence: str,
    ranks: Mapping[str, int],
    policy: str = "model",
    *,
    registry: BackendRegistry | None = None,
    prompts: PromptLibrary | None = None,
    selector_role: str = "selector",
    template_id: str = "selector",
    mode: Mode = "set",
    temperature: float = 0.0,
    max_tokens: int = 64,
) -> SelectionResult:
    """Choose the final SQL from a candidate list.

    A single consistent cluster short-circuits to its shortest member; if no
    candidate executed cleanly the shortest of all candidates is returned and
    flagged degenerate. Otherwise the reorganized list goes to the selection
    model ("model" policy) or the head of the largest cluster is taken
    ("majority" policy). Unparseable selector answers and backend failures
    fall back to the first reorganized candidate, which the report records.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    positions = {id(c): i for i, c in enumerate(candidates)}
    cluster_set = cluster_candidates(candidates, mode)

    if cluster_set.total_candidates == 0:
        choice = shortest_member(candidates, ranks)
        report = SelectionReport(branch="degenerate", degenerate=True)
        report.chosen_index = positions[id(choice)]
        return SelectionResult(choice, report)

    if len(cluster_set.clusters) == 1:
        choice = shortest_member(cluster_set.clusters[0].members, ranks)
        report = SelectionReport(
            branch="unanimous", cluster_sizes=[cluster_set.clusters[0].size]
        )
        report.chosen_index = positions[id(choice)]
        return SelectionResult(choice, report)

    emitted = reorganize(cluster_set, ranks)
    branch = "majority" if majority_branch(cluster_set) else "minority"
    ordered_sizes = [c.size for c in order_clusters(cluster_set, ranks)]
    report = SelectionReport(
        branch=branch,
        cluster_sizes=ordered_sizes,
        emitted_indexes=[positions[id(c)] for c in emitted],
    )

    choice = emitted[0]
    if policy == "model":
        if registry is None or prompts is None:
            raise ValueError("model policy requires a backend registry and prompt library")
        listing = "\n".join(f"{i + 1}. {deformalize(c.sql)}" for i, c in enumerate(emitted))
        prompt = prompts.render(
            template_id,
            question=question,
            evidence=evidence,
            schema=render_schema(subsets[0].parent, schema_union(subsets)) if subsets else "",
            candidates=listing,
        )
        try:
            response = registry.chat(
                ChatRequest(
                    selector_role,
                    (("user", prompt),),
                    temperature=temperature,
                    max_tokens=max_tokens,
                )
            )
        except BackendFailure:
            report.backend_failed = True
        else:
            report.selector_response = response
            parsed = parse_selector_choice(response, emitted)
            if parsed is None:
                report.selector_fallback = True
            else:
                choice = emitted[parsed]
    elif policy != "majority":
        raise ValueError(f"unknown selector policy {policy!r}")

    report.chosen_index = positions[id(choice)]
    return SelectionResult(choice, report)
