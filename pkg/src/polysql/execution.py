"""SQL execution with timeouts, result canonicalization, and equivalence.

Candidate SQL is untrusted: every statement runs on its own read-only
connection and every failure mode is encoded in the outcome status rather
than raised. Equivalence of two outcomes is equality of canonical result
forms under a configurable comparison mode.
"""

from __future__ import annotations

import hashlib
import math
import sqlite3
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal, Sequence

from .schema import sqlite_uri

Mode = Literal["set", "bag", "ordered"]

DEFAULT_TIMEOUT_MS = 30_000
_PROGRESS_OPCODES = 200
_ROW_PREVIEW = 5


class ExecStatus(str, Enum):
    OK = "ok"
    SYNTAX_ERROR = "syntax_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of executing one statement; rows are present iff status is ok."""

    status: ExecStatus
    rows: tuple[tuple, ...] | None = None
    message: str = ""
    elapsed_ms: int = 0

    def __post_init__(self) -> None:
        if (self.status is ExecStatus.OK) != (self.rows is not None):
            raise ValueError("rows must be present exactly when status is ok")
        if self.elapsed_ms < 0:
            raise ValueError("elapsed_ms must be >= 0")

    @property
    def is_ok(self) -> bool:
        return self.status is ExecStatus.OK


@dataclass(frozen=True)
class ResultKey:
    """Fingerprint of a canonical result, used as a clustering key.

    Digest equality is checked against full canonical equality wherever
    clusters are formed, so hash collisions cannot merge distinct results.
    """

    digest: str


def execute(sql: str, db_file: str | Path, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionOutcome:
    """Run one statement read-only and classify the outcome.

    Never raises: missing files, syntax errors, runtime errors, and timeouts
    all come back as non-ok statuses. An ok execution is downgraded to
    `anomalous` when it produces no result columns or a single NULL cell.
    """
    start = time.monotonic()

    def _elapsed_ms() -> int:
        return max(0, int((time.monotonic() - start) * 1000))

    try:
        conn = sqlite3.connect(sqlite_uri(db_file), uri=True)
    except sqlite3.Error as exc:
        return ExecutionOutcome(ExecStatus.RUNTIME_ERROR, message=str(exc), elapsed_ms=_elapsed_ms())

    deadline = start + timeout_ms / 1000.0
    timed_out = False

    def _check_deadline() -> int:
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    conn.set_progress_handler(_check_deadline, _PROGRESS_OPCODES)
    try:
        cursor = conn.execute(sql)
        description = cursor.description
        rows = tuple(tuple(row) for row in cursor.fetchall())
    except sqlite3.ProgrammingError as exc:
        return ExecutionOutcome(ExecStatus.SYNTAX_ERROR, message=str(exc), elapsed_ms=_elapsed_ms())
    except sqlite3.Error as exc:
        message = str(exc)
        if timed_out:
            return ExecutionOutcome(
                ExecStatus.TIMEOUT, message=f"timed out after {timeout_ms} ms", elapsed_ms=_elapsed_ms()
            )
        if "syntax error" in message or "incomplete input" in message:
            return ExecutionOutcome(ExecStatus.SYNTAX_ERROR, message=message, elapsed_ms=_elapsed_ms())
        return ExecutionOutcome(ExecStatus.RUNTIME_ERROR, message=message, elapsed_ms=_elapsed_ms())
    finally:
        conn.close()

    if description is None:
        return ExecutionOutcome(
            ExecStatus.ANOMALOUS, message="statement produced no result columns", elapsed_ms=_elapsed_ms()
        )
    if len(rows) == 1 and len(rows[0]) == 1 and rows[0][0] is None:
        return ExecutionOutcome(
            ExecStatus.ANOMALOUS, message="result is a single NULL cell", elapsed_ms=_elapsed_ms()
        )
    return ExecutionOutcome(ExecStatus.OK, rows=rows, elapsed_ms=_elapsed_ms())


def canonical_cell(value: object) -> str:
    """Render one cell to its canonical string.

    Integers render exactly, reals are rounded at 1e-6, NULL maps to a typed
    sentinel, and text is kept verbatim behind a type tag (so text '1' and
    integer 1 stay distinct).
    """
    if value is None:
        return "null"
    if isinstance(value, bool):
        return f"i:{int(value)}"
    if isinstance(value, int):
        return f"i:{value}"
    if isinstance(value, float):
        if not math.isfinite(value):
            return f"r:{value!r}"
        rounded = round(value, 6) + 0.0  # normalizes -0.0
        return f"r:{rounded:.6f}"
    if isinstance(value, bytes):
        return "b:" + value.hex()
    return "t:" + str(value)


def canonicalize(rows: Sequence[Sequence[object]], mode: Mode = "set") -> tuple[tuple[str, ...], ...]:
    """Canonical form of a row list under the given comparison mode."""
    canon = [tuple(canonical_cell(cell) for cell in row) for row in rows]
    if mode == "set":
        return tuple(sorted(set(canon)))
    if mode == "bag":
        return tuple(sorted(canon))
    if mode == "ordered":
        return tuple(canon)
    raise ValueError(f"unknown comparison mode {mode!r}")


def result_key(outcome: ExecutionOutcome, mode: Mode = "set") -> ResultKey:
    if not outcome.is_ok:
        raise ValueError("result keys exist only for ok outcomes")
    return key_for_canonical(canonicalize(outcome.rows, mode), mode)


def key_for_canonical(canonical: tuple[tuple[str, ...], ...], mode: Mode) -> ResultKey:
    hasher = hashlib.sha256()
    hasher.update(mode.encode("utf-8"))
    for row in canonical:
        hasher.update(b"\x1e")
        for cell in row:
            hasher.update(b"\x1f")
            hasher.update(cell.encode("utf-8"))
    return ResultKey(hasher.hexdigest())


def equivalent(a: ExecutionOutcome, b: ExecutionOutcome, mode: Mode = "set") -> bool:
    """True iff both outcomes are ok and their canonical results are equal.

    Any non-ok outcome is equivalent to nothing, including another failure
    with the same message.
    """
    if not a.is_ok or not b.is_ok:
        return False
    return canonicalize(a.rows, mode) == canonicalize(b.rows, mode)


def render_feedback(outcome: ExecutionOutcome) -> str:
    """Human-readable execution feedback for self-refine prompts."""
    if outcome.is_ok:
        preview = [list(row) for row in outcome.rows[:_ROW_PREVIEW]]
        suffix = "" if len(outcome.rows) <= _ROW_PREVIEW else f" (+{len(outcome.rows) - _ROW_PREVIEW} more rows)"
        return f"status: ok, rows: {preview}{suffix}"
    return f"status: {outcome.status.value}, {outcome.message}"
