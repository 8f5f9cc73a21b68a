"""Shared fixtures: fixture databases, scripted backends, candidate builders."""

from __future__ import annotations

import sqlite3
from pathlib import Path

import pytest

from polysql.backends import BackendRegistry, HashedNgramEmbedder, MockChatBackend, MockScriptEntry
from polysql.execution import ExecStatus, ExecutionOutcome
from polysql.generation import CandidateSql
from polysql.prompts import PromptLibrary


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Always show one line per acceptance criterion at the end of a run."""
    reports = []
    for key in ("passed", "failed", "error"):
        reports.extend(terminalreporter.stats.get(key, []))
    acceptance = [
        r for r in reports if getattr(r, "when", "call") == "call" and "test_acceptance" in r.nodeid
    ]
    if not acceptance:
        return
    def criterion_number(report) -> int:
        name = report.nodeid.split("::")[-1]
        digits = "".join(ch for ch in name.split("_")[2] if ch.isdigit())
        return int(digits) if digits else 0

    terminalreporter.write_sep("-", "acceptance criteria")
    for report in sorted(acceptance, key=criterion_number):
        status = "PASS" if report.passed else "FAIL"
        terminalreporter.write_line(f"{status}  {report.nodeid.split('::')[-1]}")


def build_store_db(path: Path) -> Path:
    """Three-table shop database: 3 tables, 11 columns, 2 foreign keys."""
    conn = sqlite3.connect(path)
    conn.executescript(
        """
        CREATE TABLE users (
            id INTEGER PRIMARY KEY,
            name TEXT,
            city TEXT
        );
        CREATE TABLE products (
            product_id INTEGER PRIMARY KEY,
            title TEXT,
            price REAL,
            category TEXT
        );
        CREATE TABLE orders (
            order_id INTEGER PRIMARY KEY,
            user_id INTEGER REFERENCES users(id),
            product_id INTEGER REFERENCES products(product_id),
            amount REAL
        );
        INSERT INTO users VALUES
            (1, 'Alice', 'Alameda'),
            (2, 'Bob', 'Berkeley'),
            (3, 'Cara', 'Alameda'),
            (4, 'Dan', 'Fresno');
        INSERT INTO products VALUES
            (1, 'Laptop', 999.5, 'electronics'),
            (2, 'Pencil', 1.5, 'stationery'),
            (3, 'Desk', 120.0, 'furniture');
        INSERT INTO orders VALUES
            (1, 1, 1, 999.5),
            (2, 2, 2, 3.0),
            (3, 3, 1, 999.5),
            (4, 1, 3, 120.0),
            (5, 4, 2, 1.5);
        """
    )
    conn.commit()
    conn.close()
    return path


@pytest.fixture(scope="session")
def store_db(tmp_path_factory) -> Path:
    return build_store_db(tmp_path_factory.mktemp("dbs") / "store.sqlite")


@pytest.fixture(scope="session")
def store_doc(store_db):
    from polysql.schema import introspect

    return introspect(store_db, sample_cap=3)


@pytest.fixture()
def prompts() -> PromptLibrary:
    return PromptLibrary()


def make_registry(
    scripts: dict[str, list[tuple[str | None, str]]] | None = None,
    embedder=None,
) -> BackendRegistry:
    """Registry with scripted chat roles and the offline hash embedder."""
    registry = BackendRegistry(embedder=embedder or HashedNgramEmbedder())
    for role, entries in (scripts or {}).items():
        registry.chat_backends[role] = MockChatBackend(
            [MockScriptEntry(matcher=m, response=r) for m, r in entries]
        )
    return registry


def ok_outcome(rows) -> ExecutionOutcome:
    return ExecutionOutcome(ExecStatus.OK, rows=tuple(tuple(r) for r in rows))


def failed_outcome(status: ExecStatus = ExecStatus.RUNTIME_ERROR, message: str = "boom") -> ExecutionOutcome:
    return ExecutionOutcome(status, message=message)


def make_candidate(
    sql: str,
    generator_id: str = "gen_a",
    schema_index: int = 1,
    refined: bool = False,
    rows=None,
    status: ExecStatus | None = None,
) -> CandidateSql:
    """Candidate with a scripted outcome: `rows` for ok, `status` for failures."""
    if rows is not None:
        outcome = ok_outcome(rows)
    else:
        outcome = failed_outcome(status or ExecStatus.RUNTIME_ERROR)
    return CandidateSql(sql, generator_id, schema_index, refined, outcome)


def build_thousand_value_db(path: Path) -> tuple[Path, list[str]]:
    """One text column with exactly 1000 distinct values: city-name variants
    (suffix digits, doubled or dropped final letters) plus unrelated filler."""
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE places (pid INTEGER PRIMARY KEY, city TEXT)")
    values: set[str] = set()
    bases = [
        "Alameda", "Berkeley", "Fresno", "Sacramento", "Pasadena",
        "Monterey", "Oakland", "Stockton", "Riverside", "Hayward",
    ]
    for base in bases:
        values.add(base)
        for i in range(1, 10):
            values.add(base + str(i))
        values.add(base + base[-1])
        values.add(base[:-1])
    filler = 0
    while len(values) < 1000:
        values.add(f"entry number {filler:04d}")
        filler += 1
    for i, value in enumerate(sorted(values)):
        conn.execute("INSERT INTO places VALUES (?, ?)", (i, value))
    conn.commit()
    conn.close()
    return path, sorted(values)
