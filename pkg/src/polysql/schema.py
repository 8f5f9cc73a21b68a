"""Structured schema documents: introspection, canonical text rendering, key closure.

A :class:`SchemaDoc` is an immutable description of one database (tables,
columns, keys, sample values). Every prompt in the pipeline sees a database
only through :func:`render_schema`, whose output grammar is fixed by this
module and frozen by golden-file tests, so prompts are reproducible
byte-for-byte.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from urllib.parse import quote

from .errors import DanglingSubset, InvalidSubset, UnreadableDatabase, UnsupportedDialect

SAMPLE_VALUE_MAX_CHARS = 64


class Dialect(str, Enum):
    SQLITE = "sqlite"
    POSTGRES = "postgres"
    MYSQL = "mysql"


@dataclass(frozen=True, order=True)
class ColumnRef:
    """A (table, column) name pair, unique within a schema document."""

    table_name: str
    column_name: str

    def __post_init__(self) -> None:
        if not self.table_name or not self.column_name:
            raise ValueError("table and column names must be non-empty")

    def dotted(self) -> str:
        return f"{self.table_name}.{self.column_name}"


@dataclass(frozen=True)
class ColumnMeta:
    """One physical column plus the metadata shown in prompts."""

    ref: ColumnRef
    data_type: str
    description: str = ""
    is_primary_key: bool = False
    sample_values: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.data_type:
            raise ValueError(f"{self.ref.dotted()}: data_type must be non-empty")


@dataclass(frozen=True)
class ForeignKey:
    """A single-column foreign key edge; `source` references `target`."""

    source: ColumnRef
    target: ColumnRef

    def __post_init__(self) -> None:
        if self.source == self.target:
            raise ValueError(f"foreign key cannot reference itself: {self.source.dotted()}")


@dataclass(frozen=True)
class TableMeta:
    name: str
    description: str = ""
    columns: tuple[ColumnMeta, ...] = ()


@dataclass(frozen=True)
class SchemaDoc:
    """Immutable schema document for one database.

    Safe to share across concurrent pipeline workers; all mutation happens
    before construction.
    """

    db_id: str
    dialect: Dialect = Dialect.SQLITE
    tables: tuple[TableMeta, ...] = ()
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self) -> None:
        names = [t.name for t in self.tables]
        if len(names) != len(set(names)):
            raise ValueError(f"{self.db_id}: duplicate table names")
        refs = [c.ref for c in self.columns()]
        if len(refs) != len(set(refs)):
            raise ValueError(f"{self.db_id}: duplicate column refs")
        known = set(refs)
        for fk in self.foreign_keys:
            for end in (fk.source, fk.target):
                if end not in known:
                    raise ValueError(f"{self.db_id}: foreign key endpoint {end.dotted()} not in schema")

    def columns(self):
        for table in self.tables:
            yield from table.columns

    def column_set(self) -> frozenset[ColumnRef]:
        return frozenset(c.ref for c in self.columns())

    def table(self, name: str) -> TableMeta:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def column(self, ref: ColumnRef) -> ColumnMeta:
        for c in self.table(ref.table_name).columns:
            if c.ref == ref:
                return c
        raise KeyError(ref.dotted())

    def primary_key_columns(self, table_name: str) -> tuple[ColumnRef, ...]:
        return tuple(c.ref for c in self.table(table_name).columns if c.is_primary_key)


@dataclass(frozen=True)
class SchemaSubset:
    """A set of columns of a parent document, tagged with its selection round.

    Invariant: every table touched by the subset contributes all of its
    primary-key columns. Use :meth:`closed` to build a subset that satisfies
    the invariant by construction.
    """

    parent: SchemaDoc
    columns: frozenset[ColumnRef] = field(default_factory=frozenset)
    iteration_index: int = 1

    def __post_init__(self) -> None:
        if self.iteration_index < 1:
            raise InvalidSubset("iteration_index must be >= 1")
        known = self.parent.column_set()
        dangling = sorted(r.dotted() for r in self.columns if r not in known)
        if dangling:
            raise DanglingSubset(f"unknown columns: {', '.join(dangling)}")
        for table_name in {r.table_name for r in self.columns}:
            missing = set(self.parent.primary_key_columns(table_name)) - self.columns
            if missing:
                raise InvalidSubset(
                    f"table {table_name} selected without its primary key column(s): "
                    + ", ".join(sorted(r.dotted() for r in missing))
                )

    @classmethod
    def closed(cls, parent: SchemaDoc, columns, iteration_index: int = 1) -> "SchemaSubset":
        """Build a subset from `columns`, adding primary keys of touched tables."""
        cols = set(columns)
        for table_name in {r.table_name for r in cols}:
            cols.update(parent.primary_key_columns(table_name))
        return cls(parent, frozenset(cols), iteration_index)


def render_cell(value: object, max_chars: int = SAMPLE_VALUE_MAX_CHARS) -> str:
    """Render one cell for display in a schema text; long text is truncated."""
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, bytes):
        return "0x" + value.hex()
    text = " ".join(str(value).split())
    if len(text) > max_chars:
        text = text[:max_chars] + "..."
    return text


def render_schema(doc: SchemaDoc, subset: SchemaSubset | None = None) -> str:
    """Render the canonical schema text shown to models.

    The grammar is fixed: a `Database:` header line, one `Table:` block per
    table with one parenthesised line per column
    (`name: TYPE[, description][, primary key][, Examples: v1, v2, ...]`),
    and a trailing `Foreign keys:` section of `t1.c1 = t2.c2` lines. With a
    subset, only subset columns are listed and only foreign keys with both
    endpoints visible are kept. Identical inputs yield byte-identical output.
    """
    visible: frozenset[ColumnRef] | None = None
    if subset is not None:
        known = doc.column_set()
        dangling = sorted(r.dotted() for r in subset.columns if r not in known)
        if dangling:
            raise DanglingSubset(f"unknown columns: {', '.join(dangling)}")
        visible = subset.columns

    lines = [f"Database: {doc.db_id}"]
    for table in doc.tables:
        cols = [c for c in table.columns if visible is None or c.ref in visible]
        if visible is not None and not cols:
            continue
        header = f"Table: {table.name}"
        if table.description:
            header += f", {table.description}"
        lines.append(header)
        for col in cols:
            parts = [f"{col.ref.column_name}: {col.data_type}"]
            if col.description:
                parts.append(col.description)
            if col.is_primary_key:
                parts.append("primary key")
            if col.sample_values:
                parts.append("Examples: " + ", ".join(col.sample_values))
            lines.append("(" + ", ".join(parts) + ")")

    fk_lines = []
    for fk in doc.foreign_keys:
        if visible is None or (fk.source in visible and fk.target in visible):
            fk_lines.append(f"{fk.source.dotted()} = {fk.target.dotted()}")
    if fk_lines:
        lines.append("Foreign keys:")
        lines.extend(fk_lines)
    return "\n".join(lines)


def pf_key_closure(doc: SchemaDoc, selected) -> frozenset[ColumnRef]:
    """Primary/foreign-key closure of a column selection.

    Returns all primary-key columns of tables touched by `selected`, plus
    both endpoints of every foreign key that touches any of those tables.
    Monotone in `selected`; empty input yields empty output.
    """
    selected = frozenset(selected)
    known = doc.column_set()
    dangling = sorted(r.dotted() for r in selected if r not in known)
    if dangling:
        raise DanglingSubset(f"unknown columns: {', '.join(dangling)}")

    touched = {r.table_name for r in selected}
    out: set[ColumnRef] = set()
    for table in doc.tables:
        if table.name in touched:
            out.update(c.ref for c in table.columns if c.is_primary_key)
    for fk in doc.foreign_keys:
        if fk.source.table_name in touched or fk.target.table_name in touched:
            out.add(fk.source)
            out.add(fk.target)
    return frozenset(out)


def sqlite_uri(db_file: str | Path, read_only: bool = True) -> str:
    path = quote(str(Path(db_file).absolute()), safe="/")
    suffix = "?mode=ro" if read_only else ""
    return f"file:{path}{suffix}"


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def introspect(
    db_file: str | Path,
    dialect: Dialect = Dialect.SQLITE,
    sample_cap: int = 3,
) -> SchemaDoc:
    """Read a database file into a :class:`SchemaDoc`.

    Sample values are the first `sample_cap` distinct non-null values of
    each column in primary-key order (rowid order for tables without a
    declared key). Only SQLite files are introspectable; documents for other
    dialects can still be constructed programmatically.
    """
    dialect = Dialect(dialect)
    if dialect is not Dialect.SQLITE:
        raise UnsupportedDialect(f"introspection reads sqlite files only, got {dialect.value}")
    path = Path(db_file)
    if not path.is_file():
        raise UnreadableDatabase(f"no such database file: {path}")

    try:
        conn = sqlite3.connect(sqlite_uri(path), uri=True)
    except sqlite3.Error as exc:
        raise UnreadableDatabase(f"cannot open {path}: {exc}") from exc

    try:
        try:
            names = [
                row[0]
                for row in conn.execute(
                    "SELECT name FROM sqlite_master"
                    " WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
        except sqlite3.Error as exc:
            raise UnreadableDatabase(f"cannot read schema of {path}: {exc}") from exc

        tables = []
        foreign_keys = []
        for name in names:
            info = conn.execute(f"PRAGMA table_info({_quote_ident(name)})").fetchall()
            pk_names = [row[1] for row in sorted((r for r in info if r[5] > 0), key=lambda r: r[5])]
            columns = []
            for _cid, col_name, col_type, _notnull, _default, pk in info:
                ref = ColumnRef(name, col_name)
                samples = ()
                if sample_cap > 0:
                    samples = _sample_values(conn, name, col_name, pk_names, sample_cap)
                columns.append(
                    ColumnMeta(
                        ref=ref,
                        data_type=col_type or "ANY",
                        is_primary_key=pk > 0,
                        sample_values=samples,
                    )
                )
            tables.append(TableMeta(name=name, columns=tuple(columns)))

            fk_rows = conn.execute(f"PRAGMA foreign_key_list({_quote_ident(name)})").fetchall()
            for _id, _seq, ref_table, from_col, to_col, *_rest in sorted(
                fk_rows, key=lambda r: (r[0], r[1])
            ):
                if to_col is None:
                    ref_info = conn.execute(
                        f"PRAGMA table_info({_quote_ident(ref_table)})"
                    ).fetchall()
                    ref_pks = [r[1] for r in sorted((r for r in ref_info if r[5] > 0), key=lambda r: r[5])]
                    if not ref_pks:
                        continue
                    to_col = ref_pks[min(_seq, len(ref_pks) - 1)]
                foreign_keys.append(
                    ForeignKey(source=ColumnRef(name, from_col), target=ColumnRef(ref_table, to_col))
                )
    finally:
        conn.close()

    return SchemaDoc(
        db_id=path.stem,
        dialect=dialect,
        tables=tuple(tables),
        foreign_keys=tuple(foreign_keys),
    )


def _sample_values(
    conn: sqlite3.Connection,
    table: str,
    column: str,
    pk_names: list[str],
    cap: int,
) -> tuple[str, ...]:
    order_by = ", ".join(_quote_ident(n) for n in pk_names) if pk_names else "rowid"
    query = f"SELECT {_quote_ident(column)} FROM {_quote_ident(table)} ORDER BY {order_by}"
    try:
        cursor = conn.execute(query)
    except sqlite3.Error:
        cursor = conn.execute(f"SELECT {_quote_ident(column)} FROM {_quote_ident(table)} ORDER BY 1")
    seen: list[str] = []
    for (value,) in cursor:
        if value is None:
            continue
        rendered = render_cell(value)
        if rendered not in seen:
            seen.append(rendered)
            if len(seen) >= cap:
                break
    return tuple(seen)
