"""In-memory table store: public tables, stream tables, window tables.

All mutating calls take an UndoBuffer so an aborting transaction can restore
every touched table bit-exactly. The store is single-threaded per partition;
nothing here locks.
"""

from __future__ import annotations

import enum
import operator
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import (
    BadDefinition,
    DuplicateName,
    TypeMismatch,
    UnknownColumn,
    UnknownTable,
    WindowScopeViolation,
)
from .model import MAX_TEXT_BYTES, AtomicBatch, Tuple, Value, WindowSpec


class ScalarType(enum.Enum):
    INT = "int"
    FLOAT = "float"
    TEXT = "text"


_PY_TYPES = {
    ScalarType.INT: int,
    ScalarType.FLOAT: float,
    ScalarType.TEXT: str,
}

_OPS: dict[str, Callable[[Value, Value], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True, slots=True)
class Column:
    name: str
    type: ScalarType


Schema = tuple[Column, ...]


def make_schema(*cols: tuple[str, str]) -> Schema:
    return tuple(Column(n, ScalarType(t)) for n, t in cols)


@dataclass(frozen=True, slots=True)
class Pred:
    """Single-column comparison predicate."""

    column: str
    op: str
    value: Value

    def __post_init__(self):
        if self.op not in _OPS:
            raise BadDefinition(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class FullWindowEvent:
    """Emitted when a window completes a slide: the new active contents."""

    window: str
    index: int
    tuples: tuple[Tuple, ...]


class _BaseTable:
    kind = "?"

    def __init__(self, name: str, schema: Schema):
        self.name = name
        self.schema = schema
        self._col_index = {c.name: i for i, c in enumerate(schema)}

    def col(self, name: str) -> int:
        try:
            return self._col_index[name]
        except KeyError:
            raise UnknownColumn(f"{self.name} has no column {name}") from None

    def check_row(self, t: Tuple) -> None:
        if len(t.values) != len(self.schema):
            raise TypeMismatch(
                f"{self.name}: expected {len(self.schema)} values, got {len(t.values)}"
            )
        for v, c in zip(t.values, self.schema):
            if type(v) is not _PY_TYPES[c.type]:
                raise TypeMismatch(
                    f"{self.name}.{c.name}: expected {c.type.value}, "
                    f"got {type(v).__name__}"
                )
            if c.type is ScalarType.TEXT and len(v.encode()) > MAX_TEXT_BYTES:
                raise TypeMismatch(f"{self.name}.{c.name}: text exceeds 64 bytes")


class PublicTable(_BaseTable):
    """Unordered multiset of rows with optional hash indexes."""

    kind = "public"

    def __init__(self, name: str, schema: Schema, indexed: Iterable[str] = ()):
        super().__init__(name, schema)
        self.rows: list[Tuple] = []
        self.indexes: dict[str, dict[Value, list[Tuple]]] = {}
        for cname in indexed:
            self.col(cname)
            self.indexes[cname] = {}

    def _index_add(self, t: Tuple) -> None:
        for cname, idx in self.indexes.items():
            idx.setdefault(t.values[self.col(cname)], []).append(t)

    def _index_remove(self, t: Tuple) -> None:
        for cname, idx in self.indexes.items():
            key = t.values[self.col(cname)]
            bucket = idx[key]
            bucket.remove(t)
            if not bucket:
                del idx[key]


class StreamTable(_BaseTable):
    """Time-varying table holding not-yet-consumed atomic batches in order."""

    kind = "stream"

    def __init__(self, name: str, schema: Schema):
        super().__init__(name, schema)
        self.rows: list[Tuple] = []
        self.next_tuple_id = 1
        # highest batch a committed consumer has taken; tells recovery which
        # retained input batches still need re-submission
        self.last_consumed_batch = 0

    def pending_batches(self) -> list[int]:
        seen: list[int] = []
        for t in self.rows:
            if not seen or seen[-1] != t.batch_id:
                seen.append(t.batch_id)
        return seen

    def batch_tuples(self, batch_id: int) -> list[Tuple]:
        return [t for t in self.rows if t.batch_id == batch_id]


class WindowTable(_BaseTable):
    """Sliding window with staged (invisible) and active tuple sets."""

    kind = "window"

    def __init__(self, spec: WindowSpec, schema: Schema):
        super().__init__(spec.name, schema)
        self.spec = spec
        self.active: list[Tuple] = []
        self.staged: list[Tuple] = []
        self.full_seen = False
        self.events_emitted = 0


AnyTable = PublicTable | StreamTable | WindowTable


class UndoBuffer:
    """Inverse-operation log for one transaction execution.

    Applying ``rollback`` replays the inverses newest-first, which restores
    each touched table to its pre-transaction state exactly.
    """

    def __init__(self):
        self._entries: list[tuple] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record_insert(self, table: AnyTable, index: int) -> None:
        self._entries.append(("ins", table, index))

    def record_delete(self, table: AnyTable, index: int, row: Tuple) -> None:
        self._entries.append(("del", table, index, row))

    def record_window(self, w: WindowTable) -> None:
        self._entries.append(
            ("win", w, list(w.active), list(w.staged), w.full_seen, w.events_emitted)
        )

    def record_counter(self, s: StreamTable) -> None:
        self._entries.append(("ctr", s, s.next_tuple_id))

    def rollback(self) -> None:
        for entry in reversed(self._entries):
            tag = entry[0]
            if tag == "ins":
                _, table, index = entry
                row = table.rows.pop(index)
                if isinstance(table, PublicTable):
                    table._index_remove(row)
            elif tag == "del":
                _, table, index, row = entry
                table.rows.insert(index, row)
                if isinstance(table, PublicTable):
                    table._index_add(row)
            elif tag == "win":
                _, w, active, staged, full_seen, emitted = entry
                w.active = active
                w.staged = staged
                w.full_seen = full_seen
                w.events_emitted = emitted
            elif tag == "ctr":
                _, s, value = entry
                s.next_tuple_id = value
        self._entries.clear()


def aggregate_rows(
    rows: list[Tuple],
    tab: _BaseTable,
    op: str,
    column: Optional[str] = None,
    group_by: Optional[str] = None,
) -> list[tuple]:
    """count/sum/avg/min/max over an explicit row list (see Store.aggregate)."""
    if op not in ("count", "sum", "avg", "min", "max"):
        raise BadDefinition(f"unknown aggregate {op}")
    ci = None
    if op != "count":
        if column is None:
            raise UnknownColumn(f"aggregate {op} needs a column")
        ci = tab.col(column)
        if tab.schema[ci].type is ScalarType.TEXT:
            raise TypeMismatch(f"{op} over text column {column}")

    def compute(sub: list[Tuple]):
        if op == "count":
            return len(sub)
        vals = [t.values[ci] for t in sub]
        if op == "sum":
            return sum(vals)
        if op == "avg":
            return float(sum(vals)) / len(vals)
        if op == "min":
            return min(vals)
        return max(vals)

    if group_by is None:
        if not rows and op != "count":
            return []
        return [(compute(rows),)]
    gi = tab.col(group_by)
    groups: dict[Value, list[Tuple]] = {}
    for t in rows:
        groups.setdefault(t.values[gi], []).append(t)
    return [(k, compute(groups[k])) for k in sorted(groups)]


@dataclass
class WindowAccess:
    """One traced window access, for the visibility validator."""

    window: str
    accessor: Optional[str]
    round: int
    write: bool


class Store:
    """The per-partition table catalog plus all data operations."""

    def __init__(self):
        self.tables: dict[str, AnyTable] = {}
        self.trace_window_access = False
        self.enforce_window_scope = True
        self.window_accesses: list[WindowAccess] = []

    # --- catalog ---

    def _add(self, table: AnyTable) -> None:
        if table.name in self.tables:
            raise DuplicateName(f"table {table.name} already exists")
        self.tables[table.name] = table

    def create_public(
        self, name: str, schema: Schema, indexed: Iterable[str] = ()
    ) -> PublicTable:
        t = PublicTable(name, schema, indexed)
        self._add(t)
        return t

    def create_stream(self, name: str, schema: Schema) -> StreamTable:
        t = StreamTable(name, schema)
        self._add(t)
        return t

    def create_window(self, spec: WindowSpec, schema: Schema) -> WindowTable:
        t = WindowTable(spec, schema)
        self._add(t)
        return t

    def table(self, name: str) -> AnyTable:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(f"no table named {name}") from None

    def stream(self, name: str) -> StreamTable:
        t = self.table(name)
        if not isinstance(t, StreamTable):
            raise UnknownTable(f"{name} is not a stream table")
        return t

    def window(self, name: str) -> WindowTable:
        t = self.table(name)
        if not isinstance(t, WindowTable):
            raise UnknownTable(f"{name} is not a window table")
        return t

    # --- scoping ---

    def _check_window_scope(
        self, w: WindowTable, accessor: Optional[str], round: int, write: bool
    ) -> None:
        if self.trace_window_access:
            self.window_accesses.append(WindowAccess(w.name, accessor, round, write))
        if accessor is None:
            return  # engine-internal access (snapshots, oracles)
        if accessor != w.spec.owner and self.enforce_window_scope:
            raise WindowScopeViolation(
                f"window {w.name} is owned by {w.spec.owner}, not {accessor}"
            )

    # --- row operations ---

    def insert(
        self,
        table: str,
        t: Tuple,
        undo: UndoBuffer,
        accessor: Optional[str] = None,
        round: int = 0,
    ) -> Optional[list[FullWindowEvent]]:
        """Insert one row; inserting into a window may slide it."""
        tab = self.table(table)
        if isinstance(tab, WindowTable):
            return self.window_insert(table, [t], undo, accessor=accessor, round=round)
        tab.check_row(t)
        tab.rows.append(t)
        undo.record_insert(tab, len(tab.rows) - 1)
        if isinstance(tab, PublicTable):
            tab._index_add(t)
        return None

    def insert_batch(self, stream: str, batch: AtomicBatch, undo: UndoBuffer) -> None:
        s = self.stream(stream)
        if s.rows and (s.rows[-1].batch_id, s.rows[-1].tuple_id) >= (
            batch.batch_id,
            batch.tuples[0].tuple_id,
        ):
            raise BadDefinition(
                f"stream {stream}: batch {batch.batch_id} arrives out of order"
            )
        for t in batch.tuples:
            s.check_row(t)
            s.rows.append(t)
            undo.record_insert(s, len(s.rows) - 1)

    def _matches(self, tab: AnyTable, pred: Optional[Pred]):
        if pred is None:
            return lambda t: True
        ci = tab.col(pred.column)
        fn = _OPS[pred.op]
        want = pred.value
        return lambda t: fn(t.values[ci], want)

    def select_where(
        self,
        table: str,
        pred: Optional[Pred] = None,
        accessor: Optional[str] = None,
        round: int = 0,
    ) -> list[Tuple]:
        tab = self.table(table)
        if isinstance(tab, WindowTable):
            self._check_window_scope(tab, accessor, round, write=False)
            rows = tab.active  # staged tuples are never visible
        else:
            rows = tab.rows
        if (
            pred is not None
            and pred.op == "=="
            and isinstance(tab, PublicTable)
            and pred.column in tab.indexes
        ):
            hits = tab.indexes[pred.column].get(pred.value, [])
            return list(hits)
        match = self._matches(tab, pred)
        return [t for t in rows if match(t)]

    def delete_where(
        self,
        table: str,
        pred: Optional[Pred],
        undo: UndoBuffer,
        accessor: Optional[str] = None,
        round: int = 0,
    ) -> int:
        tab = self.table(table)
        if isinstance(tab, WindowTable):
            raise BadDefinition(
                f"window {tab.name}: rows expire by sliding, not deletion"
            )
        match = self._matches(tab, pred)
        kept: list[Tuple] = []
        removed = 0
        for i, t in enumerate(tab.rows):
            if match(t):
                undo.record_delete(tab, i - removed, t)
                removed += 1
                if isinstance(tab, PublicTable):
                    tab._index_remove(t)
            else:
                kept.append(t)
        if removed:
            tab.rows[:] = kept
        return removed

    def aggregate(
        self,
        table: str,
        op: str,
        column: Optional[str] = None,
        group_by: Optional[str] = None,
        pred: Optional[Pred] = None,
        accessor: Optional[str] = None,
        round: int = 0,
    ) -> list[tuple]:
        """count/sum/avg/min/max, optionally grouped.

        Returns [(value,)] or [(group, value), ...] sorted by group; an empty
        input yields no rows except plain count, which yields [(0,)].
        """
        tab = self.table(table)
        rows = self.select_where(table, pred, accessor=accessor, round=round)
        return aggregate_rows(rows, tab, op, column, group_by)

    # --- windows ---

    def window_insert(
        self,
        window: str,
        tuples: Iterable[Tuple],
        undo: UndoBuffer,
        accessor: Optional[str] = None,
        round: int = 0,
    ) -> list[FullWindowEvent]:
        """Stage new tuples, then advance the window while a slide is due.

        Before the first full window, arrivals accumulate in staging; the
        first event fires once ``size`` tuples exist. Afterwards every
        ``slide`` staged tuples expire the oldest actives and fire an event.
        A single large batch may fire several events.
        """
        w = self.window(window)
        self._check_window_scope(w, accessor, round, write=True)
        tuples = list(tuples)
        for t in tuples:
            w.check_row(t)
        undo.record_window(w)
        w.staged.extend(tuples)

        size, slide = w.spec.size, w.spec.slide
        events: list[FullWindowEvent] = []
        while True:
            if not w.full_seen:
                if len(w.active) + len(w.staged) < size:
                    break
                take = size - len(w.active)
                w.active.extend(w.staged[:take])
                del w.staged[:take]
                w.full_seen = True
            else:
                if len(w.staged) < slide:
                    break
                del w.active[:slide]
                w.active.extend(w.staged[:slide])
                del w.staged[:slide]
            events.append(
                FullWindowEvent(w.name, w.events_emitted, tuple(w.active))
            )
            w.events_emitted += 1
        return events

    # --- stream upkeep ---

    def next_tuple_ids(self, stream: str, count: int, undo: UndoBuffer) -> range:
        s = self.stream(stream)
        undo.record_counter(s)
        first = s.next_tuple_id
        s.next_tuple_id += count
        return range(first, first + count)

    def garbage_collect(self, stream: str, batch_id: int) -> int:
        """Drop every tuple of a consumed batch. Idempotent, not undoable."""
        s = self.stream(stream)
        before = len(s.rows)
        s.rows[:] = [t for t in s.rows if t.batch_id != batch_id]
        return before - len(s.rows)

    def delete_batch(self, stream: str, batch_id: int, undo: UndoBuffer) -> int:
        """Undoable batch removal, for procedure bodies that manage stream
        cleanup themselves instead of relying on automatic collection."""
        s = self.stream(stream)
        removed = 0
        kept: list[Tuple] = []
        for i, t in enumerate(s.rows):
            if t.batch_id == batch_id:
                undo.record_delete(s, i - removed, t)
                removed += 1
            else:
                kept.append(t)
        if removed:
            s.rows[:] = kept
        return removed

    # --- comparison helpers ---

    def content_signature(self) -> dict:
        """Canonical, order-insensitive-for-public-tables view of all data.

        Used by tests and the weak-recovery equivalence check; stream and
        window tables keep their order because order is part of their state.
        """
        sig: dict = {}
        for name in sorted(self.tables):
            tab = self.tables[name]
            if isinstance(tab, PublicTable):
                sig[name] = ("public", tuple(sorted(t.values for t in tab.rows)))
            elif isinstance(tab, StreamTable):
                sig[name] = (
                    "stream",
                    tuple((t.batch_id, t.tuple_id, t.ts, t.values) for t in tab.rows),
                )
            else:
                sig[name] = (
                    "window",
                    tuple(t.values for t in tab.active),
                    tuple(t.values for t in tab.staged),
                    tab.full_seen,
                )
        return sig
