"""Statement triggers and procedure triggers.

Statement triggers run declarative operation chains inside the storage layer
within the firing transaction (same undo buffer, same commit fate), cascading
depth-first. Procedure triggers fire at commit of the producing transaction
and hand downstream executions straight to the scheduler's fast track.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .errors import BadDefinition, CycleDetected
from .model import ProcedureDef, Workflow
from .storage import (
    _OPS,
    FullWindowEvent,
    Pred,
    Store,
    StreamTable,
    WindowTable,
    aggregate_rows,
)


@dataclass(frozen=True)
class FilteredCopy:
    """Copy the firing batch's rows that satisfy ``pred`` into ``dst``."""

    src: str
    dst: str
    pred: Optional[Pred] = None


@dataclass(frozen=True)
class WindowInsertStmt:
    """Feed the firing batch into a sliding window."""

    src: str
    window: str


@dataclass(frozen=True)
class AggregateInsert:
    """Aggregate the firing window contents into a table or stream."""

    src: str
    dst: str
    op: str
    column: Optional[str] = None
    group_by: Optional[str] = None


@dataclass(frozen=True)
class DeleteBatch:
    """Drop the firing batch from its stream (emulation workloads only;
    live streams are garbage collected automatically)."""

    src: str


Statement = Union[FilteredCopy, WindowInsertStmt, AggregateInsert, DeleteBatch]


@dataclass(frozen=True)
class StatementTrigger:
    source: str
    program: tuple[Statement, ...]


@dataclass(frozen=True)
class ProcedureTrigger:
    source: str
    target: str


class TriggerEngine:
    """Per-partition trigger registry, dispatch, and GC bookkeeping."""

    def __init__(self, store: Store):
        self.store = store
        self.statement_triggers: dict[str, StatementTrigger] = {}
        self.procedure_triggers: dict[str, ProcedureTrigger] = {}
        self.pe_enabled = True
        # (stream, batch_id) -> count of trigger obligations not yet met;
        # a batch is GC-eligible only at zero.
        self.pending: dict[tuple[str, int], int] = {}
        # per-stream dispatch plans, resolved once at first fire
        self._fire_plan: dict[str, tuple] = {}

    # --- registration ---

    def register_statement_trigger(self, trig: StatementTrigger) -> None:
        src = self.store.table(trig.source)
        if isinstance(src, StreamTable) or isinstance(src, WindowTable):
            pass
        else:
            raise BadDefinition(
                f"statement trigger source {trig.source} must be a stream or window"
            )
        if trig.source in self.statement_triggers:
            raise BadDefinition(f"{trig.source} already has a statement trigger")
        for stmt in trig.program:
            if stmt.src != trig.source:
                raise BadDefinition(
                    f"statement source {stmt.src} differs from trigger "
                    f"source {trig.source}"
                )
            if isinstance(stmt, (FilteredCopy, AggregateInsert)):
                self.store.table(stmt.dst)
            if isinstance(stmt, WindowInsertStmt):
                self.store.window(stmt.window)
            if isinstance(stmt, AggregateInsert) and not isinstance(
                src, WindowTable
            ):
                raise BadDefinition(
                    "aggregate_insert runs one full window at a time; "
                    f"source {trig.source} is not a window"
                )
        self.statement_triggers[trig.source] = trig
        self._check_statement_dag()

    def _check_statement_dag(self) -> None:
        edges: list[tuple[str, str]] = []
        for trig in self.statement_triggers.values():
            for stmt in trig.program:
                if isinstance(stmt, FilteredCopy):
                    edges.append((trig.source, stmt.dst))
                elif isinstance(stmt, WindowInsertStmt):
                    edges.append((trig.source, stmt.window))
                elif isinstance(stmt, AggregateInsert):
                    edges.append((trig.source, stmt.dst))
        nodes = {n for e in edges for n in e}
        state: dict[str, int] = {}
        succ: dict[str, list[str]] = {n: [] for n in nodes}
        for a, b in edges:
            succ[a].append(b)

        def visit(n):
            if state.get(n) == 0:
                raise CycleDetected(f"statement triggers cycle through {n}")
            if state.get(n) == 1:
                return
            state[n] = 0
            for m in succ[n]:
                visit(m)
            state[n] = 1

        for n in nodes:
            visit(n)

    def register_procedure_trigger(self, source: str, target: ProcedureDef) -> None:
        tab = self.store.table(source)
        if isinstance(tab, WindowTable):
            raise BadDefinition(
                f"procedure triggers attach to stream tables only, not window {source}"
            )
        if not isinstance(tab, StreamTable):
            raise BadDefinition(f"procedure trigger source {source} is not a stream")
        if source not in target.stream_inputs:
            raise BadDefinition(
                f"{target.name} does not read stream {source}"
            )
        if source in self.procedure_triggers:
            raise BadDefinition(f"stream {source} already triggers a procedure")
        self.procedure_triggers[source] = ProcedureTrigger(source, target.name)

    # --- enable flag ---

    def set_pe_triggers_enabled(self, flag: bool) -> None:
        self.pe_enabled = bool(flag)

    # --- GC bookkeeping ---

    def note_append(self, stream: str, batch_id: int) -> None:
        count = 0
        if stream in self.statement_triggers:
            count += 1
        if stream in self.procedure_triggers:
            count += 1
        if count:
            self.pending[(stream, batch_id)] = count

    def note_statement_done(self, stream: str, batch_id: int) -> None:
        self._dec(stream, batch_id)

    def note_consumed(self, stream: str, batch_id: int) -> None:
        self._dec(stream, batch_id)

    def _dec(self, stream: str, batch_id: int) -> None:
        key = (stream, batch_id)
        left = self.pending.get(key)
        if left is None:
            return
        if left <= 1:
            del self.pending[key]
        else:
            self.pending[key] = left - 1

    def gc_eligible(self, stream: str, batch_id: int) -> bool:
        return (stream, batch_id) not in self.pending

    # --- statement trigger execution ---

    def fire_statement_triggers(self, source: str, batch, te_context) -> None:
        """Run the statement program attached to ``source``, if any.

        Runs inside the current transaction (same undo buffer, same commit
        fate); statements that land rows on another triggered stream or
        window cascade depth-first through the context.
        """
        trig = self.statement_triggers.get(source)
        if trig is None:
            return
        self._run_program(te_context, trig, batch.tuples, batch.batch_id)
        self.note_statement_done(source, batch.batch_id)
        te_context.ee_consumed.append((source, batch.batch_id))

    # storage-side hook name used by the execution context
    def on_stream_append(self, ctx, stream: str, batch) -> None:
        self.fire_statement_triggers(stream, batch, ctx)

    def on_window_events(self, ctx, window: str, events: list[FullWindowEvent]):
        trig = self.statement_triggers.get(window)
        if trig is None:
            return
        for ev in events:
            self._run_program(ctx, trig, ev.tuples, ctx.round)

    def _run_program(self, ctx, trig: StatementTrigger, tuples, batch_id: int):
        for stmt in trig.program:
            ctx.count_statement()
            if isinstance(stmt, FilteredCopy):
                if stmt.pred is None:
                    hits = list(tuples)
                else:
                    tab = self.store.table(trig.source)
                    ci = tab.col(stmt.pred.column)
                    fn = _OPS[stmt.pred.op]
                    want = stmt.pred.value
                    hits = [t for t in tuples if fn(t.values[ci], want)]
                if hits:
                    ctx.copy_to_stream(stmt.dst, hits, batch_id)
            elif isinstance(stmt, WindowInsertStmt):
                ctx.window_insert(stmt.window, tuples)
            elif isinstance(stmt, AggregateInsert):
                tab = self.store.table(trig.source)
                rows = aggregate_rows(
                    list(tuples), tab, stmt.op, stmt.column, stmt.group_by
                )
                dst = self.store.table(stmt.dst)
                if isinstance(dst, StreamTable):
                    ctx.emit(stmt.dst, rows, _internal_batch_id=batch_id)
                else:
                    for row in rows:
                        ctx.insert(stmt.dst, row)
            elif isinstance(stmt, DeleteBatch):
                ctx.delete_batch(stmt.src, batch_id)
            else:
                raise BadDefinition(f"unknown statement {stmt!r}")

    # --- procedure trigger firing (commit time) ---

    def fire_procedure_triggers(
        self, workflow_of, stream: str, batch_id: int
    ) -> list[tuple[str, int, Optional[str]]]:
        """Requests to enqueue for a committed batch: (target, round, group).

        Consults downstream readiness: the request appears only once every
        input stream of the target (or of the target's group roots) holds the
        batch, so the completing producer is the one that enqueues.
        """
        if not self.pe_enabled:
            return []
        plan = self._fire_plan.get(stream)
        if plan is None:
            trig = self.procedure_triggers.get(stream)
            if trig is None:
                self._fire_plan[stream] = ("none",)
                return []
            w: Workflow = workflow_of(trig.target)
            group = w.group_of(trig.target)
            if group is None:
                proc = w.procedure(trig.target)
                # a single-input target is ready by construction: the firing
                # batch just landed on its only input
                if len(proc.stream_inputs) == 1:
                    plan = ("direct", trig.target)
                else:
                    plan = ("join", trig.target, proc)
            else:
                roots = group_roots(w, group)
                procs = tuple(w.procedure(r) for r in roots)
                if len(procs) == 1 and len(procs[0].stream_inputs) == 1:
                    plan = ("direct_group", roots[0], group.parent_name)
                else:
                    plan = ("join_group", roots[0], group.parent_name, procs)
            self._fire_plan[stream] = plan
        tag = plan[0]
        if tag == "none":
            return []
        if tag == "direct":
            return [(plan[1], batch_id, None)]
        if tag == "direct_group":
            return [(plan[1], batch_id, plan[2])]
        if tag == "join":
            if self._inputs_ready(plan[2], batch_id):
                return [(plan[1], batch_id, None)]
            return []
        for proc in plan[3]:
            if not self._inputs_ready(proc, batch_id):
                return []
        return [(plan[1], batch_id, plan[2])]

    def _inputs_ready(self, proc: ProcedureDef, batch_id: int) -> bool:
        for s in proc.stream_inputs:
            tab = self.store.stream(s)
            if not any(t.batch_id == batch_id for t in tab.rows):
                return False
        return True

    def refire_nonempty_streams(self, workflow_of) -> list[tuple[str, int, Optional[str]]]:
        """Recovery helper: re-enqueue consumers for still-pending batches."""
        out: list[tuple[str, int, Optional[str]]] = []
        seen: set[tuple[str, int]] = set()
        for name in sorted(self.procedure_triggers):
            tab = self.store.stream(name)
            for batch_id in tab.pending_batches():
                for req in self.fire_procedure_triggers(workflow_of, name, batch_id):
                    key = (req[0] if req[2] is None else req[2], req[1])
                    if key not in seen:
                        seen.add(key)
                        out.append(req)
        out.sort(key=lambda r: r[1])
        return out


def group_roots(w: Workflow, group) -> list[str]:
    """Children whose stream inputs all come from outside the group, in
    workflow order."""
    children = set(group.children)
    internal = {e.stream for e in w.edges if e.producer in children}
    roots = [
        c
        for c in w.chosen_order
        if c in children
        and not any(s in internal for s in w.procedure(c).stream_inputs)
    ]
    if not roots:
        raise BadDefinition(f"group {group.parent_name} has no entry procedure")
    return roots
