"""The partition engine: one serial executor, FIFO client queue, and a
fast-track queue that lets trigger-invoked executions preempt clients.

Once a border execution commits, its whole workflow round drains through the
fast track before any queued client request runs, so committed schedules are
always consistent with the workflow's topological ordering.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    BadDefinition,
    BodyAbort,
    EngineStopped,
    MissingInputBatch,
    QuiesceTimeout,
    StreamTxError,
    UnknownProcedure,
)
from .model import (
    AtomicBatch,
    NestedGroup,
    ProcedureDef,
    ProcedureKind,
    Schedule,
    TransactionExecution,
    Tuple,
    Workflow,
)
from .recovery import CommandLog, CommandLogRecord, InputCache, RecoveryMode, should_log
from .storage import FullWindowEvent, Pred, Store, UndoBuffer
from .triggers import TriggerEngine


def encode_args(obj) -> bytes:
    if obj is None:
        return b""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def decode_args(blob: bytes):
    if not blob:
        return None
    return json.loads(blob)


def batches_to_args(batches: dict[str, AtomicBatch]) -> bytes:
    """Border executions carry their input batches as the call arguments,
    which is what makes command-log replay self-contained."""
    payload = {
        stream: {
            "batch_id": b.batch_id,
            "tuples": [[t.tuple_id, t.ts, list(t.values)] for t in b.tuples],
        }
        for stream, b in batches.items()
    }
    return encode_args({"batches": payload})


def args_to_batches(blob: bytes) -> dict[str, AtomicBatch]:
    decoded = decode_args(blob)
    out: dict[str, AtomicBatch] = {}
    for stream, b in decoded["batches"].items():
        out[stream] = AtomicBatch(
            b["batch_id"],
            tuple(
                Tuple(tuple(values), tuple_id=tid, batch_id=b["batch_id"], ts=ts)
                for tid, ts, values in b["tuples"]
            ),
        )
    return out


class Origin(enum.Enum):
    CLIENT = "client"
    TRIGGER = "trigger"
    RECOVERY = "recovery"


class Ticket:
    """Asynchronous outcome of one submitted request.

    ``outcome`` is set at commit/abort; ``acknowledged`` only once the
    commit's log record is durable (immediately when logging is off).
    """

    __slots__ = ("outcome", "reason", "result_rows", "commit_seq", "acknowledged")

    def __init__(self):
        self.outcome: Optional[str] = None
        self.reason = ""
        self.result_rows: Optional[list] = None
        self.commit_seq = 0
        self.acknowledged = False

    @property
    def done(self) -> bool:
        return self.outcome is not None

    @property
    def committed(self) -> bool:
        return self.outcome == "committed"


@dataclass
class TERequest:
    proc: str
    round: int
    args: bytes = b""
    origin: Origin = Origin.CLIENT
    ticket: Optional[Ticket] = None
    group: Optional[str] = None
    solo: bool = False  # strong-recovery replay runs group children one by one


@dataclass
class Counters:
    te_committed: int = 0
    te_aborted: int = 0
    client_roundtrips: int = 0
    pe_dispatches: int = 0
    ee_statement_executions: int = 0
    boundary_crossings: int = 0
    log_records: int = 0
    sync_count: int = 0
    replay_client_dispatches: int = 0
    replay_trigger_dispatches: int = 0
    max_concurrent: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Catalog:
    """Registered workflows and the procedures they contain."""

    def __init__(self):
        self.procedures: dict[str, ProcedureDef] = {}
        self.workflows: dict[str, Workflow] = {}
        self._proc_workflow: dict[str, str] = {}
        self.groups: dict[str, tuple[Workflow, NestedGroup]] = {}

    def add_workflow(self, w: Workflow) -> None:
        for p in w.procedures:
            if p.name in self.procedures:
                raise BadDefinition(f"procedure {p.name} registered twice")
        if w.name in self.workflows:
            raise BadDefinition(f"workflow {w.name} registered twice")
        self.workflows[w.name] = w
        for p in w.procedures:
            self.procedures[p.name] = p
            self._proc_workflow[p.name] = w.name
        for g in w.nested_groups:
            self.groups[g.parent_name] = (w, g)

    def procedure(self, name: str) -> ProcedureDef:
        try:
            return self.procedures[name]
        except KeyError:
            raise UnknownProcedure(name) from None

    def workflow_of(self, proc: str) -> Workflow:
        return self.workflows[self._proc_workflow[proc]]

    def border_procedures(self) -> list[str]:
        return [
            p.name
            for p in self.procedures.values()
            if p.kind is ProcedureKind.BORDER
        ]


class TEContext:
    """The operation surface a procedure body (or trigger program) runs
    against; every mutation lands in this execution's undo buffer."""

    def __init__(self, partition: "Partition", proc: ProcedureDef, round: int, args: bytes):
        self.partition = partition
        self.store: Store = partition.store
        self.proc = proc
        self.round = round
        self.raw_args = args
        self.args = decode_args(args) if not _is_batch_args(proc, args) else None
        self.undo = UndoBuffer()
        self.inputs: dict[str, list[Tuple]] = {}
        self.consumed: list[tuple[str, int]] = []
        self.ee_consumed: list[tuple[str, int]] = []
        self.emitted: list[tuple[str, int]] = []
        self.appended: list[tuple[str, int]] = []  # for abort-time bookkeeping
        self.result_rows: Optional[list] = None
        self._depth = 0

    # --- body API ---

    def input_tuples(self, stream: str) -> list[Tuple]:
        if stream not in self.inputs:
            raise MissingInputBatch(
                f"{self.proc.name} round {self.round}: no input loaded for {stream}"
            )
        return self.inputs[stream]

    def emit(self, stream: str, rows, ts=None, _internal_batch_id=None) -> None:
        """Append an output batch (labeled with this round) to a stream.

        ``rows`` holds value tuples or Tuple instances; tuple ids are stamped
        fresh for the destination stream. Statement triggers attached to the
        stream fire immediately, inside this execution.
        """
        if self.proc.kind is ProcedureKind.OLTP:
            raise BadDefinition("OLTP procedures operate on tables only")
        batch_id = self.round if _internal_batch_id is None else _internal_batch_id
        self._append_to_stream(stream, rows, batch_id, ts, restamp=True)

    def copy_to_stream(self, stream: str, tuples: list[Tuple], batch_id: int) -> None:
        self._append_to_stream(stream, tuples, batch_id, None, restamp=True)

    def _append_to_stream(self, stream, rows, batch_id, ts, restamp) -> None:
        rows = list(rows)
        if not rows:
            return
        ids = self.store.next_tuple_ids(stream, len(rows), self.undo)
        tuples = []
        for tid, r in zip(ids, rows):
            if isinstance(r, Tuple):
                tuples.append(
                    Tuple(r.values, tuple_id=tid, batch_id=batch_id, ts=r.ts)
                )
            else:
                tuples.append(
                    Tuple(
                        tuple(r),
                        tuple_id=tid,
                        batch_id=batch_id,
                        ts=0 if ts is None else ts,
                    )
                )
        batch = AtomicBatch(batch_id, tuple(tuples))
        first = not any(s == stream and b == batch_id for s, b in self.emitted)
        self.store.insert_batch(stream, batch, self.undo)
        if first:
            self.partition.trigger_engine.note_append(stream, batch_id)
            self.emitted.append((stream, batch_id))
            self.appended.append((stream, batch_id))
        self._cascade(stream, batch)

    def _cascade(self, stream: str, batch: AtomicBatch) -> None:
        self._depth += 1
        if self._depth > 64:
            raise BadDefinition("statement trigger cascade too deep")
        try:
            self.partition.trigger_engine.on_stream_append(self, stream, batch)
        finally:
            self._depth -= 1

    def insert(self, table: str, values, ts: int = 0) -> None:
        t = values if isinstance(values, Tuple) else Tuple(tuple(values), ts=ts)
        events = self.store.insert(
            table, t, self.undo, accessor=self.proc.name, round=self.round
        )
        if events:
            self.partition.trigger_engine.on_window_events(self, table, events)

    def select(self, table: str, pred: Optional[Pred] = None) -> list[Tuple]:
        return self.store.select_where(
            table, pred, accessor=self.proc.name, round=self.round
        )

    def delete(self, table: str, pred: Optional[Pred]) -> int:
        return self.store.delete_where(
            table, pred, self.undo, accessor=self.proc.name, round=self.round
        )

    def aggregate(self, table, op, column=None, group_by=None, pred=None):
        return self.store.aggregate(
            table, op, column, group_by, pred,
            accessor=self.proc.name, round=self.round,
        )

    def window_insert(self, window: str, rows) -> list[FullWindowEvent]:
        tuples = [
            r if isinstance(r, Tuple) else Tuple(tuple(r), batch_id=self.round)
            for r in rows
        ]
        events = self.store.window_insert(
            window, tuples, self.undo, accessor=self.proc.name, round=self.round
        )
        if events:
            self.partition.trigger_engine.on_window_events(self, window, events)
        return events

    def delete_batch(self, stream: str, batch_id: int) -> int:
        return self.store.delete_batch(stream, batch_id, self.undo)

    def abort(self, reason: str = "") -> None:
        raise BodyAbort(reason)

    def set_result(self, rows) -> None:
        self.result_rows = rows

    def count_statement(self) -> None:
        self.partition.counters.ee_statement_executions += 1


def _is_batch_args(proc: ProcedureDef, args: bytes) -> bool:
    return proc.kind is ProcedureKind.BORDER and args.startswith(b'{"batches"')


class Partition:
    """One serial execution site: storage, triggers, queues, and schedule."""

    def __init__(
        self,
        pid: int,
        store: Store,
        trigger_engine: TriggerEngine,
        catalog: Catalog,
        log: Optional[CommandLog] = None,
        input_cache: Optional[InputCache] = None,
        recovery_mode: Optional[RecoveryMode] = None,
        schedule_capacity: Optional[int] = None,
        post_commit_hook: Optional[Callable[["Partition"], None]] = None,
    ):
        self.id = pid
        self.store = store
        self.trigger_engine = trigger_engine
        self.catalog = catalog
        self.log = log
        self.input_cache = input_cache
        self.recovery_mode = recovery_mode
        self.schedule_capacity = schedule_capacity
        self.post_commit_hook = post_commit_hook

        self.client_queue: deque[TERequest] = deque()
        self.fast_track: deque[TERequest] = deque()
        self._queue_lock = threading.Lock()
        self.committed_schedule = Schedule()
        self.commit_seq = 0
        self.counters = Counters()
        self.stopped = False
        self._executing = 0
        self._last_enqueued_round: dict[str, int] = {}
        self._border_finished: dict[int, set[str]] = {}
        self._round_outstanding: dict[int, int] = {}
        self._round_base = 0  # rounds at or below this completed pre-recovery
        self._replaying = False

    # --- submission ---

    def submit_client(self, req: TERequest) -> Ticket:
        if self.stopped:
            raise EngineStopped("partition is stopped")
        self.catalog.procedure(req.proc)
        if req.ticket is None:
            req.ticket = Ticket()
        with self._queue_lock:
            self.client_queue.append(req)
        return req.ticket

    def _submit_trigger(self, fires: list[tuple[str, int, Optional[str]]]) -> list[TERequest]:
        """Queue trigger-fired work on the fast track, skipping rounds a
        target already has queued (two producers can complete the same
        round's inputs in one commit)."""
        out = []
        for target, round_, group in fires:
            key = group or target
            if self._last_enqueued_round.get(key, 0) >= round_:
                continue
            self._last_enqueued_round[key] = round_
            req = TERequest(target, round_, origin=Origin.TRIGGER, group=group)
            with self._queue_lock:
                self.fast_track.append(req)
            self._round_outstanding[round_] = (
                self._round_outstanding.get(round_, 0) + 1
            )
            self.counters.boundary_crossings += 1
            if self._replaying:
                self.counters.replay_trigger_dispatches += 1
            out.append(req)
        return out

    # --- scheduling ---

    def schedule_next(self) -> Optional[TERequest]:
        with self._queue_lock:
            if self.fast_track:
                return self.fast_track.popleft()
            if self.client_queue:
                return self.client_queue.popleft()
        return None

    def step(self) -> bool:
        req = self.schedule_next()
        if req is None:
            if self.log is not None:
                self.log.maybe_flush()
                self._refresh_sync_counter()
            return False
        self.execute(req)
        return True

    def run_until_idle(self) -> None:
        while self.step():
            pass

    def drain_and_quiesce(self, timeout: Optional[float] = None) -> None:
        """Finish all fast-track work without starting new client requests."""
        start = time.monotonic()
        while True:
            with self._queue_lock:
                pending = bool(self.fast_track)
            if not pending:
                break
            if timeout is not None and time.monotonic() - start >= timeout:
                raise QuiesceTimeout("fast-track work still pending")
            req = None
            with self._queue_lock:
                if self.fast_track:
                    req = self.fast_track.popleft()
            if req is not None:
                self.execute(req)
        if self.log is not None:
            self.log.flush()
            self._refresh_sync_counter()

    # --- execution ---

    def execute_te(self, req: TERequest) -> str:
        """Run one execution (or its whole nested group) to commit/abort."""
        return self.execute(req)

    def execute_nested(self, group_name: str, round: int, args: bytes = b"") -> str:
        """Run one nested-group instance for a round, children serially with
        nothing interleaved; commits only if every child commits."""
        w, group = self.catalog.groups[group_name]
        from .triggers import group_roots

        root = group_roots(w, group)[0]
        req = TERequest(root, round, args, Origin.CLIENT, group=group_name)
        return self._execute_group(req, group_name)

    def execute(self, req: TERequest) -> str:
        proc = self.catalog.procedure(req.proc)
        group = req.group
        if group is None and proc.is_streaming and not req.solo:
            group = self._group_name(proc)
        try:
            if group is not None:
                outcome = self._execute_group(req, group)
            else:
                outcome = self._execute_solo(req)
        finally:
            if req.origin is Origin.TRIGGER:
                left = self._round_outstanding.get(req.round, 0) - 1
                if left <= 0:
                    self._round_outstanding.pop(req.round, None)
                else:
                    self._round_outstanding[req.round] = left
        if req.origin is Origin.CLIENT:
            self.counters.client_roundtrips += 1
        return outcome

    def _group_name(self, proc: ProcedureDef) -> Optional[str]:
        w = self.catalog.workflow_of(proc.name)
        g = w.group_of(proc.name)
        return g.parent_name if g else None

    def _begin(self):
        self._executing += 1
        self.counters.max_concurrent = max(
            self.counters.max_concurrent, self._executing
        )
        if self._executing > 1:
            raise StreamTxError("serial execution violated")

    def _end(self):
        self._executing -= 1

    def _execute_solo(self, req: TERequest) -> str:
        proc = self.catalog.procedure(req.proc)
        self._begin()
        try:
            ctx, error = self._run_one(proc, req)
        finally:
            self._end()
        if error is not None:
            self._finish_abort(proc, req, error, [ctx], req.ticket)
            return "aborted"
        self._commit_group([(ctx, req)])
        return "committed"

    def _execute_group(self, req: TERequest, group_name: str) -> str:
        w, group = self.catalog.groups[group_name]
        order = [c for c in w.chosen_order if c in group.children]
        self._begin()
        ran: list[tuple[TEContext, TERequest]] = []
        try:
            for child in order:
                proc = self.catalog.procedure(child)
                if child == req.proc:
                    child_req = req
                elif self._inputs_present(proc, req.round):
                    child_req = TERequest(
                        child, req.round, origin=Origin.TRIGGER, group=group_name
                    )
                    self.counters.boundary_crossings += 1
                    if self._replaying:
                        self.counters.replay_trigger_dispatches += 1
                else:
                    continue
                ctx, error = self._run_one(proc, child_req)
                if error is not None:
                    # group rollback: undo every already-finished child too
                    for done_ctx, _ in reversed(ran):
                        done_ctx.undo.rollback()
                    self._finish_abort(
                        proc, child_req, error,
                        [ctx] + [c for c, _ in ran],
                        req.ticket,
                        dropped_inputs=[
                            item for c, _ in ran for item in c.consumed
                        ],
                    )
                    return "aborted"
                ran.append((ctx, child_req))
        finally:
            self._end()
        self._commit_group(ran, group=group)
        return "committed"

    def _inputs_present(self, proc: ProcedureDef, round_: int) -> bool:
        return all(
            any(t.batch_id == round_ for t in self.store.stream(s).rows)
            for s in proc.stream_inputs
        )

    def _run_one(self, proc: ProcedureDef, req: TERequest):
        """Run one execution's inputs and body; mutations stay in its undo
        buffer until the commit decision. Returns (ctx, error|None)."""
        self.counters.pe_dispatches += 1
        if self._replaying and req.origin is Origin.RECOVERY:
            self.counters.replay_client_dispatches += 1
        ctx = TEContext(self, proc, req.round, req.args)
        try:
            if proc.is_streaming:
                self._load_inputs(ctx, proc, req)
            if proc.body is not None:
                proc.body(ctx)
        except (BodyAbort, StreamTxError) as e:
            ctx.undo.rollback()
            return ctx, e
        return ctx, None

    def _load_inputs(self, ctx: TEContext, proc: ProcedureDef, req: TERequest):
        if proc.kind is ProcedureKind.BORDER and _is_batch_args(proc, req.args):
            for stream, batch in sorted(args_to_batches(req.args).items()):
                if stream not in proc.stream_inputs:
                    raise BadDefinition(
                        f"{proc.name}: batch for non-input stream {stream}"
                    )
                self.store.insert_batch(stream, batch, ctx.undo)
                self.trigger_engine.note_append(stream, batch.batch_id)
                ctx.inputs[stream] = list(batch.tuples)
                ctx.consumed.append((stream, batch.batch_id))
                ctx.appended.append((stream, batch.batch_id))
                ctx._cascade(stream, batch)
        for stream in proc.stream_inputs:
            if stream in ctx.inputs:
                continue
            tuples = self.store.stream(stream).batch_tuples(req.round)
            if not tuples:
                raise MissingInputBatch(
                    f"{proc.name}: stream {stream} holds no batch {req.round}"
                )
            ctx.inputs[stream] = tuples
            ctx.consumed.append((stream, req.round))

    # --- commit / abort ---

    def _commit_group(self, ran, group: Optional[NestedGroup] = None) -> None:
        members = set(group.children) if group else ()
        for ctx, req in ran:
            self.commit_seq += 1
            te = TransactionExecution(
                ctx.proc.name, req.round, req.args, self.commit_seq
            )
            self._log_commit(te, ctx.proc, req.ticket)
            self.committed_schedule.append(te)
            if (
                self.schedule_capacity is not None
                and len(self.committed_schedule.entries) > self.schedule_capacity
            ):
                del self.committed_schedule.entries[0]
            self.counters.te_committed += 1
            if req.ticket is not None:
                req.ticket.outcome = "committed"
                req.ticket.commit_seq = self.commit_seq
                req.ticket.result_rows = ctx.result_rows
            if ctx.proc.kind is ProcedureKind.BORDER:
                self._border_finished.setdefault(req.round, set()).add(ctx.proc.name)
            # downstream triggers: in-group consumers already ran inline
            for stream, batch_id in ctx.emitted:
                w = self.catalog.workflow_of(ctx.proc.name)
                consumer = w.consumer_of(stream)
                if consumer is not None and consumer in members:
                    continue
                fires = self.trigger_engine.fire_procedure_triggers(
                    self.catalog.workflow_of, stream, batch_id
                )
                self._submit_trigger(fires)
            self._collect_garbage(ctx)
            if self.post_commit_hook is not None:
                self.post_commit_hook(self)
        if self.log is not None:
            self.log.maybe_flush()
            self._refresh_sync_counter()

    def _finish_abort(
        self,
        proc: ProcedureDef,
        req: TERequest,
        error: Exception,
        rolled_back: list[TEContext],
        ticket: Optional[Ticket],
        dropped_inputs=(),
    ) -> None:
        self.counters.te_aborted += 1
        t = ticket or req.ticket
        if t is not None:
            t.outcome = "aborted"
            t.reason = str(error)
            t.acknowledged = True  # aborts are never logged
        for ctx in rolled_back:
            # appended batches were rolled back: clear trigger obligations
            for key in ctx.appended:
                self.trigger_engine.pending.pop(key, None)
            # a dropped round counts as finished for cache trimming; aborts
            # leave no durable trace, so weak recovery re-submits the round
            # and the deterministic body re-aborts it
            if ctx.proc.kind is ProcedureKind.BORDER:
                self._border_finished.setdefault(req.round, set()).add(
                    ctx.proc.name
                )
        # the round's downstream work is dropped: discard consumed inputs
        # that came from outside the rolled-back scope
        drops = list(dropped_inputs)
        if proc.kind is ProcedureKind.INTERIOR:
            drops.extend((s, req.round) for s in proc.stream_inputs)
        for stream, batch_id in drops:
            self.trigger_engine.note_consumed(stream, batch_id)
            self.store.garbage_collect(stream, batch_id)

    def _collect_garbage(self, ctx: TEContext) -> None:
        for stream, batch_id in ctx.consumed:
            self.trigger_engine.note_consumed(stream, batch_id)
            if self.trigger_engine.gc_eligible(stream, batch_id):
                self.store.garbage_collect(stream, batch_id)
            tab = self.store.stream(stream)
            tab.last_consumed_batch = max(tab.last_consumed_batch, batch_id)
        for stream, batch_id in ctx.ee_consumed:
            if stream in self.trigger_engine.procedure_triggers:
                continue  # a downstream execution still consumes it
            if self.trigger_engine.gc_eligible(stream, batch_id):
                self.store.garbage_collect(stream, batch_id)

    def _log_commit(self, te: TransactionExecution, proc: ProcedureDef, ticket):
        if self.log is None or self.recovery_mode is None:
            if ticket is not None:
                ticket.acknowledged = True
            return
        if self._replaying or not should_log(self.recovery_mode, proc.kind):
            if ticket is not None:
                ticket.acknowledged = True
            return
        self.log.append(
            CommandLogRecord(te.commit_seq, te.procedure, te.round, te.args),
            ticket,
        )
        self.counters.log_records += 1
        self._refresh_sync_counter()

    def _refresh_sync_counter(self):
        if self.log is not None:
            self.counters.sync_count = self.log.sync_count

    # --- trigger surface (module operations live on the partition) ---

    def set_pe_triggers_enabled(self, flag: bool) -> None:
        self.trigger_engine.set_pe_triggers_enabled(flag)

    def fire_procedure_triggers(self, stream: str, batch_id: int) -> list[TERequest]:
        fires = self.trigger_engine.fire_procedure_triggers(
            self.catalog.workflow_of, stream, batch_id
        )
        return self._submit_trigger(fires)

    def refire_nonempty_streams(self) -> list[TERequest]:
        fires = self.trigger_engine.refire_nonempty_streams(self.catalog.workflow_of)
        return self._submit_trigger(fires)

    # --- input cache low-water bookkeeping ---

    def completed_low_water(self) -> int:
        """Highest round r such that every round <= r has fully finished:
        border executions done, no queued trigger work, no pending interior
        batches that could still run."""
        borders = set(self.catalog.border_procedures())
        if not borders:
            return 0
        interior_streams = [
            e.stream for w in self.catalog.workflows.values() for e in w.edges
        ]
        pending_rounds = set()
        for s in interior_streams:
            pending_rounds.update(self.store.stream(s).pending_batches())
        with self._queue_lock:
            queued_rounds = {r.round for r in self.fast_track}
        low = self._round_base
        r = low + 1
        while True:
            if self._border_finished.get(r, set()) != borders:
                break
            if r in queued_rounds or self._round_outstanding.get(r, 0) > 0:
                break
            if r in pending_rounds:
                break
            low = r
            r += 1
        return low


