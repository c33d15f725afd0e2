"""Engine assembly: builds a partition from a declarative spec, feeds it
atomic batches, takes checkpoints, and recovers after a crash.

One Engine wraps one partition. Partitioned deployments instantiate several
engines that share nothing (see ``partitioned_engines``).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    BadDefinition,
    NotPartitionable,
    ReplayDivergence,
    VersionMismatch,
)
from .executor import (
    Catalog,
    Origin,
    Partition,
    TERequest,
    Ticket,
    batches_to_args,
    encode_args,
)
from .model import AtomicBatch, ProcedureKind, Workflow
from .recovery import (
    CommandLog,
    InputCache,
    RecoveryMode,
    read_input_cache,
    read_log,
    truncate_log,
)
from .snapshot import restore_state, snapshot_state, verify_snapshot
from .storage import Store, make_schema
from .triggers import StatementTrigger, TriggerEngine

SNAPSHOT_RE = re.compile(r"^snapshot-(\d{12})\.snap$")
LOG_FILE = "command.log"
CACHE_FILE = "input.cache"


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[tuple[str, str], ...]
    indexes: tuple[str, ...] = ()


@dataclass(frozen=True)
class StreamDef:
    name: str
    columns: tuple[tuple[str, str], ...]


@dataclass
class EngineSpec:
    """Everything needed to build (or rebuild, for recovery) an engine."""

    workflows: list[Workflow] = field(default_factory=list)
    tables: list[TableDef] = field(default_factory=list)
    streams: list[StreamDef] = field(default_factory=list)
    window_columns: dict[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)
    statement_triggers: list[StatementTrigger] = field(default_factory=list)
    use_procedure_triggers: bool = True  # off = client-driven baseline mode
    partition_key: Optional[str] = None  # hash column for partitioned runs
    seed_rows: dict[str, list[tuple]] = field(default_factory=dict)


class Engine:
    def __init__(
        self,
        spec: EngineSpec,
        partition_id: int = 0,
        data_dir: Optional[str] = None,
        recovery_mode: Optional[RecoveryMode] = None,
        group_commit_max_batch: int = 1,
        group_commit_max_delay: float = 0.005,
        fsync: bool = True,
        schedule_capacity: Optional[int] = None,
        post_commit_hook: Optional[Callable] = None,
        queue_bound: int = 10_000,
    ):
        self.spec = spec
        self.partition_id = partition_id
        self.data_dir = data_dir
        self.recovery_mode = recovery_mode
        self.queue_bound = queue_bound

        store = Store()
        for t in spec.tables:
            store.create_public(t.name, make_schema(*t.columns), t.indexes)
        for s in spec.streams:
            store.create_stream(s.name, make_schema(*s.columns))
        if spec.seed_rows:
            from .model import Tuple
            from .storage import UndoBuffer

            seed_undo = UndoBuffer()
            for table, rows in spec.seed_rows.items():
                for row in rows:
                    store.insert(table, Tuple(tuple(row)), seed_undo)
        catalog = Catalog()
        for w in spec.workflows:
            catalog.add_workflow(w)
            for p in w.procedures:
                for wd in p.window_defs:
                    if wd.name not in spec.window_columns:
                        raise BadDefinition(f"window {wd.name} has no schema")
                    store.create_window(
                        wd, make_schema(*spec.window_columns[wd.name])
                    )
        triggers = TriggerEngine(store)
        for st in spec.statement_triggers:
            triggers.register_statement_trigger(st)
        if spec.use_procedure_triggers:
            for w in spec.workflows:
                for e in w.edges:
                    triggers.register_procedure_trigger(
                        e.stream, w.procedure(e.consumer)
                    )

        log = None
        input_cache = InputCache()
        if recovery_mode is not None and data_dir is not None:
            os.makedirs(data_dir, exist_ok=True)
            log = CommandLog(
                os.path.join(data_dir, LOG_FILE),
                recovery_mode,
                partition_id,
                max_batch=group_commit_max_batch,
                max_delay=group_commit_max_delay,
                fsync=fsync,
            )
            if recovery_mode is RecoveryMode.WEAK:
                input_cache = InputCache(os.path.join(data_dir, CACHE_FILE))

        self.partition = Partition(
            partition_id,
            store,
            triggers,
            catalog,
            log=log,
            input_cache=input_cache,
            recovery_mode=recovery_mode,
            schedule_capacity=schedule_capacity,
            post_commit_hook=post_commit_hook,
        )
        # border procedures whose round is waiting for more input streams
        self._feeder_pending: dict[str, dict[int, dict[str, AtomicBatch]]] = {}
        self._border_for_stream: dict[str, str] = {}
        for w in spec.workflows:
            produced = {e.stream for e in w.edges}
            for p in w.procedures:
                if p.kind is ProcedureKind.BORDER:
                    for s in p.stream_inputs:
                        if s not in produced:
                            self._border_for_stream[s] = p.name

    # --- convenience accessors ---

    @property
    def store(self) -> Store:
        return self.partition.store

    @property
    def counters(self):
        return self.partition.counters

    @property
    def committed_schedule(self):
        return self.partition.committed_schedule

    @property
    def catalog(self) -> Catalog:
        return self.partition.catalog

    # --- ingestion and client calls ---

    def ingest_batch(
        self, stream: str, batch: AtomicBatch, resubmit: bool = False
    ) -> Optional[Ticket]:
        """Hand one external batch to its border procedure.

        The batch lands in the input cache first (durably, in weak mode), so
        an unacknowledged round survives a crash. Returns the round's ticket
        once every input stream of the border procedure has its batch.
        """
        proc_name = self._border_for_stream.get(stream)
        if proc_name is None:
            raise BadDefinition(f"stream {stream} is not a border input")
        if not resubmit:
            self.partition.input_cache.append(stream, batch)
        proc = self.catalog.procedure(proc_name)
        pending = self._feeder_pending.setdefault(proc_name, {})
        slot = pending.setdefault(batch.batch_id, {})
        slot[stream] = batch
        if len(slot) < len(proc.stream_inputs):
            return None
        del pending[batch.batch_id]
        self._backpressure()
        req = TERequest(
            proc_name, batch.batch_id, batches_to_args(slot), Origin.CLIENT
        )
        return self.partition.submit_client(req)

    def _backpressure(self) -> None:
        depth = len(self.partition.client_queue) + len(self.partition.fast_track)
        if depth >= self.queue_bound:
            self.run_until_idle()

    def call_oltp(self, proc: str, args=None) -> Ticket:
        from .errors import WrongKind

        p = self.catalog.procedure(proc)
        if p.kind is not ProcedureKind.OLTP:
            raise WrongKind(f"{proc} is not an OLTP procedure")
        req = TERequest(proc, 0, encode_args(args), Origin.CLIENT)
        return self.partition.submit_client(req)

    def await_ticket(self, ticket: Ticket) -> Ticket:
        """Pump until the outcome is known, then force the group-commit
        timer if the acknowledgment is still buffered."""
        while not ticket.done:
            if not self.partition.step():
                break
        if ticket.done and not ticket.acknowledged and self.partition.log:
            self.partition.log.flush()
            self.partition._refresh_sync_counter()
        return ticket

    # --- execution pumps ---

    def step(self) -> bool:
        return self.partition.step()

    def run_until_idle(self) -> None:
        self.partition.run_until_idle()

    def drain_and_quiesce(self, timeout: Optional[float] = None) -> None:
        self.partition.drain_and_quiesce(timeout)

    # --- durability ---

    def snapshot_bytes(self) -> bytes:
        return snapshot_state(
            self.store, self.partition_id, self.partition.commit_seq
        )

    def checkpoint(self) -> str:
        """Quiesce, write a snapshot, truncate the log, trim the cache."""
        if self.data_dir is None:
            raise BadDefinition("checkpoint needs a data directory")
        self.drain_and_quiesce()
        if self.partition.log is not None:
            self.partition.log.flush()
        blob = self.snapshot_bytes()
        path = os.path.join(
            self.data_dir, f"snapshot-{self.partition.commit_seq:012d}.snap"
        )
        with open(path, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        if self.partition.log is not None and self.recovery_mode is not None:
            truncate_log(
                os.path.join(self.data_dir, LOG_FILE),
                self.recovery_mode,
                self.partition_id,
            )
        self.partition.input_cache.trim(self.partition.completed_low_water())
        self.partition.input_cache.compact()
        return path

    def crash(self) -> None:
        """Die without flushing anything buffered, like a power failure."""
        self.partition.stopped = True
        if self.partition.log is not None:
            self.partition.log.crash()
        self.partition.input_cache.crash()

    def close(self) -> None:
        if self.partition.log is not None:
            self.partition.log.close()
        self.partition.input_cache.close()
        self.partition.stopped = True

    # --- recovery plumbing ---

    def _restore_snapshot(self, blob: bytes) -> int:
        store, pid, seq = restore_state(blob)
        if set(store.tables) != set(self.store.tables):
            raise VersionMismatch(
                "snapshot tables do not match the configured catalog"
            )
        self.partition.store = store
        self.partition.trigger_engine.store = store
        self.partition.commit_seq = seq
        ext = list(self._border_for_stream)
        self.partition._round_base = min(
            (store.stream(s).last_consumed_batch for s in ext), default=0
        )
        return seq


def latest_valid_snapshot(data_dir: str) -> Optional[bytes]:
    """Newest snapshot that passes its checksum; torn ones are skipped."""
    candidates = []
    for name in os.listdir(data_dir):
        m = SNAPSHOT_RE.match(name)
        if m:
            candidates.append((int(m.group(1)), name))
    for _, name in sorted(candidates, reverse=True):
        blob = open(os.path.join(data_dir, name), "rb").read()
        try:
            verify_snapshot(blob)
        except Exception:
            continue
        return blob
    return None


def recover(
    spec: EngineSpec,
    data_dir: str,
    partition_id: int = 0,
    expect_mode: Optional[RecoveryMode] = None,
    **engine_kwargs,
) -> Engine:
    """Bring a crashed engine back per the mode recorded in its log."""
    log_path = os.path.join(data_dir, LOG_FILE)
    mode, _, records = read_log(log_path)
    if expect_mode is not None and mode is not expect_mode:
        raise VersionMismatch(
            f"log was written in {mode.name} mode, not {expect_mode.name}"
        )
    engine = Engine(
        spec,
        partition_id=partition_id,
        data_dir=data_dir,
        recovery_mode=mode,
        **engine_kwargs,
    )
    blob = latest_valid_snapshot(data_dir)
    snapshot_seq = 0
    if blob is not None:
        snapshot_seq = engine._restore_snapshot(blob)
    if mode is RecoveryMode.STRONG:
        _replay_strong(engine, records, snapshot_seq)
    else:
        _replay_weak(engine, records, snapshot_seq, data_dir)
    return engine


def recover_strong(spec: EngineSpec, data_dir: str, **kw) -> Engine:
    """Restore the snapshot, replay every logged execution once with
    procedure triggers disabled, re-enable, refire pending streams."""
    return recover(spec, data_dir, expect_mode=RecoveryMode.STRONG, **kw)


def recover_weak(spec: EngineSpec, data_dir: str, **kw) -> Engine:
    """Restore the snapshot, refire pending streams, replay border and OLTP
    records with triggers live, then re-submit unconsumed cached input."""
    return recover(spec, data_dir, expect_mode=RecoveryMode.WEAK, **kw)


def _replay_strong(engine: Engine, records, snapshot_seq: int) -> None:
    """Replay every logged execution once, triggers off, then refire."""
    p = engine.partition
    p.set_pe_triggers_enabled(False)
    p._replaying = True
    try:
        for rec in records:
            if rec.commit_seq <= snapshot_seq:
                continue
            if rec.commit_seq != p.commit_seq + 1:
                raise ReplayDivergence(
                    f"expected commit {p.commit_seq + 1}, log has {rec.commit_seq}"
                )
            req = TERequest(
                rec.procedure, rec.round, rec.args, Origin.RECOVERY, solo=True
            )
            outcome = p.execute(req)
            if outcome != "committed":
                raise ReplayDivergence(
                    f"{rec.procedure} round {rec.round} aborted during replay"
                )
    finally:
        p._replaying = False
        p.set_pe_triggers_enabled(True)
    p.refire_nonempty_streams()


def _replay_weak(engine: Engine, records, snapshot_seq: int, data_dir: str) -> None:
    """Replay border and OLTP records with triggers live; interiors come back
    through the triggers. Ends with a fresh checkpoint so commit sequences
    stay consistent with the (rotated) log."""
    p = engine.partition
    p._replaying = True
    try:
        p.refire_nonempty_streams()
        p.run_until_idle()
        for rec in records:
            if rec.commit_seq <= snapshot_seq:
                continue
            req = TERequest(rec.procedure, rec.round, rec.args, Origin.RECOVERY)
            outcome = p.execute(req)
            if outcome != "committed":
                raise ReplayDivergence(
                    f"{rec.procedure} round {rec.round} aborted during replay"
                )
            p.run_until_idle()
    finally:
        p._replaying = False
    # reload the retained input batches before checkpoint compacts the file
    cache_path = os.path.join(data_dir, CACHE_FILE)
    cached: dict[str, list[AtomicBatch]] = {}
    if os.path.exists(cache_path):
        cached = read_input_cache(cache_path)
        p.input_cache.retained = {
            s: [
                b
                for b in bs
                if b.batch_id > engine.store.stream(s).last_consumed_batch
            ]
            for s, bs in cached.items()
        }
    engine.checkpoint()
    # re-submit retained batches whose border execution never committed
    for stream in sorted(cached):
        consumed = engine.store.stream(stream).last_consumed_batch
        for batch in cached[stream]:
            if batch.batch_id > consumed:
                engine.ingest_batch(stream, batch, resubmit=True)


def partitioned_engines(
    spec_builder: Callable[[int], EngineSpec],
    p: int,
    **engine_kwargs,
) -> list[Engine]:
    """p share-nothing engines for a hash-partitionable workload."""
    spec0 = spec_builder(0)
    if spec0.partition_key is None:
        raise NotPartitionable("workload declares no partition key")
    if p < 1:
        raise BadDefinition("partition count must be >= 1")
    return [
        Engine(spec_builder(i), partition_id=i, **engine_kwargs) for i in range(p)
    ]


def route_partition(key_value, p: int) -> int:
    """Stable hash routing; identical across processes and runs."""
    import zlib as _z

    data = repr(key_value).encode()
    return _z.crc32(data) % p
