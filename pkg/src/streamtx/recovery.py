"""Durability: command log with group commit, input caching, recovery replay.

Log file layout (little-endian):

    header:  magic "STXLOG01" | version u32 | mode u8 | partition u32
    record:  len u32 | commit_seq u64 | name len u16 + name | round u64 |
             args len u32 + args | CRC32 over the record minus len and crc

The input cache uses the same framing with batch payloads and backs the
weak-recovery upstream-backup scheme: every external batch is durable there
before its border execution is acknowledged.
"""

from __future__ import annotations

import enum
import os
import struct
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .errors import CorruptLogRecord, LogWriteFailure
from .model import AtomicBatch, ProcedureKind, Tuple

LOG_MAGIC = b"STXLOG01"
CACHE_MAGIC = b"STXINP01"
LOG_VERSION = 1


class RecoveryMode(enum.Enum):
    STRONG = 1
    WEAK = 2


def should_log(mode: RecoveryMode, kind: ProcedureKind) -> bool:
    """Strong logs every commit; weak logs only transactions with no
    upstream that could regenerate them (border streaming and OLTP)."""
    if mode is RecoveryMode.STRONG:
        return True
    return kind in (ProcedureKind.BORDER, ProcedureKind.OLTP)


@dataclass(frozen=True, slots=True)
class CommandLogRecord:
    commit_seq: int
    procedure: str
    round: int
    args: bytes

    def encode(self) -> bytes:
        name = self.procedure.encode()
        payload = struct.pack("<QH", self.commit_seq, len(name)) + name
        payload += struct.pack("<QI", self.round, len(self.args)) + self.args
        payload += struct.pack("<I", zlib.crc32(payload))
        return struct.pack("<I", len(payload)) + payload


def _decode_record(payload: bytes) -> CommandLogRecord:
    if len(payload) < 8 + 2 + 8 + 4 + 4:
        raise CorruptLogRecord("record too short")
    body, crc = payload[:-4], struct.unpack("<I", payload[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptLogRecord("record checksum mismatch")
    seq, name_len = struct.unpack_from("<QH", body, 0)
    off = 10
    name = body[off : off + name_len].decode()
    off += name_len
    round_, args_len = struct.unpack_from("<QI", body, off)
    off += 12
    args = body[off : off + args_len]
    return CommandLogRecord(seq, name, round_, args)


class CommandLog:
    """Append-only command log with group commit.

    Records buffer in memory and reach disk on flush; tickets attached to
    buffered records are acknowledged only once their flush completes. A
    flush happens when ``max_batch`` records are pending, when the oldest
    pending record is older than ``max_delay``, or explicitly.
    """

    def __init__(
        self,
        path: str,
        mode: RecoveryMode,
        partition_id: int = 0,
        max_batch: int = 1,
        max_delay: float = 0.005,
        fsync: bool = True,
    ):
        self.path = path
        self.mode = mode
        self.partition_id = partition_id
        self.max_batch = max(1, max_batch)
        self.max_delay = max_delay
        self.fsync = fsync
        self.sync_count = 0
        self.records_written = 0
        self._pending: list[tuple[CommandLogRecord, object]] = []
        self._pending_since: Optional[float] = None
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        try:
            self._fh = open(path, "ab")
            if fresh:
                self._fh.write(
                    LOG_MAGIC
                    + struct.pack("<IBI", LOG_VERSION, mode.value, partition_id)
                )
                self._fh.flush()
        except OSError as e:
            raise LogWriteFailure(str(e)) from e

    def append(self, record: CommandLogRecord, ticket=None) -> None:
        self._pending.append((record, ticket))
        if self._pending_since is None:
            self._pending_since = time.monotonic()
        if len(self._pending) >= self.max_batch:
            self.flush()

    def maybe_flush(self) -> None:
        """Timer surrogate: flush if the oldest pending record is overdue."""
        if self._pending and (
            time.monotonic() - self._pending_since >= self.max_delay
        ):
            self.flush()

    def flush(self) -> int:
        """Write and sync all pending records, then release their tickets."""
        if not self._pending:
            return 0
        batch, self._pending = self._pending, []
        self._pending_since = None
        try:
            for record, _ in batch:
                self._fh.write(record.encode())
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as e:
            raise LogWriteFailure(str(e)) from e
        self.sync_count += 1
        self.records_written += len(batch)
        for _, ticket in batch:
            if ticket is not None:
                ticket.acknowledged = True
        return len(batch)

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def crash(self) -> None:
        """Drop buffered records and close, as a power failure would."""
        self._pending.clear()
        self._pending_since = None
        self._fh.close()

    def close(self) -> None:
        self.flush()
        self._fh.close()


def read_log(path: str) -> tuple[RecoveryMode, int, list[CommandLogRecord]]:
    """Read a command log; a torn record truncates the tail (standard rule).

    Returns (mode, partition_id, records in file order).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    head_len = len(LOG_MAGIC) + 9
    if len(blob) < head_len or blob[: len(LOG_MAGIC)] != LOG_MAGIC:
        raise CorruptLogRecord("bad log header")
    version, mode_v, partition_id = struct.unpack_from("<IBI", blob, len(LOG_MAGIC))
    if version != LOG_VERSION:
        raise CorruptLogRecord(f"unsupported log version {version}")
    mode = RecoveryMode(mode_v)
    records: list[CommandLogRecord] = []
    off = head_len
    while off < len(blob):
        if off + 4 > len(blob):
            break  # torn length prefix
        (rec_len,) = struct.unpack_from("<I", blob, off)
        if off + 4 + rec_len > len(blob):
            break  # torn record body
        try:
            rec = _decode_record(blob[off + 4 : off + 4 + rec_len])
        except CorruptLogRecord:
            break  # corrupted tail: ignore this and everything after
        if records and rec.commit_seq <= records[-1].commit_seq:
            raise CorruptLogRecord("commit sequence not increasing")
        records.append(rec)
        off += 4 + rec_len
    return mode, partition_id, records


def truncate_log(path: str, mode: RecoveryMode, partition_id: int) -> None:
    """Start the log over (after a checkpoint made old records redundant)."""
    with open(path, "wb") as fh:
        fh.write(LOG_MAGIC + struct.pack("<IBI", LOG_VERSION, mode.value, partition_id))
        fh.flush()
        os.fsync(fh.fileno())


# --- upstream backup ---


def _encode_values(values) -> bytes:
    out = struct.pack("<H", len(values))
    for v in values:
        if type(v) is int:
            out += b"\x00" + struct.pack("<q", v)
        elif type(v) is float:
            out += b"\x01" + struct.pack("<d", v)
        else:
            b = v.encode()
            out += b"\x02" + struct.pack("<H", len(b)) + b
    return out


def _decode_values(body: bytes, off: int) -> tuple[tuple, int]:
    (count,) = struct.unpack_from("<H", body, off)
    off += 2
    values = []
    for _ in range(count):
        tag = body[off]
        off += 1
        if tag == 0:
            values.append(struct.unpack_from("<q", body, off)[0])
            off += 8
        elif tag == 1:
            values.append(struct.unpack_from("<d", body, off)[0])
            off += 8
        else:
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            values.append(body[off : off + n].decode())
            off += n
    return tuple(values), off


def _encode_batch(stream: str, batch: AtomicBatch) -> bytes:
    name = stream.encode()
    payload = struct.pack("<QH", batch.batch_id, len(name)) + name
    payload += struct.pack("<I", len(batch.tuples))
    for t in batch.tuples:
        payload += struct.pack("<qqq", t.tuple_id, t.batch_id, t.ts)
        payload += _encode_values(t.values)
    payload += struct.pack("<I", zlib.crc32(payload))
    return struct.pack("<I", len(payload)) + payload


def _decode_batch(payload: bytes) -> tuple[str, AtomicBatch]:
    body, crc = payload[:-4], struct.unpack("<I", payload[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptLogRecord("cached batch checksum mismatch")
    batch_id, name_len = struct.unpack_from("<QH", body, 0)
    off = 10
    stream = body[off : off + name_len].decode()
    off += name_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tuples = []
    for _ in range(count):
        tid, bid, ts = struct.unpack_from("<qqq", body, off)
        off += 24
        values, off = _decode_values(body, off)
        tuples.append(Tuple(values, tuple_id=tid, batch_id=bid, ts=ts))
    return stream, AtomicBatch(batch_id, tuple(tuples))


@dataclass
class InputCache:
    """Retained external batches, durable before the border ack (weak mode).

    A batch may be trimmed only once every execution of its round finished;
    the caller computes that low-water round.
    """

    path: Optional[str] = None
    retained: dict[str, list[AtomicBatch]] = field(default_factory=dict)
    low_water: int = 0

    def __post_init__(self):
        self._fh = None
        if self.path is not None:
            fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
            self._fh = open(self.path, "ab")
            if fresh:
                self._fh.write(CACHE_MAGIC)
                self._fh.flush()

    def append(self, stream: str, batch: AtomicBatch) -> None:
        self.retained.setdefault(stream, []).append(batch)
        if self._fh is not None:
            self._fh.write(_encode_batch(stream, batch))
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def trim(self, low_water: int) -> int:
        """Drop retained batches with round <= low_water. Monotone."""
        if low_water <= self.low_water:
            return 0
        removed = 0
        for stream, batches in self.retained.items():
            keep = [b for b in batches if b.batch_id > low_water]
            removed += len(batches) - len(keep)
            self.retained[stream] = keep
        self.low_water = low_water
        return removed

    def compact(self) -> None:
        """Rewrite the durable file to hold only still-retained batches."""
        if self._fh is None:
            return
        self._fh.close()
        with open(self.path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            for stream in sorted(self.retained):
                for batch in self.retained[stream]:
                    fh.write(_encode_batch(stream, batch))
            fh.flush()
            os.fsync(fh.fileno())
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def crash(self) -> None:
        self.close()


def read_input_cache(path: str) -> dict[str, list[AtomicBatch]]:
    """All cached batches by stream, in append order; torn tail dropped."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CACHE_MAGIC) or blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CorruptLogRecord("bad input cache header")
    out: dict[str, list[AtomicBatch]] = {}
    off = len(CACHE_MAGIC)
    while off < len(blob):
        if off + 4 > len(blob):
            break
        (rec_len,) = struct.unpack_from("<I", blob, off)
        if off + 4 + rec_len > len(blob):
            break
        try:
            stream, batch = _decode_batch(blob[off + 4 : off + 4 + rec_len])
        except CorruptLogRecord:
            break
        out.setdefault(stream, []).append(batch)
        off += 4 + rec_len
    return out


@dataclass(frozen=True)
class DispatchCounts:
    """Replay work split by path: client-style dispatches vs trigger-internal."""

    client_path: int
    trigger_path: int

    @property
    def total(self) -> int:
        return self.client_path + self.trigger_path


def recovery_dispatch_count(
    mode: RecoveryMode, n_procedures: int, rounds: int, oltp: int = 0
) -> DispatchCounts:
    """Predicted replay dispatches for an n-procedure chain workload.

    Strong replay drives every logged execution through the client path;
    weak replay drives only border (and OLTP) records that way and lets
    live triggers regenerate the interiors.
    """
    if mode is RecoveryMode.STRONG:
        return DispatchCounts(rounds * n_procedures + oltp, 0)
    return DispatchCounts(rounds + oltp, rounds * (n_procedures - 1))
