"""Stream injection: turns tuple feeds into atomic batches and drives the
border procedures; also the pull path for OLTP calls."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .engine import Engine
from .errors import EngineStopped, SchemaMismatch
from .executor import Ticket
from .model import AtomicBatch, Tuple
from .storage import ScalarType


@dataclass(frozen=True)
class BatchingPolicy:
    """fixed_count(k) cuts every k tuples; same_timestamp groups maximal
    runs of equal ts."""

    mode: str  # "fixed_count" | "same_timestamp"
    count: int = 1

    def __post_init__(self):
        if self.mode not in ("fixed_count", "same_timestamp"):
            raise ValueError(f"unknown batching mode {self.mode}")
        if self.mode == "fixed_count" and self.count < 1:
            raise ValueError("fixed_count needs count >= 1")


@dataclass
class FeedSource:
    """A deterministic, replayable tuple source: (values, ts) pairs.

    ``rate`` is tuples/sec for paced replay; None means max speed. Pacing is
    applied by the CLI driver; library ingestion always runs at full speed.
    """

    rows: Sequence[tuple[tuple, int]]
    rate: Optional[float] = None

    @classmethod
    def from_values(cls, values: Iterable, ts: int = 0) -> "FeedSource":
        return cls([(tuple(v) if isinstance(v, (tuple, list)) else (v,), ts) for v in values])

    @classmethod
    def from_csv(cls, path: str, schema, ts_column: Optional[str] = None) -> "FeedSource":
        """CSV with a header row naming columns; coerced per stream schema."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for line in reader:
                values = []
                for col in schema:
                    if col.name not in line:
                        raise SchemaMismatch(f"feed missing column {col.name}")
                    raw = line[col.name]
                    if col.type is ScalarType.INT:
                        values.append(int(raw))
                    elif col.type is ScalarType.FLOAT:
                        values.append(float(raw))
                    else:
                        values.append(raw)
                ts = int(line[ts_column]) if ts_column else 0
                rows.append((tuple(values), ts))
        return cls(rows)


class StreamIngestor:
    """Batches one external stream's feed and submits border rounds.

    Assigns consecutive batch ids starting at 1 and stamps monotonically
    increasing tuple ids; replaying the same feed yields identical batches.
    """

    def __init__(self, engine: Engine, stream: str, policy: BatchingPolicy):
        self.engine = engine
        self.stream = stream
        self.policy = policy
        self.next_batch_id = 1
        self.next_tuple_id = 1
        self.closed = False
        self._buffer: list[Tuple] = []
        self._buffer_ts: Optional[int] = None
        self.tickets: list[Ticket] = []

    def push(self, values: tuple, ts: int = 0) -> Optional[Ticket]:
        if self.closed:
            raise EngineStopped(f"stream {self.stream} is closed")
        t = Tuple(
            tuple(values),
            tuple_id=self.next_tuple_id,
            batch_id=self.next_batch_id,
            ts=ts,
        )
        if self.policy.mode == "same_timestamp":
            if self._buffer and ts != self._buffer_ts:
                self._flush()
                t = Tuple(
                    t.values,
                    tuple_id=self.next_tuple_id,
                    batch_id=self.next_batch_id,
                    ts=ts,
                )
            self._buffer_ts = ts
            self._buffer.append(t)
            self.next_tuple_id += 1
            return None
        self._buffer.append(t)
        self.next_tuple_id += 1
        if len(self._buffer) >= self.policy.count:
            return self._flush()
        return None

    def _flush(self) -> Optional[Ticket]:
        if not self._buffer:
            return None
        batch = AtomicBatch(self.next_batch_id, tuple(self._buffer))
        self._buffer = []
        self._buffer_ts = None
        self.next_batch_id += 1
        ticket = self.engine.ingest_batch(self.stream, batch)
        if ticket is not None:
            self.tickets.append(ticket)
        return ticket

    def end_of_stream(self) -> None:
        """Flush any partial batch and refuse further pushes."""
        self._flush()
        self.closed = True


def ingest(
    engine: Engine, feed: FeedSource, policy: BatchingPolicy, stream: str
) -> list[Ticket]:
    """Feed a whole source through an ingestor, then close the stream."""
    ing = StreamIngestor(engine, stream, policy)
    for values, ts in feed.rows:
        ing.push(values, ts)
    ing.end_of_stream()
    return ing.tickets


def call_oltp(engine: Engine, proc: str, args=None) -> Ticket:
    return engine.call_oltp(proc, args)
