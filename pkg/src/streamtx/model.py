"""Core domain vocabulary: tuples, batches, procedures, workflows, schedules.

Everything here is immutable after construction and safe to share; all
validation happens at registration time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .errors import (
    BadDefinition,
    CycleDetected,
    DuplicateName,
    UnknownStream,
    WindowOwnedByTwoProcedures,
)

Value = int | float | str

MAX_TEXT_BYTES = 64


@dataclass(frozen=True, slots=True)
class Tuple:
    """One stream or table row: scalar values plus ordering metadata."""

    values: tuple[Value, ...]
    tuple_id: int = 0
    batch_id: int = 0
    ts: int = 0


@dataclass(frozen=True, slots=True)
class AtomicBatch:
    """A contiguous run of stream tuples processed as one indivisible unit."""

    batch_id: int
    tuples: tuple[Tuple, ...]

    def __post_init__(self):
        if not self.tuples:
            raise BadDefinition("atomic batch must be nonempty")
        for t in self.tuples:
            if t.batch_id != self.batch_id:
                raise BadDefinition(
                    f"tuple batch_id {t.batch_id} != batch {self.batch_id}"
                )


class ProcedureKind(enum.Enum):
    OLTP = "oltp"
    BORDER = "border"
    INTERIOR = "interior"


@dataclass(frozen=True, slots=True)
class WindowSpec:
    """Tuple-based sliding window: fixed size, fixed slide, one owner."""

    name: str
    size: int
    slide: int
    owner: str

    def __post_init__(self):
        if self.size < 1:
            raise BadDefinition(f"window {self.name}: size must be >= 1")
        if not (1 <= self.slide <= self.size):
            raise BadDefinition(f"window {self.name}: need 1 <= slide <= size")

    @property
    def tumbling(self) -> bool:
        return self.slide == self.size


@dataclass(frozen=True)
class ProcedureDef:
    """A named transaction definition.

    ``body`` is a deterministic callable run once per execution; it receives
    the execution context (see executor.TEContext) and must derive all its
    behavior from (args, round, database state) only.
    """

    name: str
    kind: ProcedureKind
    stream_inputs: tuple[str, ...] = ()
    window_defs: tuple[WindowSpec, ...] = ()
    table_inputs: tuple[str, ...] = ()
    body: Optional[Callable] = None

    def __post_init__(self):
        if self.kind is ProcedureKind.OLTP:
            if self.stream_inputs or self.window_defs:
                raise BadDefinition(
                    f"{self.name}: OLTP procedures take no streams or windows"
                )
        else:
            if not self.stream_inputs:
                raise BadDefinition(
                    f"{self.name}: streaming procedures need at least one stream input"
                )
        for w in self.window_defs:
            if w.owner != self.name:
                raise BadDefinition(
                    f"window {w.name} declared on {self.name} but owned by {w.owner}"
                )

    @property
    def is_streaming(self) -> bool:
        return self.kind is not ProcedureKind.OLTP


@dataclass(frozen=True, slots=True)
class NestedGroup:
    """Two or more procedures executing as one isolation unit per round."""

    parent_name: str
    children: tuple[str, ...]
    partial_order: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(self.children) < 2:
            raise BadDefinition(f"group {self.parent_name}: needs >= 2 children")
        cset = set(self.children)
        for before, after in self.partial_order:
            if before not in cset or after not in cset:
                raise BadDefinition(
                    f"group {self.parent_name}: order pair ({before},{after}) "
                    "names a non-child"
                )
        if _has_cycle(self.children, list(self.partial_order)):
            raise BadDefinition(f"group {self.parent_name}: partial order is cyclic")


@dataclass(frozen=True, slots=True)
class Edge:
    """producer --stream--> consumer."""

    producer: str
    stream: str
    consumer: str


@dataclass(frozen=True)
class Workflow:
    """A validated DAG of procedures with one topological ordering fixed."""

    name: str
    procedures: tuple[ProcedureDef, ...]
    edges: tuple[Edge, ...]
    chosen_order: tuple[str, ...]
    nested_groups: tuple[NestedGroup, ...] = ()

    def procedure(self, name: str) -> ProcedureDef:
        for p in self.procedures:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def procedure_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.procedures)

    def streaming_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.procedures if p.is_streaming)

    def external_streams(self) -> tuple[str, ...]:
        """Border input streams, i.e. stream inputs no edge produces."""
        produced = {e.stream for e in self.edges}
        out = []
        for p in self.procedures:
            for s in p.stream_inputs:
                if s not in produced and s not in out:
                    out.append(s)
        return tuple(out)

    def output_streams(self, proc: str) -> tuple[str, ...]:
        return tuple(e.stream for e in self.edges if e.producer == proc)

    def consumer_of(self, stream: str) -> Optional[str]:
        for e in self.edges:
            if e.stream == stream:
                return e.consumer
        return None

    def group_of(self, proc: str) -> Optional[NestedGroup]:
        for g in self.nested_groups:
            if proc in g.children:
                return g
        return None


@dataclass(frozen=True, slots=True)
class TransactionExecution:
    """One committed instance of a procedure."""

    procedure: str
    round: int
    args: bytes = b""
    commit_seq: int = 0


@dataclass
class Schedule:
    """Committed executions ordered by commit sequence."""

    entries: list[TransactionExecution] = field(default_factory=list)

    def append(self, te: TransactionExecution) -> None:
        self.entries.append(te)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _has_cycle(nodes: Iterable[str], pairs: list[tuple[str, str]]) -> bool:
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in pairs:
        succ[a].append(b)
    seen: dict[str, int] = {}  # 0 = visiting, 1 = done

    def visit(n: str) -> bool:
        state = seen.get(n)
        if state == 0:
            return True
        if state == 1:
            return False
        seen[n] = 0
        for m in succ[n]:
            if visit(m):
                return True
        seen[n] = 1
        return False

    return any(visit(n) for n in succ)


def register_workflow(
    name: str,
    procedures: Sequence[ProcedureDef],
    edges: Sequence[Edge | tuple[str, str, str]] = (),
    nested_groups: Sequence[NestedGroup] = (),
) -> Workflow:
    """Validate a workflow declaration and fix its execution ordering.

    The chosen ordering is Kahn's algorithm with a lexicographic tie-break
    on procedure names, so registration is deterministic.
    """
    edges = tuple(e if isinstance(e, Edge) else Edge(*e) for e in edges)

    names = [p.name for p in procedures]
    if len(set(names)) != len(names):
        raise DuplicateName(f"duplicate procedure names in {name}")
    by_name = {p.name: p for p in procedures}

    window_owner: dict[str, str] = {}
    for p in procedures:
        for w in p.window_defs:
            if w.name in window_owner:
                raise WindowOwnedByTwoProcedures(
                    f"window {w.name} owned by {window_owner[w.name]} and {p.name}"
                )
            window_owner[w.name] = p.name

    stream_producer: dict[str, str] = {}
    stream_consumer: dict[str, str] = {}
    for e in edges:
        if e.producer not in by_name:
            raise UnknownStream(f"edge producer {e.producer} not registered")
        if e.consumer not in by_name:
            raise UnknownStream(f"edge consumer {e.consumer} not registered")
        if e.stream in stream_producer:
            raise DuplicateName(f"stream {e.stream} has two producers")
        if e.stream in stream_consumer:
            raise DuplicateName(f"stream {e.stream} has two consumers")
        stream_producer[e.stream] = e.producer
        stream_consumer[e.stream] = e.consumer
        if e.stream not in by_name[e.consumer].stream_inputs:
            raise UnknownStream(
                f"edge stream {e.stream} is not an input of {e.consumer}"
            )

    for p in procedures:
        for s in p.stream_inputs:
            produced = s in stream_producer
            if p.kind is ProcedureKind.BORDER and produced:
                raise BadDefinition(
                    f"{p.name}: border input {s} is produced inside the workflow"
                )
            if p.kind is ProcedureKind.INTERIOR and not produced:
                raise UnknownStream(
                    f"{p.name}: interior input {s} has no upstream producer"
                )
            if produced and stream_consumer[s] != p.name:
                raise BadDefinition(f"stream {s} consumed by two procedures")

    order = _kahn_order(names, [(e.producer, e.consumer) for e in edges])
    if order is None:
        raise CycleDetected(f"workflow {name} contains a cycle")

    groups = tuple(nested_groups)
    for g in groups:
        for c in g.children:
            if c not in by_name:
                raise BadDefinition(f"group {g.parent_name}: unknown child {c}")
            if by_name[c].kind is ProcedureKind.OLTP:
                raise BadDefinition(
                    f"group {g.parent_name}: child {c} is not streaming"
                )
        _check_group_closure(g, edges, by_name)
        _check_group_order_consistency(g, edges, order)
        _check_group_entry(g, edges, by_name, order)
    flat = [c for g in groups for c in g.children]
    if len(set(flat)) != len(flat):
        raise BadDefinition("a procedure belongs to more than one nested group")

    return Workflow(
        name=name,
        procedures=tuple(procedures),
        edges=edges,
        chosen_order=tuple(order),
        nested_groups=groups,
    )


def _check_group_closure(g: NestedGroup, edges: tuple[Edge, ...], by_name) -> None:
    # The group executes as one uninterrupted unit, so no dataflow path may
    # leave the group and re-enter it: the outside node on such a path would
    # have to run between two children.
    children = set(g.children)
    succ: dict[str, set[str]] = {}
    for e in edges:
        succ.setdefault(e.producer, set()).add(e.consumer)
    for a in children:
        stack = [m for m in succ.get(a, ()) if m not in children]
        seen = set(stack)
        while stack:
            n = stack.pop()
            for m in succ.get(n, ()):
                if m in children:
                    raise BadDefinition(
                        f"group {g.parent_name}: path {a}->{n}->{m} leaves "
                        "and re-enters the group"
                    )
                if m not in seen:
                    seen.add(m)
                    stack.append(m)


def _check_group_entry(
    g: NestedGroup, edges: tuple[Edge, ...], by_name, order: list[str]
) -> None:
    # A group instance starts when its entry procedures' inputs are ready. A
    # border child's input arrives bundled with its own invocation, so it
    # cannot synchronize with any other entry point: it must be the only one.
    children = set(g.children)
    internal = {e.stream for e in edges if e.producer in children}
    roots = [
        c
        for c in order
        if c in children
        and not any(s in internal for s in by_name[c].stream_inputs)
    ]
    if not roots:
        raise BadDefinition(f"group {g.parent_name} has no entry procedure")
    borders = [c for c in children if by_name[c].kind is ProcedureKind.BORDER]
    if borders and (len(borders) > 1 or roots != borders):
        raise BadDefinition(
            f"group {g.parent_name}: a border child must be the group's "
            "only entry procedure"
        )


def _check_group_order_consistency(
    g: NestedGroup, edges: tuple[Edge, ...], order: list[str]
) -> None:
    pos = {n: i for i, n in enumerate(order)}
    children = set(g.children)
    pairs = set(g.partial_order)
    pairs.update(
        (e.producer, e.consumer)
        for e in edges
        if e.producer in children and e.consumer in children
    )
    for before, after in pairs:
        if pos[before] > pos[after]:
            raise BadDefinition(
                f"group {g.parent_name}: order {before}<{after} conflicts with "
                "the workflow ordering"
            )


def _kahn_order(nodes: Sequence[str], pairs: list[tuple[str, str]]):
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg: dict[str, int] = {n: 0 for n in nodes}
    for a, b in pairs:
        succ[a].append(b)
        indeg[b] += 1
    ready = sorted(n for n in nodes if indeg[n] == 0)
    out: list[str] = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort()
    if len(out) != len(nodes):
        return None
    return out


def topological_orderings(w: Workflow, limit: int) -> list[list[str]]:
    """Enumerate up to ``limit`` distinct topological orderings of the DAG.

    Deterministic: among ready nodes, candidates are tried in lexicographic
    name order, so the output list is stable across runs.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    nodes = list(w.procedure_names)
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg: dict[str, int] = {n: 0 for n in nodes}
    for e in w.edges:
        succ[e.producer].append(e.consumer)
        indeg[e.consumer] += 1

    out: list[list[str]] = []
    prefix: list[str] = []

    def extend() -> bool:
        if len(prefix) == len(nodes):
            out.append(list(prefix))
            return len(out) >= limit
        for n in sorted(nodes):
            if indeg[n] == 0 and n not in prefix:
                prefix.append(n)
                for m in succ[n]:
                    indeg[m] -= 1
                if extend():
                    return True
                for m in succ[n]:
                    indeg[m] += 1
                prefix.pop()
        return False

    extend()
    return out


def batch_round(b: AtomicBatch) -> int:
    """The execution round a batch drives; identical to its batch id."""
    return b.batch_id
