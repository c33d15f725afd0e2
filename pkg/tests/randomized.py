"""Random end-to-end run generator for the master schedule property."""

import random

from streamtx.engine import Engine, EngineSpec, StreamDef, TableDef
from streamtx.errors import BadDefinition
from streamtx.ingest import BatchingPolicy, StreamIngestor
from streamtx.model import (
    NestedGroup,
    ProcedureDef,
    ProcedureKind,
    register_workflow,
)

VAL_COLS = (("value", "int"),)


def random_workflow(rng: random.Random, tag: str):
    """A random DAG of up to 4 streaming procedures with passthrough bodies,
    random per-round aborts, and sometimes a nested group."""
    n = rng.randint(1, 4)
    names = [f"P{i}" for i in range(n)]
    edges = []  # (i, j) index pairs
    for j in range(1, n):
        for i in range(j):
            if rng.random() < 0.45:
                edges.append((i, j))
    in_edges = {j for _, j in edges}
    abort_set = set()
    for name in names:
        for r in range(1, 21):
            if rng.random() < 0.06:
                abort_set.add((name, r))

    streams = []
    procs = []
    edge_decls = []
    out_streams = {name: [] for name in names}
    in_streams = {name: [] for name in names}
    for i, j in edges:
        s = f"e{i}_{j}"
        streams.append(StreamDef(s, VAL_COLS))
        edge_decls.append((names[i], s, names[j]))
        out_streams[names[i]].append(s)
        in_streams[names[j]].append(s)
    externals = []
    for i, name in enumerate(names):
        if i not in in_edges:
            s = f"x{i}"
            streams.append(StreamDef(s, VAL_COLS))
            in_streams[name].append(s)
            externals.append(s)

    def make_body(name, ins, outs):
        def body(ctx):
            if (name, ctx.round) in abort_set:
                ctx.abort("random abort")
            rows = [t for s in ins for t in ctx.input_tuples(s)]
            for out in outs:
                ctx.emit(out, rows)

        return body

    for i, name in enumerate(names):
        kind = ProcedureKind.BORDER if i not in in_edges else ProcedureKind.INTERIOR
        procs.append(
            ProcedureDef(
                name,
                kind,
                tuple(in_streams[name]),
                body=make_body(name, in_streams[name], out_streams[name]),
            )
        )

    groups = []
    if n >= 2 and rng.random() < 0.5:
        for _ in range(6):  # try a few subsets; some violate group closure
            size = rng.randint(2, n)
            children = tuple(sorted(rng.sample(names, size)))
            order = tuple(
                (names[i], names[j])
                for i, j in edges
                if names[i] in children and names[j] in children
            )
            try:
                register_workflow(
                    f"probe_{tag}", procs, edge_decls,
                    [NestedGroup("g", children, order)],
                )
            except BadDefinition:
                continue
            groups = [NestedGroup("g", children, order)]
            break
    w = register_workflow(f"wf_{tag}", procs, edge_decls, groups)
    return w, streams, externals, abort_set


def random_run(seed: int):
    """One randomized end-to-end run; returns (engine, workflow)."""
    rng = random.Random(seed)
    w, streams, externals, _ = random_workflow(rng, str(seed))

    def oltp_body(ctx):
        ctx.insert("olog", (ctx.args["v"],))

    oltp = register_workflow(
        f"oltp_{seed}", [ProcedureDef("Q", ProcedureKind.OLTP, body=oltp_body)]
    )
    spec = EngineSpec(
        workflows=[w, oltp],
        streams=streams,
        tables=[TableDef("olog", VAL_COLS)],
    )
    engine = Engine(spec)
    rounds = rng.randint(1, 20)
    ingestors = {
        s: StreamIngestor(engine, s, BatchingPolicy("fixed_count", 1))
        for s in externals
    }
    for r in range(rounds):
        for s in externals:
            ingestors[s].push((rng.randint(0, 9),))
        while rng.random() < 0.3:
            engine.call_oltp("Q", {"v": rng.randint(0, 99)})
        if rng.random() < 0.5:
            engine.run_until_idle()
    engine.run_until_idle()
    return engine, w
