"""Task DAG model, benchmark graph builders and the line-oriented DAG file format."""

from __future__ import annotations

import json
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

FORMAT_VERSION = 1


class GraphError(ValueError):
    """Raised for malformed or unusable task graphs."""


class DagFormatError(GraphError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DataHandle:
    id: int
    bytes: int


@dataclass(frozen=True)
class TaskNode:
    id: int
    task_type: str
    deps: tuple[int, ...] = ()
    inputs: tuple[int, ...] = ()
    outputs: tuple[int, ...] = ()


@dataclass(frozen=True)
class Violation:
    kind: str  # "cycle", "duplicate-task", "duplicate-handle", "dangling-dep", ...
    ids: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class TaskGraph:
    """Immutable DAG of typed tasks; ``tasks`` is in submission order."""

    tasks: tuple[TaskNode, ...]
    handles: dict[int, DataHandle] = field(default_factory=dict)
    name: str = ""

    def __len__(self) -> int:
        return len(self.tasks)

    def __eq__(self, other):
        if not isinstance(other, TaskGraph):
            return NotImplemented
        return (self.name, self.tasks, self.handles) == (other.name, other.tasks, other.handles)

    __hash__ = None

    @cached_property
    def by_id(self) -> dict[int, TaskNode]:
        return {t.id: t for t in self.tasks}

    @cached_property
    def successors(self) -> dict[int, tuple[int, ...]]:
        succ: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for t in self.tasks:
            for d in t.deps:
                succ[d].append(t.id)
        return {k: tuple(v) for k, v in succ.items()}

    @property
    def n_edges(self) -> int:
        return sum(len(t.deps) for t in self.tasks)

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        """Kahn order, ties resolved by submission order. Raises on cycles."""
        order = _kahn(self)
        if len(order) != len(self.tasks):
            raise GraphError(f"graph {self.name!r} contains a cycle")
        return tuple(order)

    def task_types(self) -> set[str]:
        return {t.task_type for t in self.tasks}


def _kahn(graph: TaskGraph) -> list[int]:
    known = {t.id for t in graph.tasks}
    indeg = {t.id: len({d for d in t.deps if d in known}) for t in graph.tasks}
    succ: dict[int, list[int]] = {t.id: [] for t in graph.tasks}
    for t in graph.tasks:
        for d in set(t.deps):
            if d in known:
                succ[d].append(t.id)
    ready = deque(t.id for t in graph.tasks if indeg[t.id] == 0)
    order = []
    while ready:
        u = ready.popleft()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order


def validate(graph: TaskGraph) -> list[Violation]:
    """Return every structural violation found; an empty list means the graph is valid."""
    out: list[Violation] = []
    counts = Counter(t.id for t in graph.tasks)
    for tid, n in counts.items():
        if n > 1:
            out.append(Violation("duplicate-task", (tid,), f"task id {tid} appears {n} times"))
    for hid, h in graph.handles.items():
        if h.id != hid:
            out.append(Violation("duplicate-handle", (hid,), f"handle key {hid} holds id {h.id}"))
        if h.bytes <= 0:
            out.append(Violation("bad-handle", (hid,), f"handle {hid} has non-positive size"))
    known = set(counts)
    for t in graph.tasks:
        if t.id in t.deps:
            out.append(Violation("self-dep", (t.id,), f"task {t.id} depends on itself"))
        for d in t.deps:
            if d not in known:
                out.append(Violation("dangling-dep", (t.id, d), f"task {t.id} depends on unknown task {d}"))
        for h in (*t.inputs, *t.outputs):
            if h not in graph.handles:
                out.append(Violation("dangling-handle", (t.id, h), f"task {t.id} references unknown handle {h}"))
    if not any(v.kind == "duplicate-task" for v in out):
        order = _kahn(graph)
        if len(order) != len(graph.tasks):
            stuck = tuple(sorted(set(known) - set(order)))
            out.append(Violation("cycle", stuck, f"cycle among tasks {list(stuck)}"))
    return out


def check_handle_consistency(graph: TaskGraph) -> list[Violation]:
    """Check that explicit deps order every conflicting access to a handle.

    Submission order defines the program order of accesses: the last writer of a
    handle must be an ancestor of later readers and writers, and readers since the
    last write must be ancestors of the next writer.
    """
    ancestors: dict[int, int] = {}
    index = {t.id: i for i, t in enumerate(graph.tasks)}
    for tid in graph.topo_order:
        mask = 0
        for d in graph.by_id[tid].deps:
            mask |= ancestors[d] | (1 << index[d])
        ancestors[tid] = mask

    def is_ancestor(a: int, b: int) -> bool:
        return bool(ancestors[b] >> index[a] & 1)

    out = []
    last_writer: dict[int, int] = {}
    readers: dict[int, list[int]] = {}
    for t in graph.tasks:
        for h in t.inputs:
            w = last_writer.get(h)
            if w is not None and w != t.id and not is_ancestor(w, t.id):
                out.append(Violation("raw", (w, t.id), f"task {t.id} reads handle {h} without ordering after writer {w}"))
        for h in t.outputs:
            w = last_writer.get(h)
            if w is not None and not is_ancestor(w, t.id):
                out.append(Violation("waw", (w, t.id), f"task {t.id} writes handle {h} without ordering after writer {w}"))
            for r in readers.get(h, ()):
                if r != t.id and not is_ancestor(r, t.id):
                    out.append(Violation("war", (r, t.id), f"task {t.id} overwrites handle {h} still read by {r}"))
        for h in t.inputs:
            readers.setdefault(h, []).append(t.id)
        for h in t.outputs:
            last_writer[h] = t.id
            readers[h] = []
    return out


def topological_layers(graph: TaskGraph) -> dict[int, int]:
    layer: dict[int, int] = {}
    for tid in graph.topo_order:
        deps = graph.by_id[tid].deps
        layer[tid] = 1 + max(layer[d] for d in deps) if deps else 0
    return layer


# ---------------------------------------------------------------------------
# builders


class _Builder:
    """Accumulates keyed tasks and handles, assigning dense ids in insertion order."""

    def __init__(self, name: str):
        self.name = name
        self.tasks: list[TaskNode] = []
        self.keys: list[tuple] = []
        self.task_ids: dict[tuple, int] = {}
        self.handles: dict[int, DataHandle] = {}
        self.handle_ids: dict[object, int] = {}

    def handle(self, key, nbytes: int) -> int:
        if key not in self.handle_ids:
            hid = len(self.handle_ids)
            self.handle_ids[key] = hid
            self.handles[hid] = DataHandle(hid, nbytes)
        return self.handle_ids[key]

    def task(self, key: tuple, task_type: str, deps: Iterable[tuple], inputs=(), outputs=()) -> int:
        tid = len(self.tasks)
        dep_ids = sorted({self.task_ids[d] for d in deps})
        self.tasks.append(TaskNode(tid, task_type, tuple(dep_ids), tuple(inputs), tuple(outputs)))
        self.keys.append(key)
        self.task_ids[key] = tid
        return tid

    def build(self) -> TaskGraph:
        return TaskGraph(tuple(self.tasks), dict(self.handles), self.name)


def _check_blocks(nblocks: int) -> None:
    if nblocks < 1:
        raise GraphError(f"nblocks must be >= 1 (got {nblocks}); the graph would be empty")


def _cholesky(nblocks: int, block_bytes: int) -> _Builder:
    _check_blocks(nblocks)
    b = _Builder(f"cholesky_{nblocks}")
    A = lambda i, j: b.handle((i, j), block_bytes)  # noqa: E731
    for k in range(nblocks):
        prev = [("SYRK", k, k - 1)] if k > 0 else []
        b.task(("POTRF", k), "POTRF", prev, [A(k, k)], [A(k, k)])
        for i in range(k + 1, nblocks):
            deps = [("POTRF", k)] + ([("GEMM", i, k, k - 1)] if k > 0 else [])
            b.task(("TRSM", i, k), "TRSM", deps, [A(k, k), A(i, k)], [A(i, k)])
        for i in range(k + 1, nblocks):
            deps = [("TRSM", i, k)] + ([("SYRK", i, k - 1)] if k > 0 else [])
            b.task(("SYRK", i, k), "SYRK", deps, [A(i, k), A(i, i)], [A(i, i)])
            for j in range(k + 1, i):
                deps = [("TRSM", i, k), ("TRSM", j, k)]
                if k > 0:
                    deps.append(("GEMM", i, j, k - 1))
                b.task(("GEMM", i, j, k), "GEMM", deps, [A(i, k), A(j, k), A(i, j)], [A(i, j)])
    return b


def build_cholesky_dag(nblocks: int, block_bytes: int = 960 * 960 * 4) -> TaskGraph:
    """Right-looking tiled Cholesky; one handle per lower-triangular tile.

    Besides the panel edges (POTRF -> TRSM -> SYRK/GEMM -> next POTRF) the
    accumulation chains on each tile (SYRK(i,k-1) -> SYRK(i,k), GEMM(i,j,k-1) ->
    GEMM(i,j,k) and GEMM(i,k,k-1) -> TRSM(i,k)) are explicit, so every
    handle access is ordered.
    """
    return _cholesky(nblocks, block_bytes).build()


def cholesky_keys(nblocks: int) -> list[tuple]:
    """Symbolic key, e.g. ("GEMM", i, j, k), for each task id of build_cholesky_dag."""
    return _cholesky(nblocks, 1).keys


def _lu(nblocks: int, block_bytes: int) -> _Builder:
    _check_blocks(nblocks)
    b = _Builder(f"lu_{nblocks}")
    A = lambda i, j: b.handle((i, j), block_bytes)  # noqa: E731
    for k in range(nblocks):
        prev = [("GEMM", k, k, k - 1)] if k > 0 else []
        b.task(("GETRF", k), "GETRF", prev, [A(k, k)], [A(k, k)])
        for j in range(k + 1, nblocks):
            deps = [("GETRF", k)] + ([("GEMM", k, j, k - 1)] if k > 0 else [])
            b.task(("TRSM_ROW", k, j), "TRSM", deps, [A(k, k), A(k, j)], [A(k, j)])
        for i in range(k + 1, nblocks):
            deps = [("GETRF", k)] + ([("GEMM", i, k, k - 1)] if k > 0 else [])
            b.task(("TRSM_COL", i, k), "TRSM", deps, [A(k, k), A(i, k)], [A(i, k)])
        for i in range(k + 1, nblocks):
            for j in range(k + 1, nblocks):
                deps = [("TRSM_COL", i, k), ("TRSM_ROW", k, j)]
                if k > 0:
                    deps.append(("GEMM", i, j, k - 1))
                b.task(("GEMM", i, j, k), "GEMM", deps, [A(i, k), A(k, j), A(i, j)], [A(i, j)])
    return b


def build_lu_dag(nblocks: int, block_bytes: int = 160 * 160 * 4) -> TaskGraph:
    """Tiled LU without pivoting."""
    return _lu(nblocks, block_bytes).build()


def lu_keys(nblocks: int) -> list[tuple]:
    return _lu(nblocks, 1).keys


def _stencil(nblocks: int, timesteps: int | None, block_bytes: int) -> _Builder:
    _check_blocks(nblocks)
    if timesteps is None:
        timesteps = 2 * nblocks
    if timesteps < 1:
        raise GraphError(f"timesteps must be >= 1 (got {timesteps})")
    b = _Builder(f"heat_{nblocks}x{timesteps}")
    # double-buffered tiles: step t reads buffer (t-1)%2 and writes buffer t%2
    buf = lambda p, i, j: b.handle((p, i, j), block_bytes)  # noqa: E731
    for t in range(1, timesteps + 1):
        for i in range(nblocks):
            for j in range(nblocks):
                hood = [(i, j), (i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                hood = [(a, c) for a, c in hood if 0 <= a < nblocks and 0 <= c < nblocks]
                deps = [("STENCIL", t - 1, a, c) for a, c in hood] if t > 1 else []
                inputs = [buf((t - 1) % 2, a, c) for a, c in hood]
                b.task(("STENCIL", t, i, j), "STENCIL", deps, inputs, [buf(t % 2, i, j)])
    return b


def build_stencil_dag(nblocks: int, timesteps: int | None = None, block_bytes: int = 640 * 640 * 4) -> TaskGraph:
    """5-point heat-stencil wavefront over an nblocks x nblocks tile grid."""
    return _stencil(nblocks, timesteps, block_bytes).build()


def stencil_keys(nblocks: int, timesteps: int | None = None) -> list[tuple]:
    return _stencil(nblocks, timesteps, 1).keys


LAYERED_TYPES = ("LAYER0", "LAYER1", "LAYER2", "LAYER3")


def generate_layered_dag(
    n_tasks: int,
    n_layers: int,
    edge_prob: float,
    seed: int,
    block_bytes: int = 1 << 20,
) -> TaskGraph:
    """Random layered DAG: tasks dealt round-robin into layers, edges only between adjacent layers.

    Task ids follow the round-robin deal; tasks are submitted layer by layer. Each
    task writes one handle and reads the handles of its predecessors. The task
    type is the quartile bucket of its total degree (LAYER0 = least connected).
    """
    if n_layers < 1:
        raise GraphError("n_layers must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise GraphError("edge_prob must lie in [0, 1]")
    if n_tasks < n_layers:
        raise GraphError(f"n_tasks ({n_tasks}) must be >= n_layers ({n_layers})")
    rng = random.Random(seed)
    layers: list[list[int]] = [[] for _ in range(n_layers)]
    for tid in range(n_tasks):
        layers[tid % n_layers].append(tid)
    deps: dict[int, list[int]] = {tid: [] for tid in range(n_tasks)}
    for lvl in range(1, n_layers):
        above = layers[lvl - 1]
        for tid in layers[lvl]:
            deps[tid] = [p for p in above if rng.random() < edge_prob]
            if not deps[tid]:
                deps[tid] = [rng.choice(above)]
    outdeg = Counter(p for ds in deps.values() for p in ds)
    degree = [len(deps[t]) + outdeg[t] for t in range(n_tasks)]
    ranked = sorted(degree)
    cuts = [ranked[min(n_tasks - 1, (q * n_tasks) // 4)] for q in (1, 2, 3)]

    def bucket(d: int) -> int:
        return sum(d >= c for c in cuts) if len(set(ranked)) > 1 else 0

    # submitted layer by layer so that submission order is a valid program order
    tasks = tuple(
        TaskNode(tid, LAYERED_TYPES[bucket(degree[tid])], tuple(sorted(deps[tid])), tuple(sorted(deps[tid])), (tid,))
        for layer in layers for tid in layer
    )
    handles = {tid: DataHandle(tid, block_bytes) for tid in range(n_tasks)}
    return TaskGraph(tasks, handles, f"autogen_{n_tasks}_{n_layers}_{seed}")


# ---------------------------------------------------------------------------
# file format


def dumps_dag(graph: TaskGraph) -> str:
    enc = lambda obj: json.dumps(obj, separators=(",", ":"))  # noqa: E731
    lines = [enc({"kind": "meta", "name": graph.name, "version": FORMAT_VERSION})]
    for hid in sorted(graph.handles):
        lines.append(enc({"kind": "handle", "id": hid, "bytes": graph.handles[hid].bytes}))
    for t in graph.tasks:
        lines.append(enc({
            "kind": "task", "id": t.id, "type": t.task_type,
            "deps": list(t.deps), "inputs": list(t.inputs), "outputs": list(t.outputs),
        }))
    return "\n".join(lines) + "\n"


def save_dag(graph: TaskGraph, path) -> None:
    Path(path).write_text(dumps_dag(graph), encoding="utf-8")


def _int_list(rec: dict, key: str, line: int) -> tuple[int, ...]:
    val = rec.get(key, [])
    if not isinstance(val, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in val):
        raise DagFormatError(line, f"field {key!r} must be a list of integers")
    return tuple(val)


def _int_field(rec: dict, key: str, line: int) -> int:
    val = rec.get(key)
    if not isinstance(val, int) or isinstance(val, bool):
        raise DagFormatError(line, f"field {key!r} must be an integer")
    return val


def loads_dag(text: str) -> TaskGraph:
    name = ""
    handles: dict[int, DataHandle] = {}
    tasks: list[TaskNode] = []
    seen: set[int] = set()
    saw_meta = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DagFormatError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise DagFormatError(lineno, "record must be a JSON object")
        kind = rec.get("kind")
        if kind == "meta":
            if saw_meta or tasks or handles:
                raise DagFormatError(lineno, "meta record must come first and only once")
            if rec.get("version") != FORMAT_VERSION:
                raise DagFormatError(lineno, f"field 'version': unsupported {rec.get('version')!r}")
            name = str(rec.get("name", ""))
            saw_meta = True
        elif kind == "handle":
            hid = _int_field(rec, "id", lineno)
            nbytes = _int_field(rec, "bytes", lineno)
            if hid in handles:
                raise DagFormatError(lineno, f"field 'id': duplicate handle id {hid}")
            if nbytes <= 0:
                raise DagFormatError(lineno, "field 'bytes': must be > 0")
            handles[hid] = DataHandle(hid, nbytes)
        elif kind == "task":
            tid = _int_field(rec, "id", lineno)
            if tid in seen:
                raise DagFormatError(lineno, f"field 'id': duplicate task id {tid}")
            ttype = rec.get("type")
            if not isinstance(ttype, str) or not ttype:
                raise DagFormatError(lineno, "field 'type': must be a non-empty string")
            seen.add(tid)
            tasks.append(TaskNode(
                tid, ttype, _int_list(rec, "deps", lineno),
                _int_list(rec, "inputs", lineno), _int_list(rec, "outputs", lineno),
            ))
        else:
            raise DagFormatError(lineno, f"field 'kind': unknown record kind {kind!r}")
    if not saw_meta:
        raise DagFormatError(1, "missing meta header record")
    graph = TaskGraph(tuple(tasks), handles, name)
    problems = validate(graph)
    if problems:
        raise GraphError("; ".join(v.message for v in problems))
    return graph


def load_dag(path) -> TaskGraph:
    return loads_dag(Path(path).read_text(encoding="utf-8"))
