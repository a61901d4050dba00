"""Deterministic discrete-event simulation of a task-based runtime.

Dependency manager, data manager, per-worker queues with push/pop hooks and an
Nready trace. Events are processed in (time, seq) order; ``seq`` is assigned at
enqueue so simultaneous events keep their causal order.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import io
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import TYPE_CHECKING, Callable

from .attributes import TaskAttributes
from .platform import HOST_NODE, CapabilityError, Platform, exec_time, transfer_time
from .taskgraph import TaskGraph, TaskNode, validate

if TYPE_CHECKING:
    from .policies import Policy


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    def __init__(self, stuck: list[int]):
        shown = stuck[:20]
        more = f" (+{len(stuck) - len(shown)} more)" if len(stuck) > len(shown) else ""
        super().__init__(f"deadlock: no runnable event with {len(stuck)} tasks left, e.g. {shown}{more}")
        self.stuck = stuck


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    record_trace: bool = True
    time_unit: str = "ms"


class EventKind(IntEnum):
    TASK_READY = 0
    TRANSFER_DONE = 1
    TASK_DONE = 2


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    task: int = field(compare=False)
    worker: int = field(default=-1, compare=False)


@dataclass
class QueueEntry:
    """A pushed task waiting in a worker queue."""

    task: int
    enqueue_time: float
    seq: int
    static_priority: int
    ability: int
    efficiency: int
    estimate: float = 0.0  # expected transfer + execution time, fixed at push
    resident_fraction: float | None = None  # filled in when popped


@dataclass(frozen=True)
class TaskRecord:
    worker: int
    pop_time: float  # input transfers start here
    start: float  # execution start
    end: float


@dataclass
class SimTrace:
    nready_samples: list[tuple[float, int]] = field(default_factory=list)
    pushes: list[tuple[float, int]] = field(default_factory=list)
    pops: list[tuple[float, int, int]] = field(default_factory=list)
    makespan: float = 0.0
    per_task: dict[int, TaskRecord] = field(default_factory=dict)
    transfers: list[tuple[int, int, float, float]] = field(default_factory=list)  # (task, worker, start, end)
    mode_log: list[tuple[float, str]] = field(default_factory=list)


class _Worker:
    __slots__ = ("id", "node", "queue", "busy", "busy_until", "queued_estimate")

    def __init__(self, wid: int, node: int):
        self.id = wid
        self.node = node
        self.queue: list[QueueEntry] = []
        self.busy = False
        self.busy_until = 0.0
        self.queued_estimate = 0.0


class EngineView:
    """Read-only window on the simulation state handed to policies."""

    def __init__(self, sim: "_Simulation"):
        self._sim = sim

    @property
    def now(self) -> float:
        return self._sim.now

    @property
    def platform(self) -> Platform:
        return self._sim.platform

    @property
    def graph(self) -> TaskGraph:
        return self._sim.graph

    def task(self, tid: int) -> TaskNode:
        return self._sim.graph.by_id[tid]

    def queue_length(self, worker: int) -> int:
        return len(self._sim.workers[worker].queue)

    def is_busy(self, worker: int) -> bool:
        return self._sim.workers[worker].busy

    def load(self, worker: int) -> int:
        """Queued entries plus the running task, if any."""
        w = self._sim.workers[worker]
        return len(w.queue) + w.busy

    def worker_free_at(self, worker: int, ahead: Callable[[QueueEntry], bool] | None = None) -> float:
        """Expected time the worker gets to a newly pushed task.

        By default every queued entry runs first (FIFO queues). With ``ahead``,
        only queued entries for which it is true count, which is how a
        priority-ordered queue lets urgent work overtake.
        """
        w = self._sim.workers[worker]
        start = max(self._sim.now, w.busy_until) if w.busy else self._sim.now
        if ahead is None:
            return start + w.queued_estimate
        return start + sum(e.estimate for e in w.queue if ahead(e))

    def candidate(self, tid: int) -> QueueEntry:
        """The entry ``tid`` would get if pushed now (its seq sorts after everything queued)."""
        a = self._sim.attributes
        return QueueEntry(tid, self._sim.now, self._sim.seq, a.static_priority[tid], a.ability[tid],
                          a.efficiency[tid])

    def exec_time(self, tid: int, worker: int) -> float:
        t = self._sim.exec_table[self.task(tid).task_type][worker]
        if t is None:
            # raises the descriptive capability error
            return exec_time(self._sim.platform, self.task(tid).task_type, self._sim.platform.workers[worker])
        return t

    def can_run(self, tid: int, worker: int) -> bool:
        return self._sim.exec_table[self.task(tid).task_type][worker] is not None

    def transfer_estimate(self, tid: int, worker: int) -> float:
        return self._sim.transfer_estimate(tid, self._sim.workers[worker].node)

    def resident_fraction(self, tid: int, worker: int) -> float:
        return self._sim.resident_fraction(tid, self._sim.workers[worker].node)


class _Simulation:
    def __init__(self, graph: TaskGraph, platform: Platform, policy: "Policy", attributes: TaskAttributes,
                 config: SimConfig):
        self.graph = graph
        self.platform = platform
        self.policy = policy
        self.attributes = attributes
        self.config = config
        self.now = 0.0
        self.seq = 0
        self.events: list[SimEvent] = []
        self.workers = [_Worker(w.id, w.memory_node) for w in platform.workers]
        self.residency: dict[int, set[int]] = {h: {HOST_NODE} for h in graph.handles}
        self.unmet = {t.id: len(t.deps) for t in graph.tasks}
        self.nready = 0
        self.trace = SimTrace()
        self.view = EngineView(self)
        self.pending_transfers: dict[int, list[int]] = {}
        self.popped_at: dict[int, float] = {}
        self.exec_start: dict[int, float] = {}
        self.exec_table = {
            ttype: [platform.costs.entries.get((ttype, w.device_kind)) for w in platform.workers]
            for ttype in graph.task_types()
        }
        self._estimates: dict[tuple[int, int], float] = {}  # (task, node) -> transfer ms; reset when residency changes

    # -- data manager ------------------------------------------------------

    def plan_transfers(self, tid: int, node: int) -> list[tuple[int, int, float]]:
        """(handle, source node, duration) for each input missing on ``node``."""
        out = []
        bw = self.platform.bandwidth
        for h in dict.fromkeys(self.graph.by_id[tid].inputs):
            where = self.residency[h]
            if node in where:
                continue
            src = max(sorted(where), key=lambda n: bw[(n, node)])
            out.append((h, src, transfer_time(self.platform, self.graph.handles[h].bytes, src, node)))
        return out

    def transfer_estimate(self, tid: int, node: int) -> float:
        key = (tid, node)
        est = self._estimates.get(key)
        if est is None:
            est = self._estimates[key] = sum(dur for _, _, dur in self.plan_transfers(tid, node))
        return est

    def resident_fraction(self, tid: int, node: int) -> float:
        inputs = list(dict.fromkeys(self.graph.by_id[tid].inputs))
        total = sum(self.graph.handles[h].bytes for h in inputs)
        if total == 0:
            return 1.0
        return sum(self.graph.handles[h].bytes for h in inputs if node in self.residency[h]) / total

    # -- event machinery ---------------------------------------------------

    def schedule(self, time: float, kind: EventKind, task: int, worker: int = -1) -> None:
        heapq.heappush(self.events, SimEvent(time, self.seq, kind, task, worker))
        self.seq += 1

    def observe(self) -> None:
        if self.config.record_trace:
            self.trace.nready_samples.append((self.now, self.nready))
        self.policy.observe(self.nready, self.now)
        mode = getattr(self.policy, "mode_name", None)
        if mode is not None and self.config.record_trace:
            log = self.trace.mode_log
            if not log or log[-1][1] != mode:
                log.append((self.now, mode))

    def on_ready(self, tid: int) -> None:
        wid = self.policy.push(self.graph.by_id[tid], self.view)
        if not 0 <= wid < len(self.workers):
            raise SimulationError(f"policy pushed task {tid} to unknown worker {wid}")
        if not self.view.can_run(tid, wid):
            raise CapabilityError(
                f"task {tid} ({self.graph.by_id[tid].task_type}) pushed to worker {wid}, which cannot run it")
        a = self.attributes
        est = self.view.transfer_estimate(tid, wid) + self.view.exec_time(tid, wid)
        w = self.workers[wid]
        w.queue.append(QueueEntry(tid, self.now, self.seq, a.static_priority[tid], a.ability[tid],
                                  a.efficiency[tid], est))
        self.seq += 1
        w.queued_estimate += est
        self.nready += 1
        if self.config.record_trace:
            self.trace.pushes.append((self.now, tid))
        self.observe()
        self.dispatch(w)

    def dispatch(self, w: _Worker) -> None:
        if w.busy or not w.queue:
            return
        entry = self.policy.pop(w.id, tuple(w.queue), self.view)
        w.queue.remove(entry)
        w.queued_estimate = sum(e.estimate for e in w.queue)
        entry.resident_fraction = self.resident_fraction(entry.task, w.node)
        self.nready -= 1
        if self.config.record_trace:
            self.trace.pops.append((self.now, entry.task, w.id))
        tid = entry.task
        t = self.now
        moved = []
        for h, _src, dur in self.plan_transfers(tid, w.node):
            if self.config.record_trace:
                self.trace.transfers.append((tid, w.id, t, t + dur))
            t += dur
            moved.append(h)
        run = self.view.exec_time(tid, w.id)
        w.busy = True
        w.busy_until = t + run
        self.popped_at[tid] = self.now
        self.pending_transfers[tid] = moved
        self.schedule(t, EventKind.TRANSFER_DONE, tid, w.id)
        self.observe()

    def on_transfer_done(self, tid: int, wid: int) -> None:
        node = self.workers[wid].node
        for h in self.pending_transfers.pop(tid):
            self.residency[h].add(node)
        self._estimates.clear()
        self.exec_start[tid] = self.now
        self.schedule(self.now + self.view.exec_time(tid, wid), EventKind.TASK_DONE, tid, wid)

    def on_done(self, tid: int, wid: int) -> None:
        w = self.workers[wid]
        w.busy = False
        for h in self.graph.by_id[tid].outputs:
            # a write invalidates every other copy
            self.residency[h] = {w.node}
        self._estimates.clear()
        self.trace.per_task[tid] = TaskRecord(wid, self.popped_at.pop(tid), self.exec_start.pop(tid), self.now)
        for s in self.graph.successors[tid]:
            self.unmet[s] -= 1
            if self.unmet[s] == 0:
                self.schedule(self.now, EventKind.TASK_READY, s)
        self.dispatch(w)

    def run(self) -> SimTrace:
        for t in self.graph.tasks:
            if self.unmet[t.id] == 0:
                self.schedule(0.0, EventKind.TASK_READY, t.id)
        handlers = {
            EventKind.TASK_READY: lambda ev: self.on_ready(ev.task),
            EventKind.TRANSFER_DONE: lambda ev: self.on_transfer_done(ev.task, ev.worker),
            EventKind.TASK_DONE: lambda ev: self.on_done(ev.task, ev.worker),
        }
        while self.events:
            ev = heapq.heappop(self.events)
            self.now = ev.time
            handlers[ev.kind](ev)
        if len(self.trace.per_task) != len(self.graph.tasks):
            stuck = sorted(set(self.graph.by_id) - set(self.trace.per_task))
            raise DeadlockError(stuck)
        self.trace.makespan = max((r.end for r in self.trace.per_task.values()), default=0.0)
        return self.trace


def simulate(graph: TaskGraph, platform: Platform, policy: "Policy", attributes: TaskAttributes,
             config: SimConfig | None = None) -> SimTrace:
    problems = validate(graph)
    if problems:
        raise SimulationError("invalid graph: " + "; ".join(v.message for v in problems[:5]))
    missing = platform.costs.missing_types(graph.task_types())
    if missing:
        raise SimulationError(f"platform has no cost entry for task types: {', '.join(missing)}")
    uncovered = [t.id for t in graph.tasks if t.id not in attributes.ability]
    if uncovered:
        raise SimulationError(f"attributes missing for {len(uncovered)} tasks, e.g. {uncovered[:5]}")
    return _Simulation(graph, platform, policy, attributes, config or SimConfig()).run()


# ---------------------------------------------------------------------------
# trace queries


def nready(trace: SimTrace, t: float) -> int:
    """Pushes minus pops at time t (right-continuous step function)."""
    if t < 0 or t > trace.makespan:
        raise ValueError(f"time {t} outside [0, {trace.makespan}]")
    times = [s[0] for s in trace.nready_samples]
    i = bisect.bisect_right(times, t)
    return trace.nready_samples[i - 1][1] if i else 0


def window_histogram(trace: SimTrace, window: float) -> list[tuple[float, int, int]]:
    """(window_start, pushes, pops) for each half-open window up to the last push/pop."""
    if not window > 0:
        raise ValueError("window must be > 0")
    push_t = [t for t, _ in trace.pushes]
    pop_t = [t for t, _, _ in trace.pops]
    if not push_t and not pop_t:
        return []
    last = max(push_t + pop_t)
    nwin = int(last // window) + 1
    pushes = [0] * nwin
    pops = [0] * nwin
    for t in push_t:
        pushes[int(t // window)] += 1
    for t in pop_t:
        pops[int(t // window)] += 1
    return [(k * window, pushes[k], pops[k]) for k in range(nwin)]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def nready_csv(trace: SimTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_ms", "nready"])
    w.writerows((_fmt(t), n) for t, n in trace.nready_samples)
    return buf.getvalue()


def push_pop_csv(trace: SimTrace, window: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window_start_ms", "pushes", "pops"])
    w.writerows((_fmt(s), p, q) for s, p, q in window_histogram(trace, window))
    return buf.getvalue()


def gantt_csv(trace: SimTrace, graph: TaskGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_id", "type", "worker", "start_ms", "end_ms"])
    for tid in sorted(trace.per_task):
        r = trace.per_task[tid]
        w.writerow([tid, graph.by_id[tid].task_type, r.worker, _fmt(r.start), _fmt(r.end)])
    return buf.getvalue()


def write_trace_csvs(trace: SimTrace, graph: TaskGraph, out_dir, window: float) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "nready_time.csv": nready_csv(trace),
        "push_pop.csv": push_pop_csv(trace, window),
        "gantt.csv": gantt_csv(trace, graph),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
