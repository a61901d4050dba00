"""Per-task scheduling attributes: inspiring ability, inspiring efficiency and static priorities."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from statistics import median

import numpy as np

from .platform import CostTable, PlatformError
from .taskgraph import TaskGraph, topological_layers

CALIBRATION_EXPONENTS = tuple(range(-4, 7))
PRIORITY_KINDS = ("upward_rank", "depth", "zero")


@dataclass(frozen=True)
class TaskAttributes:
    ability: dict[int, int]
    efficiency: dict[int, int]
    unit_time: float
    static_priority: dict[int, int]

    def with_priority(self, priority: dict[int, int]) -> "TaskAttributes":
        return TaskAttributes(self.ability, self.efficiency, self.unit_time, dict(priority))


def _check_costs(graph: TaskGraph, costs: CostTable) -> None:
    missing = sorted(t for t in graph.task_types() if t not in costs.task_types)
    if missing:
        raise PlatformError(f"no GPU cost entry for task types: {', '.join(missing)}")


def compute_inspiring_ability(graph: TaskGraph) -> dict[int, int]:
    """Number of distinct transitive descendants of each task."""
    index = {t.id: i for i, t in enumerate(graph.tasks)}
    desc: dict[int, int] = {}
    succ = graph.successors
    for tid in reversed(graph.topo_order):
        mask = 0
        for s in succ[tid]:
            mask |= desc[s] | (1 << index[s])
        desc[tid] = mask
    return {tid: desc[tid].bit_count() for tid in desc}


class CompletionOffsets:
    """Sorted completion offsets of every descendant, per task.

    The offset of descendant d after t finishes is the heaviest dependency path
    t -> ... -> d, summing GPU times of the path's tasks except t itself. Under
    unbounded parallelism that is the earliest time d can have completed.
    """

    def __init__(self, graph: TaskGraph, costs: CostTable):
        _check_costs(graph, costs)
        n = len(graph.tasks)
        index = {t.id: i for i, t in enumerate(graph.tasks)}
        gpu = np.array([costs.gpu_time(t.task_type) for t in graph.tasks], dtype=float)
        succ = graph.successors
        pending = {t.id: len(t.deps) for t in graph.tasks}
        rows: dict[int, np.ndarray] = {}
        self.offsets: dict[int, np.ndarray] = {}
        for tid in reversed(graph.topo_order):
            row = np.full(n, -np.inf)
            for s in succ[tid]:
                np.maximum(row, gpu[index[s]] + rows[s], out=row)
            self.offsets[tid] = np.sort(row[np.isfinite(row)])
            if pending[tid]:
                row[index[tid]] = 0.0
                rows[tid] = row
            for s in succ[tid]:
                pending[s] -= 1
                if pending[s] == 0:
                    del rows[s]

    def efficiency(self, unit_time: float) -> dict[int, int]:
        return {tid: int(np.searchsorted(off, unit_time, side="right")) for tid, off in self.offsets.items()}


def compute_inspiring_efficiency(graph: TaskGraph, costs: CostTable, unit_time: float) -> dict[int, int]:
    """Descendants whose completion offset after the task fits in ``unit_time`` ms."""
    if not unit_time > 0:
        raise ValueError("unit_time must be > 0")
    return CompletionOffsets(graph, costs).efficiency(unit_time)


def distinguishability(efficiency: dict[int, int], classes: dict[int, tuple]) -> int:
    """Number of distinct mean efficiencies over (layer, type) classes, compared exactly."""
    sums: dict[tuple, list[int]] = {}
    for tid, cls in classes.items():
        acc = sums.setdefault(cls, [0, 0])
        acc[0] += efficiency[tid]
        acc[1] += 1
    return len({Fraction(s, c) for s, c in sums.values()})


@dataclass(frozen=True)
class Calibration:
    unit_time: float
    base: float
    candidates: tuple[tuple[float, int], ...]  # (W, score) in evaluation order

    @property
    def evaluations(self) -> int:
        return len(self.candidates)

    def score_at(self, w: float) -> int:
        return dict(self.candidates)[w]


def median_gpu_time(graph: TaskGraph, costs: CostTable) -> float:
    return median(costs.gpu_time(t.task_type) for t in graph.tasks)


def calibration_sweep(graph: TaskGraph, costs: CostTable, offsets: CompletionOffsets | None = None) -> Calibration:
    """Geometric sweep W0 * 2**k, k = -4..6, W0 = twice the median GPU time; smallest best W wins."""
    if not graph.tasks:
        raise ValueError("cannot calibrate an empty graph")
    offsets = offsets or CompletionOffsets(graph, costs)
    layers = topological_layers(graph)
    classes = {t.id: (layers[t.id], t.task_type) for t in graph.tasks}
    base = 2.0 * median_gpu_time(graph, costs)
    scored = []
    for k in CALIBRATION_EXPONENTS:
        w = math.ldexp(base, k)
        scored.append((w, distinguishability(offsets.efficiency(w), classes)))
    best_w, _ = min(scored, key=lambda ws: (-ws[1], ws[0]))
    return Calibration(best_w, base, tuple(scored))


def calibrate_unit_time(graph: TaskGraph, costs: CostTable) -> float:
    return calibration_sweep(graph, costs).unit_time


def upward_rank(graph: TaskGraph, costs: CostTable) -> dict[int, float]:
    """HEFT upward rank in ms: mean device time plus the heaviest successor rank."""
    mean_exec = {}
    for ttype in graph.task_types():
        mean_exec[ttype] = costs.device_mean(ttype)
    rank: dict[int, float] = {}
    succ = graph.successors
    for tid in reversed(graph.topo_order):
        tail = max((rank[s] for s in succ[tid]), default=0.0)
        rank[tid] = mean_exec[graph.by_id[tid].task_type] + tail
    return rank


def upward_rank_priority(graph: TaskGraph, costs: CostTable) -> dict[int, int]:
    # rank in microseconds; the epsilon keeps e.g. 2.9999999999 from truncating to 2999
    return {tid: math.floor(r * 1000 + 1e-6) for tid, r in upward_rank(graph, costs).items()}


def depth_priority(graph: TaskGraph) -> dict[int, int]:
    """Task count of the longest path from each task down to an exit task, excluding the task."""
    depth: dict[int, int] = {}
    succ = graph.successors
    for tid in reversed(graph.topo_order):
        depth[tid] = max((1 + depth[s] for s in succ[tid]), default=0)
    return depth


def static_priority(graph: TaskGraph, costs: CostTable, kind: str = "upward_rank") -> dict[int, int]:
    if kind == "upward_rank":
        return upward_rank_priority(graph, costs)
    if kind == "depth":
        return depth_priority(graph)
    if kind == "zero":
        return {t.id: 0 for t in graph.tasks}
    raise ValueError(f"unknown priority kind {kind!r}; choose from {', '.join(PRIORITY_KINDS)}")


def compute_attributes(
    graph: TaskGraph,
    costs: CostTable,
    unit_time: float | None = None,
    priority: str = "upward_rank",
) -> TaskAttributes:
    """Full offline attribute pass; calibrates the unit time unless one is given."""
    ability = compute_inspiring_ability(graph)
    if not graph.tasks:
        return TaskAttributes({}, {}, unit_time or 1.0, {})
    offsets = CompletionOffsets(graph, costs)
    if unit_time is None:
        unit_time = calibration_sweep(graph, costs, offsets).unit_time
    return TaskAttributes(ability, offsets.efficiency(unit_time), unit_time, static_priority(graph, costs, priority))


ATTRIBUTE_COLUMNS = ("task_id", "type", "layer", "ability", "efficiency", "static_priority")


def attributes_csv(graph: TaskGraph, attrs: TaskAttributes) -> str:
    layers = topological_layers(graph)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ATTRIBUTE_COLUMNS)
    for t in graph.tasks:
        writer.writerow([t.id, t.task_type, layers[t.id], attrs.ability[t.id], attrs.efficiency[t.id],
                         attrs.static_priority[t.id]])
    return buf.getvalue()
