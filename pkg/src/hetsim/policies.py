"""Scheduling policies: push (worker assignment) and pop (queue selection) hooks.

The adaptive policy keeps DMDA's push and changes only the pop order, driven
by a global Nready regulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

from .attributes import median_gpu_time
from .engine import EngineView, QueueEntry
from .platform import Platform
from .taskgraph import TaskGraph, TaskNode

POLICY_NAMES = ("fifo", "dm", "dmda", "dmdap", "inspirit")


class PolicyError(ValueError):
    pass


# -- pop orders -----------------------------------------------------------------
#
# A pop order maps (worker, view) to a sort key over queue entries; the smallest
# key pops first. Push estimates use the same order so that a task is expected
# to wait only for entries that would be popped before it.

PopKey = Callable[[QueueEntry], tuple]
PopOrder = Callable[[int, EngineView], PopKey]


def fifo_order(worker: int, view: EngineView) -> PopKey:
    return lambda e: (e.seq,)


def priority_order(worker: int, view: EngineView) -> PopKey:
    return lambda e: (-e.static_priority, e.seq)


class PopMode(str, Enum):
    HIGH_ABILITY = "HighAbility"
    HIGH_EFFICIENCY = "HighEfficiency"
    HIGH_EFFICIENCY_LOCALITY = "HighEfficiencyLocality"


class Phase(str, Enum):
    INC = "INC"
    DEC = "DEC"


def mode_key(mode: PopMode, fraction: Callable[[int], float] | None = None) -> PopKey:
    """Argmax of the mode's attribute, then static priority, then queue order.

    ``fraction`` maps a task id to its resident input fraction; only the locality
    mode reads it.
    """
    if mode is PopMode.HIGH_ABILITY:
        return lambda e: (-e.ability, -e.static_priority, e.seq)
    if mode is PopMode.HIGH_EFFICIENCY:
        return lambda e: (-e.efficiency, -e.static_priority, e.seq)
    return lambda e: (-fraction(e.task), -e.efficiency, -e.static_priority, e.seq)


# -- push ---------------------------------------------------------------------


def _capable(task: TaskNode, view: EngineView) -> list[int]:
    workers = [w.id for w in view.platform.workers if view.can_run(task.id, w.id)]
    if not workers:
        raise PolicyError(f"no worker can run task {task.id} of type {task.task_type!r}")
    return workers


def _wait_until(task: TaskNode, view: EngineView, worker: int, order: PopOrder | None) -> float:
    if order is None:
        return view.worker_free_at(worker)
    key = order(worker, view)
    mine = key(view.candidate(task.id))
    return view.worker_free_at(worker, ahead=lambda e: key(e) < mine)


def push_fifo(task: TaskNode, view: EngineView) -> int:
    """Least-loaded capable worker (queued entries plus running task), lowest id on ties."""
    return min(_capable(task, view), key=lambda w: (view.load(w), w))


def push_dm(task: TaskNode, view: EngineView, order: PopOrder | None = None) -> int:
    """Earliest expected finish from the execution-time model alone."""
    def eft(w: int) -> float:
        return _wait_until(task, view, w, order) + view.exec_time(task.id, w)
    return min(_capable(task, view), key=lambda w: (eft(w), w))


def push_dmda(task: TaskNode, view: EngineView, order: PopOrder | None = None) -> int:
    """Earliest expected finish including transfers of non-resident inputs."""
    def eft(w: int) -> float:
        return _wait_until(task, view, w, order) + view.transfer_estimate(task.id, w) + view.exec_time(task.id, w)
    return min(_capable(task, view), key=lambda w: (eft(w), w))


# -- pop ----------------------------------------------------------------------


def pop_fifo(queue: Sequence[QueueEntry]) -> QueueEntry:
    if not queue:
        raise PolicyError("pop from an empty queue")
    return min(queue, key=lambda e: e.seq)


def pop_priority(queue: Sequence[QueueEntry]) -> QueueEntry:
    """Highest static priority, FIFO among equals."""
    if not queue:
        raise PolicyError("pop from an empty queue")
    return min(queue, key=priority_order(-1, None))


def pop_inspirit(worker: int, queue: Sequence[QueueEntry], view: EngineView | None,
                 state: "RegulatorState") -> QueueEntry:
    if not queue:
        raise PolicyError("pop from an empty queue")
    fraction = None
    if state.mode is PopMode.HIGH_EFFICIENCY_LOCALITY:
        fraction = lambda tid: view.resident_fraction(tid, worker)  # noqa: E731
    return min(queue, key=mode_key(state.mode, fraction))


# -- Nready regulator -----------------------------------------------------------


@dataclass(frozen=True)
class RegulatorConfig:
    task_window: float = 2  # math.inf disables the regulator
    s_inc: int = 4
    k_inc: float = 1.0
    s_dec: int = 2
    c: int = 1
    dec_step: int = 2
    slope_samples: int = 8

    def __post_init__(self):
        if not self.task_window >= 1:
            raise ValueError("task_window must be >= 1")
        if self.s_inc < 1 or self.s_dec < 1:
            raise ValueError("s_inc and s_dec must be >= 1")
        if self.c < 0 or self.dec_step < 0:
            raise ValueError("c and dec_step must be >= 0")
        if self.slope_samples < 2:
            raise ValueError("slope_samples must be >= 2")

    @classmethod
    def defaults_for(cls, platform: Platform, graph: TaskGraph) -> "RegulatorConfig":
        """Thresholds scaled to machine width: the pool should hold about one task per worker."""
        n = len(platform.workers)
        quarter = max(2, math.ceil(n / 4))
        med = median_gpu_time(graph, platform.costs) if graph.tasks else 1.0
        return cls(task_window=quarter, s_inc=n, k_inc=n / med, s_dec=quarter,
                   c=math.ceil(quarter / 2), dec_step=quarter, slope_samples=8)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("task_window", "s_inc", "k_inc", "s_dec", "c", "dec_step", "slope_samples")}


@dataclass(frozen=True)
class RegulatorState:
    peak: int = 0
    state: Phase = Phase.INC
    s_dec_count: int = 1
    mode: PopMode = PopMode.HIGH_EFFICIENCY
    last_trigger_nready: int = 0
    prev_nready: int = 0
    samples: tuple[tuple[float, int], ...] = ()
    cur_k: float = 0.0


def calculate_k(samples: Sequence[tuple[float, int]]) -> float:
    """Least-squares slope of Nready against time (tasks per ms); 0 without time spread."""
    if len(samples) < 2:
        return 0.0
    n = len(samples)
    mt = math.fsum(t for t, _ in samples) / n
    my = math.fsum(y for _, y in samples) / n
    sxx = math.fsum((t - mt) ** 2 for t, _ in samples)
    if sxx == 0:
        return 0.0
    return math.fsum((t - mt) * (y - my) for t, y in samples) / sxx


def regulator_step(state: RegulatorState, config: RegulatorConfig, cur_nready: int, now: float) -> RegulatorState:
    samples = (state.samples + ((now, cur_nready),))[-config.slope_samples:]
    if abs(cur_nready - state.last_trigger_nready) < config.task_window:
        return replace(state, samples=samples)
    peak = max(state.peak, cur_nready)
    phase = Phase.INC if cur_nready >= peak - config.dec_step else Phase.DEC
    mode, cur_k, count = state.mode, state.cur_k, state.s_dec_count
    if phase is Phase.INC:
        if cur_nready - state.prev_nready >= config.s_inc:
            cur_k = calculate_k(samples)
            if cur_k < config.k_inc:
                mode = PopMode.HIGH_EFFICIENCY
            elif cur_k > config.k_inc:
                mode = PopMode.HIGH_ABILITY
    else:
        if cur_nready > peak - config.s_dec * count:
            mode = PopMode.HIGH_ABILITY
        elif cur_nready <= peak - config.s_dec * (count + 1) + config.c:
            mode = PopMode.HIGH_EFFICIENCY_LOCALITY
            if cur_nready <= peak - config.s_dec * (count + 1):
                count += 1
    return RegulatorState(peak=peak, state=phase, s_dec_count=count, mode=mode, last_trigger_nready=cur_nready,
                          prev_nready=cur_nready, samples=samples, cur_k=cur_k)


# -- policy objects -----------------------------------------------------------------


@dataclass
class Policy:
    """A push rule plus a pop order; ``aware`` makes push estimates follow the pop order."""

    name: str
    push_fn: Callable[..., int]
    order: PopOrder = fifo_order
    aware: bool = False

    def push(self, task: TaskNode, view: EngineView) -> int:
        if self.aware:
            return self.push_fn(task, view, self.order)
        return self.push_fn(task, view)

    def pop(self, worker: int, queue: Sequence[QueueEntry], view: EngineView) -> QueueEntry:
        if not queue:
            raise PolicyError("pop from an empty queue")
        return min(queue, key=self.order(worker, view))

    def observe(self, nready: int, now: float) -> None:
        pass


@dataclass
class AdaptivePolicy(Policy):
    """DMDA push with the regulator choosing the pop key on every push/pop event."""

    config: RegulatorConfig = field(default_factory=RegulatorConfig)
    state: RegulatorState = field(default_factory=RegulatorState)

    def __post_init__(self):
        self.order = self._mode_order

    def _mode_order(self, worker: int, view: EngineView) -> PopKey:
        fraction = None
        if self.state.mode is PopMode.HIGH_EFFICIENCY_LOCALITY:
            fraction = lambda tid: view.resident_fraction(tid, worker)  # noqa: E731
        return mode_key(self.state.mode, fraction)

    def observe(self, nready: int, now: float) -> None:
        self.state = regulator_step(self.state, self.config, nready, now)

    @property
    def mode_name(self) -> str:
        return self.state.mode.value


def make_policy(name: str, regulator_config: RegulatorConfig | None = None) -> Policy:
    """Fresh policy instance; policies carry per-run state and must not be shared between runs."""
    if name == "fifo":
        return Policy(name, push_fifo)
    if name == "dm":
        return Policy(name, push_dm)
    if name == "dmda":
        return Policy(name, push_dmda)
    if name == "dmdap":
        return Policy(name, push_dmda, priority_order)
    if name == "inspirit":
        return AdaptivePolicy(name, push_dmda, config=regulator_config or RegulatorConfig())
    raise PolicyError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
