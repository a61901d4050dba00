"""Heterogeneous machine model: workers, memory nodes, cost table and transfer model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from itertools import combinations
from pathlib import Path
from statistics import mean

HOST_NODE = 0


class PlatformError(ValueError):
    pass


class CapabilityError(PlatformError):
    """A task type has no implementation for the worker's device kind."""


class DeviceKind(str, Enum):
    CPU = "CPU"
    GPU = "GPU"


@dataclass(frozen=True)
class Worker:
    id: int
    device_kind: DeviceKind
    memory_node: int


class CostTable:
    """Mean execution time (ms) per (task_type, device kind).

    A type may be GPU-only, but every type needs a GPU entry since the
    attribute computations price tasks at their GPU time.
    """

    def __init__(self, entries: dict[tuple[str, DeviceKind], float]):
        clean = {}
        for (ttype, kind), ms in entries.items():
            kind = DeviceKind(kind)
            if not ms > 0:
                raise PlatformError(f"execution time for ({ttype}, {kind.value}) must be > 0, got {ms}")
            clean[(ttype, kind)] = float(ms)
        self.entries = clean
        missing = sorted({t for t, _ in clean} - {t for t, k in clean if k is DeviceKind.GPU})
        if missing:
            raise PlatformError(f"task types without a GPU time: {', '.join(missing)}")

    @classmethod
    def from_mapping(cls, mapping: dict[str, dict[str, float]]) -> "CostTable":
        return cls({(ttype, DeviceKind(kind)): ms for ttype, row in mapping.items() for kind, ms in row.items()})

    def to_mapping(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for (ttype, kind), ms in sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            out.setdefault(ttype, {})[kind.value] = ms
        return out

    def __eq__(self, other):
        return isinstance(other, CostTable) and self.entries == other.entries

    @property
    def task_types(self) -> set[str]:
        return {t for t, _ in self.entries}

    def has(self, task_type: str, kind: DeviceKind) -> bool:
        return (task_type, kind) in self.entries

    def time(self, task_type: str, kind: DeviceKind) -> float:
        try:
            return self.entries[(task_type, kind)]
        except KeyError:
            if task_type not in self.task_types:
                raise PlatformError(f"no cost entry for task type {task_type!r}") from None
            raise CapabilityError(f"task type {task_type!r} cannot run on {kind.value}") from None

    def gpu_time(self, task_type: str) -> float:
        if not self.has(task_type, DeviceKind.GPU):
            raise PlatformError(f"no GPU cost entry for task type {task_type!r}")
        return self.entries[(task_type, DeviceKind.GPU)]

    def device_mean(self, task_type: str) -> float:
        times = [ms for (t, _), ms in self.entries.items() if t == task_type]
        if not times:
            raise PlatformError(f"no cost entry for task type {task_type!r}")
        return mean(times)

    def missing_types(self, types) -> list[str]:
        return sorted(set(types) - self.task_types)


@dataclass
class Platform:
    workers: list[Worker]
    costs: CostTable
    bandwidth: dict[tuple[int, int], float] = field(default_factory=dict)
    transfer_latency: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        for i, w in enumerate(self.workers):
            if w.id != i:
                raise PlatformError(f"worker ids must be dense 0..n-1 (position {i} holds id {w.id})")
            if w.device_kind is DeviceKind.CPU and w.memory_node != HOST_NODE:
                raise PlatformError(f"CPU worker {w.id} must use memory node {HOST_NODE}")
        gpu_nodes = [w.memory_node for w in self.workers if w.device_kind is DeviceKind.GPU]
        if len(set(gpu_nodes)) != len(gpu_nodes) or HOST_NODE in gpu_nodes:
            raise PlatformError("every GPU needs its own memory node distinct from the host node")
        if self.transfer_latency < 0:
            raise PlatformError("transfer latency must be >= 0")
        bw = {}
        for (a, b), v in self.bandwidth.items():
            if a == b:
                continue
            if not v > 0:
                raise PlatformError(f"bandwidth {a}<->{b} must be > 0")
            bw[(a, b)] = bw[(b, a)] = float(v)
        self.bandwidth = bw
        for a, b in combinations(self.nodes, 2):
            if (a, b) not in bw:
                raise PlatformError(f"no bandwidth defined between memory nodes {a} and {b}")

    @property
    def nodes(self) -> list[int]:
        return sorted({HOST_NODE} | {w.memory_node for w in self.workers})

    def has_node(self, node: int) -> bool:
        return node == HOST_NODE or any(w.memory_node == node for w in self.workers)

    def can_run(self, task_type: str, worker: Worker) -> bool:
        return self.costs.has(task_type, worker.device_kind)

    def capable_workers(self, task_type: str) -> list[Worker]:
        return [w for w in self.workers if self.can_run(task_type, w)]

    def describe(self) -> str:
        ncpu = sum(w.device_kind is DeviceKind.CPU for w in self.workers)
        return f"{self.name}: {ncpu} CPU + {len(self.workers) - ncpu} GPU workers, nodes {self.nodes}"


def exec_time(platform: Platform, task_type: str, worker: Worker) -> float:
    return platform.costs.time(task_type, worker.device_kind)


def transfer_time(platform: Platform, nbytes: int, from_node: int, to_node: int) -> float:
    if from_node == to_node:
        if not platform.has_node(from_node):
            raise PlatformError(f"unknown memory node {from_node}")
        return 0.0
    bw = platform.bandwidth.get((from_node, to_node))
    if bw is None:
        raise PlatformError(f"unknown memory node pair {from_node}->{to_node}")
    return platform.transfer_latency + nbytes / bw


# ---------------------------------------------------------------------------
# presets and config files

PRESETS = ("2gpu", "26cpu_2gpu", "26cpu_1gpu", "homog2")


def _default_fixture() -> dict:
    text = resources.files("hetsim").joinpath("data/default_costs.json").read_text(encoding="utf-8")
    return json.loads(text)


def default_cost_table() -> CostTable:
    return CostTable.from_mapping(_default_fixture()["costs"])


def _layout(ncpu: int, ngpu: int) -> list[Worker]:
    workers = [Worker(i, DeviceKind.CPU, HOST_NODE) for i in range(ncpu)]
    workers += [Worker(ncpu + g, DeviceKind.GPU, g + 1) for g in range(ngpu)]
    return workers


def _bandwidth_for(workers: list[Worker], host_gpu: float, gpu_gpu: float) -> dict[tuple[int, int], float]:
    gpu_nodes = sorted(w.memory_node for w in workers if w.device_kind is DeviceKind.GPU)
    bw = {(HOST_NODE, n): host_gpu for n in gpu_nodes}
    bw.update({(a, b): gpu_gpu for a, b in combinations(gpu_nodes, 2)})
    return bw


def preset(name: str) -> Platform:
    layouts = {"2gpu": (0, 2), "26cpu_2gpu": (26, 2), "26cpu_1gpu": (26, 1), "homog2": (2, 0)}
    if name not in layouts:
        raise PlatformError(f"unknown platform preset {name!r}; valid presets: {', '.join(PRESETS)}")
    fixture = _default_fixture()
    workers = _layout(*layouts[name])
    bw = fixture["bandwidth"]
    return Platform(
        workers=workers,
        costs=CostTable.from_mapping(fixture["costs"]),
        bandwidth=_bandwidth_for(workers, bw["host_gpu"], bw["gpu_gpu"]),
        transfer_latency=fixture["latency_ms"],
        name=name,
    )


def platform_from_dict(cfg: dict, name: str = "custom") -> Platform:
    """Build a platform from the JSON config layout.

    ``workers`` is a list of {"kind", "memory_node"} objects (ids follow list order),
    ``costs`` maps type -> {kind: ms}, ``bandwidth`` is either a list of
    {"from", "to", "bytes_per_ms"} or {"host_gpu", "gpu_gpu"} shorthand.
    A "preset" key starts from a built-in and overrides the given sections.
    """
    try:
        if "preset" in cfg:
            base = preset(cfg["preset"])
            name = cfg.get("name", base.name)
            workers = base.workers
            costs = base.costs
            bandwidth = base.bandwidth
            latency = base.transfer_latency
        else:
            name = cfg.get("name", name)
            workers, costs, bandwidth, latency = None, None, {}, 0.0
        if "workers" in cfg:
            workers = [Worker(i, DeviceKind(w["kind"]), int(w["memory_node"])) for i, w in enumerate(cfg["workers"])]
        if "costs" in cfg:
            costs = CostTable.from_mapping(cfg["costs"])
        if "bandwidth" in cfg:
            raw = cfg["bandwidth"]
            if isinstance(raw, dict):
                bandwidth = _bandwidth_for(workers, raw["host_gpu"], raw["gpu_gpu"])
            else:
                bandwidth = {(int(e["from"]), int(e["to"])): float(e["bytes_per_ms"]) for e in raw}
        if "latency_ms" in cfg:
            latency = float(cfg["latency_ms"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PlatformError):
            raise
        raise PlatformError(f"malformed platform config: {exc!r}") from None
    if workers is None or costs is None:
        raise PlatformError("platform config needs 'workers' and 'costs' (or a 'preset')")
    return Platform(workers, costs, bandwidth, latency, name)


def platform_to_dict(platform: Platform) -> dict:
    return {
        "name": platform.name,
        "workers": [{"kind": w.device_kind.value, "memory_node": w.memory_node} for w in platform.workers],
        "costs": platform.costs.to_mapping(),
        "bandwidth": [
            {"from": a, "to": b, "bytes_per_ms": v} for (a, b), v in sorted(platform.bandwidth.items()) if a < b
        ],
        "latency_ms": platform.transfer_latency,
    }


def load_platform(source: str) -> Platform:
    """Resolve a preset name or a path to a JSON platform config."""
    if source in PRESETS:
        return preset(source)
    path = Path(source)
    if not path.exists():
        raise PlatformError(f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor an existing file")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PlatformError(f"{path}: invalid JSON ({exc.msg})") from None
    return platform_from_dict(cfg, name=path.stem)
