"""Command-line front end: generate DAGs, compute attributes, simulate, and run benchmark sweeps.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import median

from .attributes import PRIORITY_KINDS, attributes_csv, calibration_sweep, compute_attributes
from .engine import SimConfig, SimulationError, simulate, write_trace_csvs
from .platform import PRESETS, Platform, PlatformError, load_platform
from .policies import POLICY_NAMES, PolicyError, RegulatorConfig, make_policy
from .taskgraph import (
    GraphError,
    TaskGraph,
    build_cholesky_dag,
    build_lu_dag,
    build_stencil_dag,
    generate_layered_dag,
    load_dag,
    save_dag,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
APPS = ("cholesky", "lu", "heat", "autogen", "file")
REGULATOR_FLAGS = {
    "task_window": float,
    "s_inc": int,
    "k_inc": float,
    "s_dec": int,
    "c": int,
    "dec_step": int,
    "slope_samples": int,
}
BENCH_COLUMNS = ("app", "size", "platform", "policy", "makespan_ms", "speedup", "error")
RUNTIME_ERRORS = (GraphError, PlatformError, PolicyError, SimulationError, ValueError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- shared helpers -------------------------------------------------------------


def build_graph(app: str, size: int, *, seed: int = 0, layers: int = 10, edge_prob: float = 0.05,
                timesteps: int | None = None) -> TaskGraph:
    if app == "cholesky":
        return build_cholesky_dag(size)
    if app == "lu":
        return build_lu_dag(size)
    if app == "heat":
        return build_stencil_dag(size, timesteps)
    if app == "autogen":
        return generate_layered_dag(size, layers, edge_prob, seed)
    raise UsageError(f"unknown app {app!r}; choose from {', '.join(APPS[:-1])}")


def regulator_config(platform: Platform, graph: TaskGraph, overrides: dict) -> RegulatorConfig:
    base = RegulatorConfig.defaults_for(platform, graph)
    given = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **given) if given else base


def default_window(platform: Platform, graph: TaskGraph) -> float:
    """Histogram window for push/pop counts: ten median task times."""
    if not graph.tasks:
        return 1.0
    return 10 * median(platform.costs.gpu_time(t.task_type) for t in graph.tasks)


def _overrides(args) -> dict:
    return {k: getattr(args, k, None) for k in REGULATOR_FLAGS}


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def parse_sizes(text: str) -> list[int]:
    """Comma list ("4,8,12") or inclusive range "start:stop:step" ("1000:30000:4000")."""
    sizes: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ":" in part:
                bits = [int(x) for x in part.split(":")]
                if len(bits) not in (2, 3):
                    raise ValueError(part)
                start, stop, step = bits if len(bits) == 3 else (*bits, 1)
                if step < 1:
                    raise ValueError(part)
                sizes.extend(range(start, stop + 1, step))
            elif part:
                sizes.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"size list {text!r} must hold positive integers")
    return sorted(set(sizes))


def _names(text: str, allowed=None) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty list")
    if allowed is not None:
        bad = [n for n in names if n not in allowed]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown {', '.join(bad)}; choose from {', '.join(allowed)}")
    return list(dict.fromkeys(names))


# -- subcommands ------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.app in ("cholesky", "lu", "heat"):
        if args.nblocks is None:
            raise UsageError(f"gen {args.app} needs --nblocks")
        size = args.nblocks
    else:
        if args.tasks is None:
            raise UsageError("gen autogen needs --tasks")
        size = args.tasks
    try:
        graph = build_graph(args.app, size, seed=args.seed, layers=args.layers, edge_prob=args.edge_prob,
                            timesteps=args.timesteps)
    except GraphError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.output) if args.output else Path(args.out_dir) / f"{graph.name}.dag"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dag(graph, out)
    print(f"{graph.name}: {len(graph.tasks)} tasks, {graph.n_edges} edges -> {out}")
    return EXIT_OK


def cmd_attrs(args) -> int:
    platform = load_platform(args.platform)
    graph = load_dag(args.dag)
    missing = platform.costs.missing_types(graph.task_types())
    if missing:
        raise PlatformError(f"platform {platform.name} has no cost entry for task types: {', '.join(missing)}")
    unit_time = args.unit_time
    if unit_time is None and graph.tasks:
        cal = calibration_sweep(graph, platform.costs)
        unit_time = cal.unit_time
        print(f"calibrated unit_time={unit_time:g} ms after {cal.evaluations} evaluations", file=sys.stderr)
    attrs = compute_attributes(graph, platform.costs, unit_time, args.priority)
    text = attributes_csv(graph, attrs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {len(graph.tasks)} rows to {args.output}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sim(args) -> int:
    platform = load_platform(args.platform)
    graph = load_dag(args.dag)
    attrs = compute_attributes(graph, platform.costs, args.unit_time, args.priority)
    cfg = regulator_config(platform, graph, _overrides(args))
    trace = simulate(graph, platform, make_policy(args.policy, cfg), attrs,
                     SimConfig(seed=args.seed, record_trace=True))
    print(f"graph={graph.name} tasks={len(graph.tasks)} platform={platform.name} policy={args.policy}")
    print(f"unit_time_ms={attrs.unit_time:g} priority={args.priority}")
    if args.policy == "inspirit":
        print("regulator " + " ".join(f"{k}={v:g}" for k, v in cfg.to_dict().items()))
    print(f"makespan_ms={trace.makespan:.6f}")
    if args.trace:
        window = args.window or default_window(platform, graph)
        paths = write_trace_csvs(trace, graph, args.out_dir, window)
        print(f"trace window_ms={window:g}: " + ", ".join(str(p) for p in paths))
    return EXIT_OK


@dataclass(frozen=True)
class CellJob:
    app: str
    size: int
    size_label: str
    platform: str
    policies: tuple[str, ...]
    baseline: str
    seed: int
    layers: int
    edge_prob: float
    priority: str
    overrides: tuple[tuple[str, object], ...]
    dag_path: str | None = None
    trace_dir: str | None = None


def run_cell(job: CellJob) -> list[dict]:
    """Simulate every policy of one (app, size, platform) cell; failures become error rows."""
    rows = [{"app": job.app, "size": job.size_label, "platform": job.platform, "policy": p,
             "makespan_ms": None, "speedup": None, "error": ""} for p in job.policies]
    try:
        platform = load_platform(job.platform)
        graph = load_dag(job.dag_path) if job.app == "file" else build_graph(
            job.app, job.size, seed=job.seed, layers=job.layers, edge_prob=job.edge_prob)
        attrs = compute_attributes(graph, platform.costs, priority=job.priority)
        cfg = regulator_config(platform, graph, dict(job.overrides))
    except Exception as exc:  # noqa: BLE001 - any failure belongs in the report
        for row in rows:
            row["error"] = f"{type(exc).__name__}: {exc}"
        return rows
    for row in rows:
        try:
            trace = simulate(graph, platform, make_policy(row["policy"], cfg), attrs, SimConfig(seed=job.seed))
            row["makespan_ms"] = trace.makespan
            if job.trace_dir:
                name = f"{job.app}_{job.size_label}_{Path(job.platform).stem}_{row['policy']}"
                write_trace_csvs(trace, graph, Path(job.trace_dir) / name, default_window(platform, graph))
        except Exception as exc:  # noqa: BLE001
            row["error"] = f"{type(exc).__name__}: {exc}"
    base = next((r["makespan_ms"] for r in rows if r["policy"] == job.baseline), None)
    for row in rows:
        if base is not None and row["makespan_ms"]:
            row["speedup"] = 1.0 if row["policy"] == job.baseline else base / row["makespan_ms"]
    return rows


def _size_key(label: str):
    return (0, int(label), "") if label.isdigit() else (1, 0, label)


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([r["app"], r["size"], r["platform"], r["policy"],
                    "" if r["makespan_ms"] is None else repr(r["makespan_ms"]),
                    "" if r["speedup"] is None else repr(r["speedup"]), r["error"]])
    return buf.getvalue()


def run_bench(jobs: list[CellJob], workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        results = [run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(run_cell, jobs))
    rows = [r for cell in results for r in cell]
    rows.sort(key=lambda r: (r["app"], _size_key(r["size"]), r["platform"], r["policy"]))
    return rows


def cmd_bench(args) -> int:
    policies = list(args.policies)
    if args.baseline not in policies:
        policies.insert(0, args.baseline)
    if args.app == "file":
        if not args.dag:
            raise UsageError("bench --app file needs one or more --dag paths")
        cells = [(0, Path(p).stem, p) for p in args.dag]
    else:
        if not args.sizes:
            raise UsageError(f"bench --app {args.app} needs --sizes")
        cells = [(s, str(s), None) for s in args.sizes]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overrides = tuple(sorted((k, v) for k, v in _overrides(args).items() if v is not None))
    jobs = [
        CellJob(args.app, size, label, plat, tuple(policies), args.baseline, args.seed, args.layers,
                args.edge_prob, args.priority, overrides, dag_path=path,
                trace_dir=str(out_dir / "traces") if args.trace else None)
        for size, label, path in cells for plat in args.platforms
    ]
    rows = run_bench(jobs, args.jobs)
    report = out_dir / args.report
    report.write_text(bench_csv(rows), encoding="utf-8")
    for r in rows:
        if r["error"]:
            print(f"{r['app']:>8} {r['size']:>6} {r['platform']:>12} {r['policy']:>9}  ERROR {r['error']}")
        else:
            sp = "" if r["speedup"] is None else f"{r['speedup']:.3f}x"
            print(f"{r['app']:>8} {r['size']:>6} {r['platform']:>12} {r['policy']:>9}  "
                  f"{r['makespan_ms']:12.3f} ms  {sp}")
    failed = sum(bool(r["error"]) for r in rows)
    print(f"{len(rows)} rows ({failed} failed) -> {report}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _common(include_platform: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    if include_platform:
        p.add_argument("--platform", default="26cpu_2gpu",
                       help=f"preset ({', '.join(PRESETS)}) or JSON config path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", help="directory for generated files")
    p.add_argument("--jobs", type=_positive, default=os.cpu_count() or 1, help="parallel bench cells")
    return p


def _regulator() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("regulator overrides (defaults scale with the platform)")
    for name, typ in REGULATOR_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    return p


def _attr_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--priority", choices=PRIORITY_KINDS, default="upward_rank", help="static priority")
    p.add_argument("--unit-time", type=float, default=None, help="efficiency window W in ms (default: calibrate)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common, reg = _common(), _regulator()

    g = sub.add_parser("gen", parents=[_common(include_platform=False)], help="generate a DAG file")
    g.add_argument("app", choices=APPS[:-1])
    g.add_argument("--nblocks", type=int)
    g.add_argument("--timesteps", type=int, default=None, help="heat only (default 2*nblocks)")
    g.add_argument("--tasks", type=int)
    g.add_argument("--layers", type=int, default=10)
    g.add_argument("--edge-prob", type=float, default=0.05)
    g.add_argument("-o", "--output", help="output path (default <out-dir>/<name>.dag)")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("attrs", parents=[common], help="compute per-task attributes")
    a.add_argument("dag")
    _attr_flags(a)
    a.add_argument("-o", "--output", help="CSV path (default stdout)")
    a.set_defaults(func=cmd_attrs)

    s = sub.add_parser("sim", parents=[common, reg], help="simulate one DAG under one policy")
    s.add_argument("dag")
    s.add_argument("--policy", choices=POLICY_NAMES, default="dmda")
    _attr_flags(s)
    s.add_argument("--trace", action="store_true", help="write nready_time.csv, push_pop.csv, gantt.csv")
    s.add_argument("--window", type=float, default=None, help="push/pop window in ms")
    s.set_defaults(func=cmd_sim)

    b = sub.add_parser("bench", parents=[_common(include_platform=False), reg], help="run a benchmark sweep")
    b.add_argument("--app", choices=APPS, required=True)
    b.add_argument("--sizes", type=parse_sizes, help="e.g. 4,8,12 or 1000:30000:4000")
    b.add_argument("--dag", action="append", help="DAG file (app=file, repeatable)")
    b.add_argument("--platform", dest="platforms", type=_names, default=["26cpu_2gpu"],
                   help="comma list of presets or JSON paths")
    b.add_argument("--policies", type=lambda t: _names(t, POLICY_NAMES), default=list(POLICY_NAMES))
    b.add_argument("--baseline", choices=POLICY_NAMES, default="dmda")
    b.add_argument("--layers", type=int, default=10)
    b.add_argument("--edge-prob", type=float, default=0.05)
    b.add_argument("--priority", choices=PRIORITY_KINDS, default="upward_rank")
    b.add_argument("--trace", action="store_true", help="also write per-cell trace CSVs")
    b.add_argument("--report", default="bench.csv")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hetsim {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"hetsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
