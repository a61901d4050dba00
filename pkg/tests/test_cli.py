import csv
import json
import subprocess
import sys

import pytest

from hetsim.cli import main, parse_sizes
from hetsim.taskgraph import load_dag, save_dag

from oracles import make_graph


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def exit_code(argv):
    """main's return value, or the code argparse exits with."""
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_gen_cholesky(tmp_path, capsys):
    out = tmp_path / "c4.dag"
    assert main(["gen", "cholesky", "--nblocks", "4", "-o", str(out)]) == 0
    assert len(load_dag(out).tasks) == 20
    assert "20 tasks" in capsys.readouterr().out


def test_gen_default_path_and_determinism(tmp_path):
    args = ["gen", "autogen", "--tasks", "1000", "--layers", "10", "--seed", "7"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "autogen_1000_10_7.dag").read_bytes()
    assert a == (tmp_path / "b" / "autogen_1000_10_7.dag").read_bytes()


@pytest.mark.parametrize("argv", [
    ["gen", "cholesky", "--nblocks", "0"],
    ["gen", "lu"],
    ["gen", "autogen", "--tasks", "3", "--layers", "5"],
    ["gen", "qr", "--nblocks", "2"],
    ["sim"],
    ["bench", "--app", "cholesky"],
    ["bench", "--app", "cholesky", "--sizes", "4", "--policies", "heft"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, tmp_path):
    assert exit_code(argv + ["--out-dir", str(tmp_path)] if argv[0] == "gen" else argv) == 1


def test_attrs_chain_and_cholesky(tmp_path, capsys):
    chain = tmp_path / "chain.dag"
    save_dag(make_graph({0: [], 1: [0], 2: [1]}, {0: "GEMM", 1: "GEMM", 2: "GEMM"}), chain)
    assert main(["attrs", str(chain)]) == 0
    out = capsys.readouterr()
    lines = out.out.splitlines()
    assert lines[0] == "task_id,type,layer,ability,efficiency,static_priority"
    assert [line.split(",")[3] for line in lines[1:]] == ["2", "1", "0"]
    assert "unit_time" in out.err

    c2 = tmp_path / "c2.dag"
    main(["gen", "cholesky", "--nblocks", "2", "-o", str(c2)])
    target = tmp_path / "c2.csv"
    assert main(["attrs", str(c2), "-o", str(target)]) == 0
    table = rows(target)
    assert len(table) == 4
    exit_task = [r for r in table if r["ability"] == "0"]
    assert len(exit_task) == 1 and exit_task[0]["efficiency"] == "0"


def test_attrs_unknown_type_is_runtime_error(tmp_path, capsys):
    path = tmp_path / "odd.dag"
    save_dag(make_graph({0: []}, {0: "MYSTERY"}), path)
    assert main(["attrs", str(path)]) == 2
    assert "MYSTERY" in capsys.readouterr().err


def test_sim_single_task(tmp_path, capsys):
    path = tmp_path / "one.dag"
    save_dag(make_graph({0: []}, {0: "GEMM"}), path)
    for policy in ("fifo", "dm", "dmda", "dmdap", "inspirit"):
        assert main(["sim", str(path), "--policy", policy, "--platform", "2gpu"]) == 0
        assert "makespan_ms=0.500000" in capsys.readouterr().out


def test_sim_trace_is_deterministic_and_echoes_config(tmp_path, capsys):
    dag = tmp_path / "c6.dag"
    main(["gen", "cholesky", "--nblocks", "6", "-o", str(dag)])
    capsys.readouterr()
    outs = []
    for name in ("a", "b"):
        argv = ["sim", str(dag), "--policy", "inspirit", "--k-inc", "0.5", "--s-dec", "4", "--trace",
                "--out-dir", str(tmp_path / name)]
        assert main(argv) == 0
        outs.append(capsys.readouterr().out)
    assert "k_inc=0.5" in outs[0] and "s_dec=4" in outs[0]
    for f in ("nready_time.csv", "push_pop.csv", "gantt.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # default window: ten median task times
    assert "window_ms=3.5" in outs[0]


def test_sim_missing_file_is_runtime_error(tmp_path):
    assert main(["sim", str(tmp_path / "nope.dag")]) == 2


def test_sim_custom_platform_file(tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"workers": [{"kind": "CPU", "memory_node": 0}],
                               "costs": {"UNIT": {"CPU": 2.0, "GPU": 1.0}}}))
    dag = tmp_path / "two.dag"
    save_dag(make_graph({0: [], 1: []}), dag)
    assert main(["sim", str(dag), "--platform", str(cfg)]) == 0
    assert "makespan_ms=4.000000" in capsys.readouterr().out


def test_bench_baseline_and_sorting(tmp_path):
    argv = ["bench", "--app", "cholesky", "--sizes", "8,4", "--policies", "inspirit,dmda",
            "--platform", "26cpu_2gpu", "--jobs", "1", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    table = rows(tmp_path / "bench.csv")
    assert [(r["size"], r["policy"]) for r in table] == [("4", "dmda"), ("4", "inspirit"), ("8", "dmda"),
                                                          ("8", "inspirit")]
    for r in table:
        if r["policy"] == "dmda":
            assert float(r["speedup"]) == 1.0
    base = {r["size"]: float(r["makespan_ms"]) for r in table if r["policy"] == "dmda"}
    for r in table:
        assert float(r["speedup"]) == base[r["size"]] / float(r["makespan_ms"])


def test_bench_matches_sim(tmp_path, capsys):
    assert main(["bench", "--app", "lu", "--sizes", "5", "--policies", "dmdap", "--jobs", "1",
                 "--out-dir", str(tmp_path)]) == 0
    table = rows(tmp_path / "bench.csv")
    dag = tmp_path / "lu5.dag"
    main(["gen", "lu", "--nblocks", "5", "-o", str(dag)])
    capsys.readouterr()
    main(["sim", str(dag), "--policy", "dmdap"])
    out = capsys.readouterr().out
    got = float(out.split("makespan_ms=")[1].split()[0])
    assert got == pytest.approx(float([r for r in table if r["policy"] == "dmdap"][0]["makespan_ms"]), abs=1e-6)


def test_bench_records_failed_cells(tmp_path):
    bad = tmp_path / "broken.dag"
    bad.write_text('{"kind":"meta","name":"x","version":1}\n{"kind":"task","id":0,"type":"A","deps":[3]}\n')
    good = tmp_path / "good.dag"
    save_dag(make_graph({0: []}, {0: "GEMM"}), good)
    argv = ["bench", "--app", "file", "--dag", str(bad), "--dag", str(good), "--policies", "dmda",
            "--jobs", "1", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    table = {r["size"]: r for r in rows(tmp_path / "bench.csv")}
    assert table["broken"]["error"] and not table["broken"]["makespan_ms"]
    assert not table["good"]["error"] and float(table["good"]["makespan_ms"]) == 0.5


def test_bench_parallel_equals_serial(tmp_path):
    base = ["bench", "--app", "heat", "--sizes", "3,4", "--policies", "fifo,inspirit", "--platform",
            "2gpu,26cpu_1gpu"]
    assert main(base + ["--jobs", "1", "--out-dir", str(tmp_path / "s")]) == 0
    assert main(base + ["--jobs", "2", "--out-dir", str(tmp_path / "p")]) == 0
    assert (tmp_path / "s" / "bench.csv").read_bytes() == (tmp_path / "p" / "bench.csv").read_bytes()
    assert len(rows(tmp_path / "s" / "bench.csv")) == 2 * 2 * 3  # dmda baseline is added


def test_parse_sizes():
    assert parse_sizes("1000:30000:4000") == [1000, 5000, 9000, 13000, 17000, 21000, 25000, 29000]
    assert parse_sizes("36:52:4") == [36, 40, 44, 48, 52]
    assert parse_sizes("8,4,8") == [4, 8]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hetsim", "gen", "cholesky", "--nblocks", "3", "-o",
                           str(tmp_path / "c3.dag")], capture_output=True, text=True)
    assert proc.returncode == 0 and "10 tasks" in proc.stdout
