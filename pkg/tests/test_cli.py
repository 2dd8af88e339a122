import csv
import hashlib
import json
import subprocess
import sys

import pytest
from PIL import Image

from exitdse.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def worked_args(f, out):
    return ["--network", f["worked_net"], "--trace", f["worked_trace"], "--profile", f["unit"], "--out-dir", out]


def syn_args(f, out):
    return ["--network", f["syn_net"], "--trace", f["syn_trace"], "--profile", f["syn_profile"], "--out-dir", out]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest_hash(out):
    return json.loads((out / "manifest.json").read_text())["manifest_sha256"]


def check_embedded(out):
    h = manifest_hash(out)
    names = json.loads((out / "manifest.json").read_text())["outputs"]
    assert names
    for name in names:
        p = out / name
        if p.suffix == ".csv":
            assert p.read_text().splitlines()[0] == f"# manifest sha256={h}"
        elif p.suffix == ".json":
            assert json.loads(p.read_text())["manifest_sha256"] == h
        elif p.suffix == ".jsonl":
            assert json.loads(p.read_text().splitlines()[0]) == {"manifest_sha256": h}
        elif p.suffix == ".png":
            assert Image.open(p).text["Description"] == f"manifest sha256={h}"
        else:
            raise AssertionError(f"unexpected artifact {name}")


def test_optimize_worked_bit_identical(capsys, fixture_files, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(capsys, "optimize", *worked_args(fixture_files, a), "--wlat", 1, "--seed", 7)
    assert code == 0
    assert "design\t" in out
    for name in ("best.json", "pareto.csv", "search_log.jsonl", "manifest.json", "pareto.png", "search_trace.png"):
        assert (a / name).is_file()
    run(capsys, "optimize", *worked_args(fixture_files, b), "--wlat", 1, "--seed", 7)
    first = {p.name: digest(p) for p in a.iterdir()}
    assert first == {p.name: digest(p) for p in b.iterdir()}
    run(capsys, "optimize", *worked_args(fixture_files, a), "--wlat", 1, "--seed", 7)
    assert first == {p.name: digest(p) for p in a.iterdir()}
    check_embedded(a)
    m = json.loads((a / "manifest.json").read_text())
    assert m["seed"] == 7 and m["inputs"]["trace"]["sha256"] == digest(fixture_files["worked_trace"])
    assert "time" not in json.dumps(m).lower()


def test_seed_changes_manifest(capsys, fixture_files, tmp_path):
    run(capsys, "optimize", *worked_args(fixture_files, tmp_path / "a"), "--seed", 1, "--no-plots")
    run(capsys, "optimize", *worked_args(fixture_files, tmp_path / "b"), "--seed", 2, "--no-plots")
    assert manifest_hash(tmp_path / "a") != manifest_hash(tmp_path / "b")


def test_evaluate_reproduces_optimize_metrics(capsys, fixture_files, tmp_path):
    opt, ev = tmp_path / "opt", tmp_path / "ev"
    run(capsys, "optimize", *syn_args(fixture_files, opt), "--seed", 3, "--no-plots")
    best = json.loads((opt / "best.json").read_text())
    code, _, _ = run(capsys, "evaluate", *syn_args(fixture_files, ev), "--design", opt / "best.json")
    assert code == 0
    got = json.loads((ev / "metrics.json").read_text())
    assert got["metrics"] == best["metrics"]
    assert got["score"] == best["score"]
    check_embedded(ev)


def test_enumerate_counts_all_designs(capsys, fixture_files, tmp_path):
    out = tmp_path / "e"
    code, stdout, _ = run(capsys, "enumerate", *syn_args(fixture_files, out), "--jobs", 2)
    assert code == 0
    assert "designs\t3071" in stdout
    lines = [l for l in (out / "designs.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 1 + 3071
    check_embedded(out)


def test_simulate_with_budget(capsys, fixture_files, tmp_path):
    out = tmp_path / "s"
    code, stdout, _ = run(capsys, "simulate", *worked_args(fixture_files, out),
                          "--design", fixture_files["worked_design"], "--budget-ms", 3.5)
    assert code == 0 and "terminal\texit1" in stdout
    rows = list(csv.reader(l for l in (out / "outcomes.csv").read_text().splitlines() if not l.startswith("#")))
    # exit1 is terminal: every sample stops after L2, sample 4 takes exit1's wrong label
    assert rows[1:] == [[str(i), "1", "exit1", c, "3"] for i, c in enumerate("11010")]
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["executed_design"]["terminal_exit"] == 1
    assert metrics["metrics"]["wc_latency_ms"] == 3.0
    check_embedded(out)


def test_simulate_infeasible_budget(capsys, fixture_files, tmp_path):
    code, _, err = run(capsys, "simulate", *worked_args(fixture_files, tmp_path / "s"),
                       "--design", fixture_files["worked_design"], "--budget-ms", 0.5)
    assert code == 1
    assert "cheapest" in err


def test_optimize_infeasible(capsys, fixture_files, tmp_path):
    out = tmp_path / "o"
    code, _, err = run(capsys, "optimize", *worked_args(fixture_files, out), "--eps-ms", 0.1, "--no-plots")
    assert code == 1 and "least-violating" in err
    assert json.loads((out / "best.json").read_text())["feasible"] is False


def test_wlat_grid(capsys, fixture_files, tmp_path):
    out = tmp_path / "w"
    code, _, _ = run(capsys, "optimize", *worked_args(fixture_files, out), "--wlat-grid", "0.25,1,2")
    assert code == 0
    rows = list(csv.reader(l for l in (out / "wlat.csv").read_text().splitlines() if not l.startswith("#")))
    assert [r[0] for r in rows[1:]] == ["0.25", "1.0", "2.0"]
    assert sum(int(r[-1]) for r in rows[1:]) == 1
    assert (out / "wlat_tradeoff.png").is_file()
    check_embedded(out)


def test_gen_trace_and_export(capsys, fixture_files, tmp_path):
    g1, g2 = tmp_path / "g1", tmp_path / "g2"
    run(capsys, "gen-trace", "--network", fixture_files["worked_net"], "--samples", 50, "--seed", 4, "--out-dir", g1)
    run(capsys, "gen-trace", "--network", fixture_files["worked_net"], "--samples", 50, "--seed", 4, "--out-dir", g2)
    assert digest(g1 / "trace.csv") == digest(g2 / "trace.csv")
    check_embedded(g1)
    x = tmp_path / "x"
    code, stdout, _ = run(capsys, "export-sdf", "--network", fixture_files["worked_net"], "--trace",
                          fixture_files["worked_trace"], "--design", fixture_files["worked_design"], "--out-dir", x)
    assert code == 0 and "residual\t0" in stdout
    q = [l for l in (x / "q.csv").read_text().splitlines() if not l.startswith("#")]
    assert q == ["q", "1", "1", "0.2", "0.2", "0.2", "0", "1"]
    check_embedded(x)


def test_gen_trace_from_spec_file(capsys, fixture_files, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_samples": 30, "seed": 12}))
    out = tmp_path / "g"
    run(capsys, "gen-trace", "--network", fixture_files["worked_net"], "--trace-spec", spec, "--out-dir", out)
    m = json.loads((out / "manifest.json").read_text())
    assert m["seed"] == 12 and m["parameters"]["trace_spec"]["n_samples"] == 30


def test_inputs_not_mutated(capsys, fixture_files, tmp_path):
    before = {k: digest(p) for k, p in fixture_files.items()}
    run(capsys, "optimize", *worked_args(fixture_files, tmp_path / "o"), "--no-plots")
    run(capsys, "simulate", *worked_args(fixture_files, tmp_path / "s"), "--design", fixture_files["worked_design"])
    run(capsys, "evaluate", *worked_args(fixture_files, tmp_path / "e"), "--design", fixture_files["worked_design"])
    assert before == {k: digest(p) for k, p in fixture_files.items()}


@pytest.mark.parametrize(
    "argv, needle",
    [
        ([], "subcommand"),
        (["optimize"], "--network"),
        (["optimize", "--network", "missing.json", "--trace", "x", "--profile", "y"], "--network"),
        (["optimize", "--latency-mode", "median"], "latency-mode"),
        (["frobnicate"], "frobnicate"),
        (["evaluate", "--network", "N", "--trace", "T", "--profile", "P"], "--design"),
    ],
)
def test_input_errors(capsys, argv, needle):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert len(err.strip().splitlines()) == 1
    assert needle in err


def test_bad_file_contents(capsys, fixture_files, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("sample_id,conf_1,correct_1\n0,0.5,1\n")
    code, _, err = run(capsys, "optimize", "--network", fixture_files["worked_net"], "--trace", bad,
                       "--profile", fixture_files["unit"], "--out-dir", tmp_path / "o")
    assert code == 2 and "bad header" in err and len(err.strip().splitlines()) == 1
    code, _, err = run(capsys, "optimize", *worked_args(fixture_files, tmp_path / "o"), "--thresholds", "0.5,x")
    assert code == 2 and "--thresholds" in err
    code, _, err = run(capsys, "optimize", *worked_args(fixture_files, tmp_path / "o"), "--wlat", -1)
    assert code == 2 and "--wlat" in err
    wrong = tmp_path / "d.json"
    wrong.write_text(json.dumps({"p_exit": [1, 0, 1], "c_thr": "0.5"}))
    code, _, err = run(capsys, "evaluate", *worked_args(fixture_files, tmp_path / "e"), "--design", wrong)
    assert code == 2 and "p_exit" in err


def test_console_script_and_log_env(fixture_files, tmp_path):
    env = {"EXITDSE_LOG": "debug", "PATH": "/usr/local/bin:/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "exitdse.cli", "optimize", *map(str, worked_args(fixture_files, tmp_path / "o")),
         "--no-plots"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert "DEBUG exitdse.dse: initial temperature" in proc.stderr
