"""Command-line interface tests (exit codes, output shapes, seeding)."""

import json
import os
import subprocess
import sys

import pytest

from snapnet import cli

from conftest import TOPO_DIR, policy_path

TOPO = os.path.join(TOPO_DIR, "example12.json")


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_deps_command(capsys):
    code, out, _ = run_cli(["deps", "-p", policy_path("dns-tunnel-detect")],
                           capsys)
    assert code == 0
    d = json.loads(out)
    assert d["groups"] == [["orphan"], ["susp-client"], ["blacklist"]]
    assert ["orphan", "susp-client"] in d["dep"]


def test_map_command(capsys):
    code, out, _ = run_cli(["map", "-p", policy_path("dns-tunnel-detect"),
                            "-p", policy_path("assign-egress"),
                            "-p", policy_path("assumption"),
                            "-t", TOPO], capsys)
    assert code == 0
    flows = json.loads(out)["flows"]
    by_key = {(r["u"], r["v"]): r["states"] for r in flows}
    assert by_key[(1, 6)] == ["orphan", "susp-client", "blacklist"]


def test_xfdd_command_writes_dot(tmp_path, capsys):
    dot = tmp_path / "d.dot"
    code, _, _ = run_cli(["xfdd", "-p", policy_path("stateful-fw"),
                          "-o", str(dot)], capsys)
    assert code == 0
    assert dot.read_text().startswith("digraph")


def test_compile_simulate_check_pipeline(tmp_path, capsys):
    bundle = tmp_path / "bundle"
    code, out, err = run_cli(
        ["compile", "-p", policy_path("dns-tunnel-detect"),
         "-p", policy_path("assign-egress"),
         "-p", policy_path("assumption"),
         "-t", TOPO, "-o", str(bundle)], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["exact"] is True
    assert set(info["placement"]) == {"orphan", "susp-client", "blacklist"}
    assert "P5 MILP solving" in err  # phase timings go to stderr

    trace = tmp_path / "trace.jsonl"
    trace.write_text(json.dumps({
        "port": 1, "packet": {"inport": 1, "outport": 1,
                              "srcip": "10.0.1.10", "dstip": "10.0.6.10",
                              "srcport": 53, "dstport": 53,
                              "dns-rdata": "10.9.0.1"}}) + "\n")
    code, out, _ = run_cli(["simulate", "--bundle", str(bundle),
                            "--topo", TOPO, "--trace", str(trace)], capsys)
    assert code == 0
    emitted = [json.loads(l) for l in out.splitlines()]
    assert emitted and all(e["port"] == 6 for e in emitted)

    code, out, _ = run_cli(["check", "--bundle", str(bundle),
                            "--topo", TOPO,
                            "-p", policy_path("dns-tunnel-detect"),
                            "-p", policy_path("assign-egress"),
                            "-p", policy_path("assumption")], capsys)
    assert code == 0
    assert json.loads(out)["ok"] is True


def test_compile_error_exit_code_names_variable(capsys):
    code, _, err = run_cli(
        ["compile", "-p", policy_path("conflict-parallel-write"),
         "-t", TOPO, "-o", "/tmp/should-not-exist"], capsys)
    assert code == 1
    assert "'s'" in err


def test_missing_file_is_io_error(capsys):
    code, _, err = run_cli(["deps", "-p", "/nonexistent.snap"], capsys)
    assert code == 3
    assert "i/o error" in err


def test_check_damaged_bundle_exits_2(tmp_path, capsys):
    bundle = tmp_path / "b"
    code, _, _ = run_cli(["compile", "-p", policy_path("stateful-fw"),
                          "-t", TOPO, "-o", str(bundle)], capsys)
    assert code == 0
    pl = json.loads((bundle / "placement.json").read_text())
    pl["placement"] = {k: "nowhere" for k in pl["placement"]}
    (bundle / "placement.json").write_text(json.dumps(pl))
    code, out, _ = run_cli(["check", "--bundle", str(bundle),
                            "--topo", TOPO], capsys)
    assert code == 2
    assert json.loads(out)["ok"] is False


def test_export_lp(tmp_path, capsys):
    lp = tmp_path / "m.lp"
    code, _, _ = run_cli(["export-lp", "-p", policy_path("stateful-fw"),
                          "-t", TOPO, "-o", str(lp)], capsys)
    assert code == 0
    text = lp.read_text()
    assert text.startswith("Minimize") and text.rstrip().endswith("End")


def test_place_and_reroute(tmp_path, capsys):
    code, out, _ = run_cli(["place", "-p", policy_path("stateful-fw"),
                            "-t", TOPO], capsys)
    assert code == 0
    sol = json.loads(out)
    pfile = tmp_path / "p.json"
    pfile.write_text(json.dumps({"placement": sol["placement"]}))
    code, out, _ = run_cli(["reroute", "-p", policy_path("stateful-fw"),
                            "-t", TOPO, "--placement", str(pfile)], capsys)
    assert code == 0
    assert json.loads(out)["placement"] == sol["placement"]


def test_seed_env_override(tmp_path, capsys, monkeypatch):
    bundle = tmp_path / "b"
    run_cli(["compile", "-p", policy_path("stateful-fw"),
             "-t", TOPO, "-o", str(bundle)], capsys)
    trace = tmp_path / "t.jsonl"
    trace.write_text(json.dumps({
        "port": 1, "packet": {"inport": 1, "outport": 1,
                              "srcip": "10.0.1.10", "dstip": "10.0.6.10",
                              "srcport": 80, "dstport": 80,
                              "dns-rdata": "10.9.0.1"}}) + "\n")
    monkeypatch.setenv("SNAPNET_SEED", "17")
    code, _, _ = run_cli(["simulate", "--bundle", str(bundle),
                          "--topo", TOPO, "--trace", str(trace),
                          "--mode", "interleaved"], capsys)
    assert code == 0


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "snapnet.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "compile" in r.stdout and "simulate" in r.stdout
