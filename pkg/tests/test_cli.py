import json
import math
import socket
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from coexqkd.cli import Scenario, cmd_plan, cmd_sweep, main
from coexqkd.distill import read_key

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
QUIET_PLAN = {"classical": [], "ase": {"no_load_rate": 0.0}}


def write_scenario(tmp_path, name="sc.json", **fields):
    path = tmp_path / name
    path.write_text(json.dumps(fields))
    return path


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_sweep_grid_size_and_order(tmp_path, capsys):
    sc = write_scenario(tmp_path, sweep={"aggregate_dbm": [5.0, -3.0, 0.0], "channel_counts": [25, 6]})
    assert main(["sweep", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "sweep.csv").read_text()
    rows = text.splitlines()
    assert rows[0] == "channel_count,aggregate_dbm,skr,qber,visibility,noise_total"
    assert len(rows) == 7
    keys = [(int(r.split(",")[0]), float(r.split(",")[1])) for r in rows[1:]]
    assert keys == sorted(keys)
    assert (tmp_path / "o" / "sweep.csv").read_bytes().count(b"\r\n") == 7  # RFC-4180
    assert json.loads((tmp_path / "o" / "sweep.json").read_text())["rows"][0]["channel_count"] == 6


def test_sweep_csv_is_bit_identical(tmp_path):
    sc = write_scenario(tmp_path, sweep={"aggregate_dbm": [0.0, 9.0], "channel_counts": [1, 25]})
    for d in ("a", "b"):
        assert main(["sweep", "--scenario", str(sc), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_rows_non_increasing_in_power():
    sc = Scenario.load(SCENARIOS / "hcf_sweep.json")
    rows = cmd_sweep(sc).rows
    for n in sc.channel_counts:
        skr = [r["skr"] for r in rows if r["channel_count"] == n]
        assert all(a >= b for a, b in zip(skr, skr[1:]))


@pytest.mark.parametrize("fields", [
    {"mode": "bogus"},
    {"plan": {"preset": "nope"}},
    {"sweep": {"aggregate_dbm": []}},
    {"unknown_key": 1},
    {"duration_s": -1},
    {"frame": {"mu": 0.1}},
    {"plan": {"quantum": {"mu": 0.0}}},
])
def test_invalid_scenario_exits_nonzero(tmp_path, capsys, fields):
    sc = write_scenario(tmp_path, **fields)
    assert main(["sweep", "--scenario", str(sc)]) != 0
    assert "invalid scenario" in capsys.readouterr().err


def test_unreadable_scenario(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["sweep", "--scenario", str(tmp_path / "bad.json")]) != 0
    assert main(["sweep", "--scenario", str(tmp_path / "missing.json")]) != 0


def test_zero_duration_run(tmp_path, capsys):
    sc = write_scenario(tmp_path, mode="montecarlo", duration_s=0.0)
    assert main(["run", "--scenario", str(sc)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["no_key"] and rep["sifted_bits"] == 0


def test_noiseless_run_qber_is_intrinsic(tmp_path, capsys):
    sc = write_scenario(tmp_path, mode="montecarlo", duration_s=1.0, seed=5, plan=QUIET_PLAN,
                        calibration=None)
    assert main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads(capsys.readouterr().out)
    n = rep["sifted_bits"]
    assert abs(rep["qber"] - 0.0067) < 3 * math.sqrt(0.0067 * (1 - 0.0067) / n)
    m = rep["key_bits_emitted"]
    a, b = (read_key(tmp_path / "o" / f"{r}.key", m) for r in ("alice", "bob"))
    assert m > 0 and a.size == m and np.array_equal(a, b)


def test_run_recovers_sync_offset(tmp_path, capsys):
    sc = write_scenario(tmp_path, mode="session", duration_s=0.1, seed=3, plan=QUIET_PLAN,
                        calibration=None, offset_ns=417.0)
    assert main(["run", "--scenario", str(sc)]) == 0
    assert json.loads(capsys.readouterr().out)["sifted_bits"] > 0


def test_run_sync_failure_exits_nonzero(tmp_path, capsys):
    # with the signal blocked and no dark counts there is nothing to lock onto
    plan = {**QUIET_PLAN, "quantum": {"mu": 1e-12}}
    sc = write_scenario(tmp_path, mode="montecarlo", duration_s=0.01, plan=plan,
                        calibration=None, offset_ns=13.0, detector={"dark_cps": 0.0})
    assert main(["run", "--scenario", str(sc)]) != 0
    assert "sync" in capsys.readouterr().err


def test_run_rejects_analytic_mode(tmp_path):
    sc = write_scenario(tmp_path, mode="analytic")
    assert main(["run", "--scenario", str(sc)]) != 0


def test_seed_override(tmp_path, capsys):
    sc = write_scenario(tmp_path, mode="montecarlo", duration_s=0.05, plan=QUIET_PLAN,
                        calibration=None)
    outs = []
    for seed in ("1", "1", "2"):
        assert main(["run", "--scenario", str(sc), "--seed", seed]) == 0
        outs.append(json.loads(capsys.readouterr().out))
    assert outs[0] == outs[1] != outs[2]
    assert main(["run", "--scenario", str(sc), "--seed", str(2**64)]) != 0


def test_short_run_is_no_key_not_error(tmp_path, capsys):
    sc = write_scenario(tmp_path, mode="montecarlo", duration_s=0.002, plan=QUIET_PLAN,
                        calibration=None)
    assert main(["run", "--scenario", str(sc)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["no_key"] and 0 < rep["sifted_bits"] < 1000


def test_plan_reports_limits_and_renewal():
    out = cmd_plan(Scenario.load(SCENARIOS / "plan_hcf_vs_smf.json"))
    assert out["required_key_rate"]["bit_per_s"] == 125.0
    assert out["required_key_rate"]["target_meets_it"]
    assert out["budget_gap_db"] == pytest.approx(
        out["profile"]["max_aggregate_dbm"] - out["compare_profile"]["max_aggregate_dbm"])


def test_plan_zero_target_is_unclamped(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    assert main(["plan", "--scenario", str(sc), "--skr-target", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["profile"]["unclamped"] and out["compare_profile"]["unclamped"]


def test_plan_infeasible_target_exits_zero(tmp_path, capsys):
    sc = write_scenario(tmp_path)
    assert main(["plan", "--scenario", str(sc), "--skr-target", "1e12"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "infeasible" in out["profile"] and out["budget_gap_db"] is None


def test_calibrate_writes_file(tmp_path, capsys):
    assert main(["calibrate", "--out", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert abs(cal["residual_skr"]) < 1e-3 and abs(cal["residual_qber"]) < 1e-9
    sc = write_scenario(tmp_path, calibration="calibration.json",
                        sweep={"aggregate_dbm": [9.0], "channel_counts": [25]})
    assert main(["sweep", "--scenario", str(sc)]) == 0
    row = capsys.readouterr().out.splitlines()[-1].split(",")
    assert float(row[2]) == pytest.approx(1000.0, rel=1e-6)


# -- networked distill -----------------------------------------------------


def cli(*args):
    return [sys.executable, "-m", "coexqkd", *args]


def distill_pair(sc, out, port, alice_extra=(), bob_extra=()):
    alice = subprocess.Popen(cli("distill", "--scenario", str(sc), "--role", "alice",
                                 "--listen", f"127.0.0.1:{port}", "--out", str(out),
                                 "--timeout", "30", *alice_extra),
                             stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    bob = subprocess.run(cli("distill", "--scenario", str(sc), "--role", "bob",
                             "--connect", f"127.0.0.1:{port}", "--out", str(out),
                             "--timeout", "30", *bob_extra),
                         capture_output=True, text=True, timeout=120)
    a_out, a_err = alice.communicate(timeout=120)
    return (alice.returncode, a_out, a_err), (bob.returncode, bob.stdout, bob.stderr)


@pytest.fixture
def session_scenario(tmp_path):
    return write_scenario(tmp_path, mode="session", duration_s=0.3, seed=11, plan=QUIET_PLAN,
                          calibration=None, shaper={"rate": 330e6})


def test_distill_over_tcp_identical_keys(tmp_path, session_scenario):
    out = tmp_path / "keys"
    (a_rc, a_out, a_err), (b_rc, b_out, b_err) = distill_pair(session_scenario, out, free_port())
    assert a_rc == 0 and b_rc == 0, (a_err, b_err)
    assert json.loads(a_out)["status"] == json.loads(b_out)["status"] == "key"
    assert (out / "alice.key").read_bytes() == (out / "bob.key").read_bytes()


def test_distill_version_mismatch(tmp_path, session_scenario):
    (a_rc, _, a_err), (b_rc, _, b_err) = distill_pair(
        session_scenario, tmp_path / "k", free_port(), bob_extra=("--protocol-version", "2"))
    assert a_rc != 0 and b_rc != 0
    assert "version" in (a_err + b_err).lower()


def test_bob_without_alice_times_out(tmp_path, session_scenario):
    res = subprocess.run(cli("distill", "--scenario", str(session_scenario), "--role", "bob",
                             "--connect", f"127.0.0.1:{free_port()}", "--timeout", "0.5"),
                         capture_output=True, text=True, timeout=120)
    assert res.returncode != 0 and res.stderr
