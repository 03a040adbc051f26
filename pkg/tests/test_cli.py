from __future__ import annotations

import csv
import json
import re
import subprocess
import sys

import pytest

from scenario_docs import chain_doc
from tsnsync.cli import CSV_HEADER, OUTPUT_ENV, bundled_scenarios, main

EXPECTED_SCENARIOS = {
    "fig1_chain", "fig3_5gs_bridge", "fig4_multidomain", "fig5_two_npn_shared_ran",
    "hot_standby_failover", "overhead_demo",
}


def write_doc(path, doc) -> str:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def sawtooth_doc() -> dict:
    """Offset-only slave at 10 ppm: about 1.25 us just before each Sync."""
    doc = chain_doc([500], [], duration="1s", drift_ppm=10)
    doc["domains"][0]["rate_ratio_window"] = 0
    return doc


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert EXPECTED_SCENARIOS <= set(bundled_scenarios())
    for name in EXPECTED_SCENARIOS:
        assert re.search(rf"^{name}\s", out, re.M)


def test_simulate_writes_artifacts(tmp_path, capsys):
    assert main(["simulate", "--config", "fig1_chain", "--output", str(tmp_path), "--duration", "1s"]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"offsets.csv", "summary.json", "budget.json"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["max_offset_ticks"] == 0
    assert all(n["max_offset_ticks"] == 0 for n in summary["nodes"].values())
    assert "fig1_chain: max offset 0" in capsys.readouterr().out


def test_offsets_csv_format(tmp_path):
    assert main(["simulate", "--config", "fiveg_default_chain", "--output", str(tmp_path), "--duration", "1s"]) == 0
    with open(tmp_path / "offsets.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) > 10
    for time_ns, node, domain, ticks, ns_text in rows[1:]:
        assert re.fullmatch(r"-?\d+\.\d{5}", ns_text)
        assert int(time_ns) >= 0 and int(domain) == 0 and node in {"es1", "es2"}
        assert abs(float(ns_text) - int(ticks) / 65536) <= 0.000005


def test_overhead_in_summary(tmp_path):
    assert main(["simulate", "--config", "overhead_demo", "--output", str(tmp_path), "--duration", "200ms"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["overhead_ratio"] == "0.008"


def test_compliance_failure_exit_2(tmp_path):
    cfg = write_doc(tmp_path / "saw.json", sawtooth_doc())
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--output", str(out), "--check-compliance", "1"]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["compliance"]["default"]["pass"] is False
    assert main(["simulate", "--config", cfg, "--output", str(out), "--check-compliance", "2"]) == 0


def test_unwritable_output_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--config", "fig1_chain", "--output", str(blocker / "sub"), "--duration", "100ms"]) == 1


def test_invalid_config_exit_1(tmp_path, capsys):
    doc = chain_doc([500], [])
    doc["domains"][0]["gm_candidates"] = [{"node": "ghost"}]
    cfg = write_doc(tmp_path / "bad.json", doc)
    assert main(["simulate", "--config", cfg, "--output", str(tmp_path)]) == 1
    assert "ghost" in capsys.readouterr().err
    assert main(["validate", "--config", cfg]) == 1


def test_validate_ok(capsys):
    assert main(["validate", "--config", "fig5_two_npn_shared_ran"]) == 0
    assert "ok" in capsys.readouterr().out


def test_output_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["simulate", "--config", "fig1_chain", "--duration", "100ms"]) == 0
    assert (tmp_path / "env" / "offsets.csv").exists()
    assert main(["simulate", "--config", "fig1_chain", "--duration", "100ms", "--output", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "offsets.csv").exists()


def test_same_seed_byte_identical(tmp_path):
    for run in ("a", "b"):
        assert main(["simulate", "--config", "fiveg_default_chain", "--seed", "4", "--duration", "2s",
                     "--output", str(tmp_path / run)]) == 0
    for name in ("offsets.csv", "summary.json", "budget.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    for seed in ("1", "2"):
        main(["simulate", "--config", "fiveg_default_chain", "--seed", seed, "--duration", "1s",
              "--output", str(tmp_path / seed)])
    assert (tmp_path / "1" / "offsets.csv").read_bytes() != (tmp_path / "2" / "offsets.csv").read_bytes()
    assert json.loads((tmp_path / "2" / "summary.json").read_text())["seed"] == 2


def test_batch_runs_in_parallel(tmp_path):
    args = ["simulate", "--config", "fig1_chain", "--config", "overhead_demo", "--duration", "200ms",
            "--output", str(tmp_path), "--jobs", "2"]
    assert main(args) == 0
    assert (tmp_path / "fig1_chain" / "summary.json").exists()
    assert (tmp_path / "overhead_demo" / "summary.json").exists()


def test_batch_exit_code_is_worst(tmp_path):
    cfg = write_doc(tmp_path / "saw.json", sawtooth_doc())
    args = ["simulate", "--config", "fig1_chain", "--config", cfg, "--output", str(tmp_path / "o"),
            "--check-compliance", "1"]
    assert main(args) == 2


def test_bad_duration_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--config", "fig1_chain", "--duration", "soon"])
    assert info.value.code == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "tsnsync", "validate", "--config", "fig1_chain"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and "fig1_chain: ok" in proc.stdout
