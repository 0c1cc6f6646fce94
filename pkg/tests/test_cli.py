import csv
import json
from pathlib import Path

import pytest

from uniscatter import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_DEFECT = {
    "model": {
        "half_width": 256,
        "coin_left": {"a": 0.9},
        "coin_right": {"a": 0.9},
        "deviations": [{"site": 0, "coin": {"a": 0.4, "alpha": 0.3, "delta": 0.7}}],
        "decay": {"kappa_left": 10, "kappa_right": 10},
    },
    "numerics": {"sigma_schedule": [0.2]},
}


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_spectrum_reports_hadamard_thresholds(tmp_path, capsys):
    code = cli.run_command(["spectrum", "--config", str(CONFIGS / "hadamard.json"), "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "thresholds.csv").open()))
    assert [float(r["theta"]) for r in rows] == pytest.approx([0.7853981, 2.3561945, 3.9269908, 5.4977871], abs=1e-6)
    assert "0.785398163" in capsys.readouterr().out
    prov = json.loads((tmp_path / "spectrum.json").read_text())["provenance"]
    assert len(prov["config_sha256"]) == 64 and "numpy" in prov


def test_verify_free_hadamard_passes(tmp_path):
    assert cli.run_command(["verify", "--config", str(CONFIGS / "free_hadamard.json"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "verify.json").read_text())["result"]
    assert summary["all_passed"]
    for check in summary["checks"]:
        assert check["residual"] <= 1e-6


def test_verify_failure_exits_three(tmp_path):
    raw = json.loads((CONFIGS / "minimal.json").read_text())
    raw["model"]["half_width"] = 32
    raw["numerics"] = {"tolerance": 1e-300}
    assert cli.run_command(["verify", "--config", _write(tmp_path, raw), "--out", str(tmp_path)]) == 3


def test_exit_codes(tmp_path, monkeypatch):
    assert cli.run_command(["spectrum", "--config", str(tmp_path / "missing.json")]) == 1
    assert cli.run_command(["nonsense"]) == 1
    cfg = _write(tmp_path, SMALL_DEFECT)
    assert cli.run_command(["smatrix", "--config", cfg, "--theta", "0.46", "--out", str(tmp_path)]) == 2

    def boom(*args):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "spectrum", boom)
    assert cli.run_command(["spectrum", "--config", cfg, "--out", str(tmp_path)]) == 4


def test_smatrix_csv_is_reproducible(tmp_path):
    cfg = _write(tmp_path, SMALL_DEFECT)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert cli.run_command(["smatrix", "--config", cfg, "--theta", "1.5708", "--out", str(out), "--threads", "1"]) == 0
        outs.append((out / "smatrix.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader((tmp_path / "a" / "smatrix.csv").open()))
    assert {r["source"] for r in rows} == {"formula_plus", "formula_minus", "packet_oracle"}
    assert all(r["dim_squared"] == "16" for r in rows)
    assert float(rows[0]["plus_minus_distance"]) < 1e-8
    coeff = list(csv.DictReader((tmp_path / "a" / "coefficients.csv").open()))
    assert {r["kind"] for r in coeff} == {"transmission", "reflection"}
