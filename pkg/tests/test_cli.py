import json
import os
import subprocess
import sys

import pytest

from dpfn import cli


def _write_cfg(path, **kw):
  base = dict(method=["none", "traditional"], epsilon=[1.0], n_agents=[200], restarts=2,
              horizon_days=8, n_seed_infections=4)
  base.update(kw)
  path.write_text(json.dumps(base))
  return str(path)


def test_run_and_report(tmp_path, capsys):
  cfg = _write_cfg(tmp_path / "cfg.json")
  out = tmp_path / "out"
  assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 0
  table = capsys.readouterr().out
  assert "p000" in table and "p001" in table
  for name in ("runs.csv", "summary.json", "manifest.json"):
    assert (out / name).exists()
  assert cli.main(["report", "--in", str(out)]) == 0
  assert capsys.readouterr().out == table
  assert (out / "report.json").exists()


def test_threads_do_not_change_output(tmp_path):
  cfg = _write_cfg(tmp_path / "cfg.json")
  cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"])
  cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "2"])
  assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()


def test_overrides(tmp_path):
  cfg = _write_cfg(tmp_path / "cfg.json", method=["none"])
  out = tmp_path / "o"
  assert cli.main(["run", "--config", cfg, "--out", str(out), "--restarts", "1",
                   "--seed", "9"]) == 0
  man = json.loads((out / "manifest.json").read_text())
  assert man["config"]["restarts"] == 1 and man["config"]["seed"] == 9


def test_bad_config_fails_before_output(tmp_path, capsys):
  bad = tmp_path / "bad.json"
  bad.write_text(json.dumps({"method": ["dpfn"], "epsilons": [1.0]}))
  out = tmp_path / "never"
  assert cli.main(["run", "--config", str(bad), "--out", str(out)]) == 2
  assert "dpfn: error:" in capsys.readouterr().err
  assert not out.exists()
  assert cli.main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == 2
  assert cli.main(["report", "--in", str(tmp_path)]) == 2


def test_score_bands_cli(tmp_path, capsys):
  path = tmp_path / "bands.csv"
  assert cli.main(["report", "--score-bands", "--samples", "100", "--out", str(path)]) == 0
  lines = path.read_text().splitlines()
  assert lines[0] == "phi,noiseless,q05,q20,q50,q80,q95"
  assert len(lines) == 12


def test_console_script_entry():
  res = subprocess.run([sys.executable, "-m", "dpfn.cli", "--help"], capture_output=True,
                       text=True)
  assert res.returncode == 0 and "run" in res.stdout
