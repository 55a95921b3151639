"""Tests for config parsing and the command-line interface."""
import os

import numpy as np
import pytest

from guidedog.cli import (CampaignConfig, ValidationError, main,
                          parse_config)
from guidedog.guidance import METHODS


def _write(tmp_path, text, name="config.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# config parsing


def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, ""))
    assert cfg.problem == "example"
    assert cfg.alpha == 2.0
    assert cfg.mesh_intervals is None
    assert cfg.runs == 100
    assert cfg.q == 0.01 and cfg.beta == 5.0
    assert cfg.seed == 1234
    assert cfg.methods == METHODS
    assert cfg.workers == 1
    assert cfg.output_dir == "."


def test_config_values_applied(tmp_path):
    cfg = parse_config(_write(tmp_path, """
[problem]
alpha = 2.5

[mesh]
intervals = 8
order = 5

[solver]
max_iterations = 50
kkt_tolerance = 1e-9

[guidance]
period = 2.0
cycles = 20
method = OG

[mc]
runs = 10
q = 0.02
beta = 10.0
seed = 7
methods = OC, DOG
workers = 3

[output]
directory = out
"""))
    assert cfg.alpha == 2.5
    assert cfg.mesh_intervals == 8 and cfg.mesh_order == 5
    assert cfg.max_iterations == 50 and cfg.kkt_tolerance == 1e-9
    assert cfg.cycle_duration == 2.0 and cfg.cycle_count == 20
    assert cfg.method == "OG"
    assert cfg.runs == 10 and cfg.q == 0.02 and cfg.beta == 10.0
    assert cfg.seed == 7 and cfg.workers == 3
    assert cfg.methods == ("OC", "DOG")
    assert cfg.output_dir == "out"


def test_config_preset_sets_weights(tmp_path):
    cfg = parse_config(_write(tmp_path, "[mc]\npreset = fig3a\n"))
    assert (cfg.q, cfg.beta) == (0.01, 5.0)
    assert cfg.preset == "fig3a"


def test_config_explicit_keys_override_preset(tmp_path):
    cfg = parse_config(_write(tmp_path,
                              "[mc]\npreset = fig3d\nq = 0.005\n"))
    assert cfg.q == 0.005          # explicit key wins
    assert cfg.beta == 10.0        # preset default survives


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ValidationError, match="unknown config section"):
        parse_config(_write(tmp_path, "[plotting]\ncolor = red\n"))


def test_unknown_key_rejected_with_context(tmp_path):
    with pytest.raises(ValidationError, match="runz.*\\[mc\\]"):
        parse_config(_write(tmp_path, "[mc]\nrunz = 10\n"))


def test_zero_runs_rejected(tmp_path):
    with pytest.raises(ValidationError):
        parse_config(_write(tmp_path, "[mc]\nruns = 0\n"))


def test_unparseable_value_names_the_key(tmp_path):
    with pytest.raises(ValidationError, match="mc.seed"):
        parse_config(_write(tmp_path, "[mc]\nseed = lots\n"))


def test_missing_config_file_rejected(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        parse_config(str(tmp_path / "absent.ini"))


def test_unknown_preset_rejected(tmp_path):
    with pytest.raises(ValidationError, match="unknown preset"):
        parse_config(_write(tmp_path, "[mc]\npreset = fig9\n"))


def test_campaign_config_validation():
    with pytest.raises(ValidationError):
        CampaignConfig(problem="rocket")
    with pytest.raises(ValidationError):
        CampaignConfig(alpha=-1.0)
    with pytest.raises(ValidationError):
        CampaignConfig(method="XYZ")
    with pytest.raises(ValidationError):
        CampaignConfig(mesh_intervals=0)
    with pytest.raises(ValidationError):
        CampaignConfig(preset="fig9")
    with pytest.raises(ValidationError):
        CampaignConfig(runs=-5)


# ---------------------------------------------------------------------------
# subcommands


def test_presets_lists_named_cases(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("fig3a", "fig3b", "fig3c", "fig3d"):
        assert name in out
    assert "2.0178" in out   # the mission case advertises its parameter


def test_usage_errors_exit_one(capsys):
    assert main(["explode"]) == 1
    assert main(["campaign", "--runs", "0"]) == 1
    assert main(["mission", "--method", "WAT"]) == 1
    capsys.readouterr()


def test_solve_writes_trajectory_and_objective(tmp_path, capsys):
    rc = main(["solve", "--beta", "0", "--mesh-intervals", "4",
               "--output", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "base objective J = " in out
    csv_path = tmp_path / "trajectory.csv"
    assert csv_path.exists()
    header = csv_path.read_text().splitlines()[0]
    assert header == "time,x1,u1"


def test_solve_desensitized_adds_sensitivity_column(tmp_path, capsys):
    rc = main(["solve", "--beta", "10", "--q", "0.02",
               "--output", str(tmp_path)])
    assert rc == 0
    capsys.readouterr()
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "time,x1,s1,u1"


def test_mission_writes_method_tagged_csv(tmp_path, capsys):
    rc = main(["mission", "--method", "OC", "--preset", "fig3a",
               "--alpha-tilde", "2.01", "--output", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "epsilon = " in out
    assert (tmp_path / "mission_OC.csv").exists()


def test_mission_preset_supplies_flown_parameter(tmp_path, capsys):
    rc = main(["mission", "--method", "OC", "--preset", "fig4",
               "--output", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("mission OC"))
    value = float(line.split("alpha_tilde=")[1].split()[0])
    assert value == 2.0178


def test_failed_solve_exits_two(tmp_path, capsys):
    config = _write(tmp_path, "[solver]\nmax_iterations = 1\n")
    rc = main(["solve", "--beta", "0", "--config", config,
               "--output", str(tmp_path)])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()


def test_campaign_writes_records_summary_and_scatter(tmp_path, capsys):
    config = _write(tmp_path, "[mc]\nmethods = OC\n")
    rc = main(["campaign", "--config", config, "--preset", "fig3a",
               "--runs", "2", "--seed", "5", "--output", str(tmp_path)])
    assert rc == 0
    capsys.readouterr()
    records = (tmp_path / "records.csv").read_text().splitlines()
    assert len(records) == 3    # header + 2 runs x 1 method
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "scatter.svg").exists()


def test_campaign_rerun_reproduces_bytes(tmp_path, capsys):
    config = _write(tmp_path, "[mc]\nmethods = OC\n")
    outputs = []
    for sub in ("a", "b"):
        out_dir = tmp_path / sub
        rc = main(["campaign", "--config", config, "--preset", "fig3c",
                   "--runs", "2", "--seed", "11", "--output", str(out_dir)])
        assert rc == 0
        outputs.append({name: (out_dir / name).read_bytes()
                        for name in ("records.csv", "summary.csv",
                                     "scatter.svg")})
    capsys.readouterr()
    assert outputs[0] == outputs[1]


def test_campaign_all_failed_exits_two(tmp_path, capsys):
    config = _write(tmp_path,
                    "[solver]\nmax_iterations = 1\n[mc]\nmethods = OC\n")
    rc = main(["campaign", "--config", config, "--runs", "2",
               "--output", str(tmp_path)])
    assert rc == 2
    capsys.readouterr()
    # artifacts still written for postmortem inspection
    assert (tmp_path / "records.csv").exists()


def test_worker_env_override_must_be_integer(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GUIDEDOG_WORKERS", "many")
    config = _write(tmp_path, "[mc]\nmethods = OC\n")
    rc = main(["campaign", "--config", config, "--runs", "1",
               "--output", str(tmp_path)])
    assert rc == 1
    capsys.readouterr()


def test_worker_env_override_applies(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("GUIDEDOG_WORKERS", "2")
    config = _write(tmp_path, "[mc]\nmethods = OC\n")
    rc = main(["campaign", "--config", config, "--preset", "fig3a",
               "--runs", "2", "--seed", "5", "--output", str(tmp_path)])
    assert rc == 0
    capsys.readouterr()
    assert (tmp_path / "records.csv").exists()
