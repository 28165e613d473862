"""Command-line surface: exit codes, file emission, check gates."""

import numpy as np
import pytest

from phconv import cli, scenario_io

# short horizons keep the CLI tests fast; the full-length case studies
# run in the acceptance suite
FAST = ["--duration-s", "0.05", "--no-plots"]


def test_unknown_flag_exits_one(capsys):
    assert cli.main(["demo", "normal", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_demo_name_exits_one(capsys):
    assert cli.main(["demo", "blackout"]) == 1


def test_missing_subcommand_exits_one():
    assert cli.main([]) == 1


def test_demo_writes_reports(tmp_path):
    rc = cli.main(["demo", "normal", "--out", str(tmp_path), *FAST])
    assert rc == 0
    assert (tmp_path / "normal-ph_trajectory.csv").is_file()
    assert (tmp_path / "normal-ph_summary.csv").is_file()
    assert (tmp_path / "normal-ph_passivity.csv").is_file()


def test_demo_plots_are_rendered(tmp_path):
    rc = cli.main(["demo", "sag", "--out", str(tmp_path),
                   "--duration-s", "0.02"])
    assert rc == 0
    for suffix in ("vdc", "hdot", "load"):
        svg = tmp_path / f"sag-ph_{suffix}.svg"
        assert svg.is_file()
        assert svg.read_text().lstrip().startswith("<?xml")


def test_demo_check_passes_on_short_steady_horizon(tmp_path):
    # before the 0.5 s step the normal demo is a settled run, so every
    # gate (band, passivity, consistency) holds
    rc = cli.main(["demo", "normal", "--out", str(tmp_path), "--check", *FAST])
    assert rc == 0


def test_run_config_and_audit_round_trip(tmp_path):
    cfg = tmp_path / "case.ini"
    cfg.write_text(
        "[scenario]\nname = tiny\n"
        "[sim]\nduration_s = 0.02\ndecimation = 1\n"
        "[load]\nkind = steps\nsteps = 0 1.0\n"
        "[output]\ndir = " + str(tmp_path) + "\n"
    )
    rc = cli.main(["run", "--config", str(cfg), "--no-plots"])
    assert rc == 0
    traj_csv = tmp_path / "tiny_trajectory.csv"
    assert traj_csv.is_file()

    rc = cli.main(["audit", "--trajectory", str(traj_csv), "--check"])
    assert rc == 0


def test_run_bad_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[plant]\nc_dc_mf = -1\n")
    rc = cli.main(["run", "--config", str(cfg)])
    assert rc == 1
    assert "c_dc_mf" in capsys.readouterr().err


def test_check_gate_fails_on_violated_band(tmp_path):
    # a PI run through the load step exceeds the 2 % band -> exit 2
    rc = cli.main(["demo", "normal", "--controller", "pi", "--out",
                   str(tmp_path), "--check", "--duration-s", "0.7",
                   "--no-plots"])
    assert rc == 2


def test_compare_demo(tmp_path, capsys):
    rc = cli.main(["compare", "--demo", "normal", "--out", str(tmp_path),
                   *FAST])
    assert rc == 0
    out = capsys.readouterr().out
    assert "max_dev_pu" in out
    assert (tmp_path / "normal-ph_compare.csv").is_file()


def test_sweep_grid(tmp_path, capsys):
    cfg = tmp_path / "case.ini"
    cfg.write_text(
        "[scenario]\nname = sweepcase\n"
        "[sim]\nduration_s = 0.02\n"
    )
    rc = cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path),
                   "--set", "controller.k_v_a=1000,2000", "--no-plots"])
    assert rc == 0
    lines = (tmp_path / "sweep_metrics.csv").read_text().splitlines()
    assert len(lines) == 3  # header + 2 variants
    assert "k_v_a=1000" in lines[1] + lines[2]
