import json

import numpy as np
import pytest
import yaml

from valvetune import cli
from valvetune.config import CampaignConfig, ConfigError, dump_config, load_config, parse_config

SMALL = """\
budget: 2
init_design: 3
seed: 4
acquisition:
  kind: {kind}
  n_representers: 30
  n_function_samples: 80
  n_starts: 5
  n_fantasies: 5
  n_local: 1
  local_maxiter: 30
outputs:
  figures: {figures}
"""


def write_config(tmp_path, kind="EI", figures="false", extra=""):
    path = tmp_path / f"{kind}.yaml"
    path.write_text(SMALL.format(kind=kind, figures=figures) + extra)
    return path


def run_log(out):
    return (out / cli.LOG_NAME).read_text()


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = CampaignConfig()
        text = dump_config(cfg)
        assert parse_config(yaml.safe_load(text), text) == cfg

    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("")
        assert load_config(p) == CampaignConfig()

    def test_unknown_key_reports_line(self):
        text = "budget: 5\nacquisition:\n  kind: ES\n  n_samples: 3\n"
        with pytest.raises(ConfigError) as err:
            parse_config(yaml.safe_load(text), text)
        assert err.value.field == "acquisition.n_samples"
        assert err.value.line == 4

    def test_partial_bounds_merge_with_defaults(self):
        text = "bounds:\n  t_set:\n    lower: 0.08\n"
        cfg = parse_config(yaml.safe_load(text), text)
        assert cfg.bounds.lower[0] == 0.08
        assert cfg.bounds.upper[0] == 0.2

    def test_inverted_bounds_rejected(self):
        text = "bounds:\n  t_set:\n    lower: 0.3\n    upper: 0.2\n"
        with pytest.raises(ConfigError) as err:
            parse_config(yaml.safe_load(text), text)
        assert err.value.field == "bounds.t_set"
        assert err.value.line == 2

    @pytest.mark.parametrize("text,field", [
        ("budget: 0\n", "budget"),
        ("budget: 2.5\n", "budget"),
        ("functional: fancy\n", "functional"),
        ("hyper:\n  mode: often\n", "hyper.mode"),
        ("hyper:\n  profile: nope\n", "hyper.profile"),
        ("plant:\n  k_lo: -1\n", "plant"),
        ("outputs:\n  trajectories: some\n", "outputs.trajectories"),
    ])
    def test_invalid_values(self, text, field):
        with pytest.raises(ConfigError) as err:
            parse_config(yaml.safe_load(text), text)
        assert err.value.field == field

    def test_hyper_modes(self):
        assert CampaignConfig().hyper_mode().kind == "fit-once"
        text = "acquisition:\n  kind: EI\nhyper:\n  mode: profile\n"
        mode = parse_config(yaml.safe_load(text), text).hyper_mode()
        assert mode.kind == "fixed" and mode.hyper.kernel.family == "se"

    def test_output_dir_precedence(self, monkeypatch, tmp_path):
        cfg = CampaignConfig()
        monkeypatch.setenv("VALVETUNE_OUTPUT_DIR", str(tmp_path / "env"))
        assert cfg.resolve_output_dir() == tmp_path / "env"
        assert cfg.resolve_output_dir(str(tmp_path / "cli")) == tmp_path / "cli"


class TestEvaluate:
    def test_json_output(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code = cli.main(["evaluate", str(cfg), "--theta", "0.1", "0.02", "-1", "-30", "--json",
                         "--out", str(tmp_path / "ev")])
        assert code == cli.EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert 0 < result["J"] < 1
        assert len(result["metrics"]["steps"]) == 9
        assert (tmp_path / "ev" / "trajectory.csv").exists()

    def test_table_output(self, tmp_path, capsys):
        cli.main(["evaluate", str(write_config(tmp_path)), "--theta", "0.1", "0.02", "-1", "-30"])
        out = capsys.readouterr().out
        assert "J_heur" in out and "T90 [ms]" in out

    def test_out_of_bounds_refused(self, tmp_path, capsys):
        code = cli.main(["evaluate", str(write_config(tmp_path)), "--theta", "0.1", "0.005", "-1", "-30"])
        assert code == cli.EXIT_REFUSED
        assert "t_obs" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("budget: -3\n")
        assert cli.main(["evaluate", str(p), "--theta", "0.1", "0.02", "-1", "-30"]) == cli.EXIT_CONFIG
        assert "budget" in capsys.readouterr().err


class TestCampaigns:
    def test_tune_writes_artifacts(self, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, kind="ES", figures="true")
        assert cli.main(["tune", str(cfg), "--out", str(out)]) == cli.EXIT_OK
        records = cli.read_log(out / cli.LOG_NAME)
        assert len(records) == 5
        for name in ("report.json", "costs.csv", "config.yaml", "trajectories/best.csv",
                     "figures/cost_vs_iteration.png", "figures/pmin_last.png"):
            assert (out / name).exists(), name
        assert len(list((out / "pmin").glob("pmin_*.csv"))) == 2
        report = json.loads((out / "report.json").read_text())
        assert report["incumbent_source"] == "posterior-mean"

    def test_existing_log_needs_force(self, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path)
        cli.main(["tune", str(cfg), "--out", str(out), "--max-evaluations", "1"])
        assert cli.main(["tune", str(cfg), "--out", str(out)]) == cli.EXIT_CONFIG
        assert cli.main(["tune", str(cfg), "--out", str(out), "--force",
                         "--max-evaluations", "1"]) == cli.EXIT_OK
        assert len(cli.read_log(out / cli.LOG_NAME)) == 1

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = write_config(tmp_path)
        full, part = tmp_path / "full", tmp_path / "part"
        cli.main(["tune", str(cfg), "--out", str(full)])
        cli.main(["tune", str(cfg), "--out", str(part), "--max-evaluations", "4"])
        assert len(cli.read_log(part / cli.LOG_NAME)) == 4
        assert cli.main(["resume", str(part)]) == cli.EXIT_OK
        assert run_log(part) == run_log(full)
        # a finished run resumes to a no-op
        assert cli.main(["resume", str(part)]) == cli.EXIT_OK
        assert run_log(part) == run_log(full)

    def test_random_baseline_shares_initial_design(self, tmp_path):
        cfg = write_config(tmp_path)
        cli.main(["tune", str(cfg), "--out", str(tmp_path / "t")])
        cli.main(["baseline", str(cfg), "--out", str(tmp_path / "b")])
        t = cli.read_log(tmp_path / "t" / cli.LOG_NAME)
        b = cli.read_log(tmp_path / "b" / cli.LOG_NAME)
        assert len(b) == len(t)
        assert [r["theta"] for r in b[:3]] == [r["theta"] for r in t[:3]]
        assert {r["phase"] for r in b[3:]} == {"baseline"}

    def test_grid_baseline(self, tmp_path):
        cfg = write_config(tmp_path, extra="baseline:\n  points_per_dim: 2\n")
        cli.main(["baseline", str(cfg), "--method", "grid", "--out", str(tmp_path / "g"),
                  "--max-evaluations", "3"])
        recs = cli.read_log(tmp_path / "g" / cli.LOG_NAME)
        np.testing.assert_allclose(recs[0]["x"], [0.25] * 4)

    def test_report_command(self, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["tune", str(write_config(tmp_path)), "--out", str(out)])
        (out / "costs.csv").unlink()
        assert cli.main(["report", str(out), "--no-figures"]) == cli.EXIT_OK
        assert (out / "costs.csv").exists()
        assert "best observed J" in capsys.readouterr().out

    def test_report_missing_log(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_corrupt_log_is_reported(self, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["tune", str(write_config(tmp_path)), "--out", str(out), "--max-evaluations", "2"])
        with open(out / cli.LOG_NAME, "a") as fh:
            fh.write("{not json\n")
        assert cli.main(["resume", str(out)]) == cli.EXIT_FAIL
        assert "invalid JSON" in capsys.readouterr().err
