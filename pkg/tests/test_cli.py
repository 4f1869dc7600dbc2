import csv
import json
import logging

import pytest

import repexkit.validation as validation
from repexkit import cli, io


def write_config(path, **over):
    cfg = {"system": {"type": "DoubleWell1D"},
           "dimensions": [{"kind": "temperature", "lo": 280, "hi": 360, "n": 4}],
           "cycles": 3, "steps_per_cycle": 200, "stride": 20, "seed": 5,
           "pilot": {"backend": {"type": "real", "workers": 2}}}
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return path


def metrics(run_dir):
    return {row["metric"]: float(row["value"]) for row in csv.DictReader(open(run_dir / "metrics.csv"))}


def virtual(**over):
    return dict({"pilot": {"backend": {"type": "virtual"}}}, **over)


class TestRun:
    def test_resume_matches_uninterrupted(self, tmp_path):
        full, part = tmp_path / "full", tmp_path / "part"
        assert cli.main(["run", "--config", str(write_config(tmp_path / "c6.json", cycles=6)),
                         "--out", str(full)]) == 0
        assert cli.main(["run", "--config", str(write_config(tmp_path / "c3.json", cycles=3)),
                         "--out", str(part)]) == 0
        assert cli.main(["run", "--config", str(tmp_path / "c6.json"), "--out", str(part),
                         "--restart", str(part / io.RESTART)]) == 0
        for name in (io.EXCHANGES, io.TRACE, io.SAMPLES, io.RESTART):
            assert (full / name).read_bytes() == (part / name).read_bytes(), name
        strip = [{k: v for k, v in r.items() if k != "wall_t_c"} for r in io.read_timing(full / io.TIMING)]
        assert strip == [{k: v for k, v in r.items() if k != "wall_t_c"} for r in io.read_timing(part / io.TIMING)]

    def test_restart_seed_mismatch(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
        code = cli.main(["run", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "r"),
                         "--restart", str(tmp_path / "r" / io.RESTART)])
        assert code == 2 and "seed" in capsys.readouterr().err

    def test_zero_cycles_writes_headers(self, tmp_path):
        out = tmp_path / "z"
        assert cli.main(["run", "--config", str(write_config(tmp_path / "c.json", cycles=0)),
                         "--out", str(out)]) == 0
        assert (out / io.EXCHANGES).read_text() == ""
        assert (out / io.TIMING).read_text().splitlines() == [",".join(io.TIMING_COLUMNS)]

    def test_run_refuses_virtual_backend(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(write_config(tmp_path / "c.json", **virtual()))]) == 2
        assert "simulate" in capsys.readouterr().err

    def test_bad_config_reports_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", dimensions=[{"kind": "temperature", "ladder": [-10, 300]}])
        assert cli.main(["run", "--config", str(cfg)]) == 2
        assert "dimensions[0].ladder" in capsys.readouterr().err


class TestSimulate:
    def test_mode_two_waves(self, tmp_path):
        out = tmp_path / "s"
        cfg = write_config(tmp_path / "c.json", dimensions=[{"kind": "temperature", "lo": 280, "hi": 360, "n": 10}],
                           pilot={"cores": 4, "backend": {"type": "virtual"}})
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        summary = io.read_summary(out / io.SUMMARY)
        assert summary["execution_mode"] == "II"
        assert int(summary["md_waves_per_cycle"]) == 3   # ceil(10 / 4)
        assert "utilization" in metrics(out)

    def test_refuses_real_backend(self, tmp_path):
        assert cli.main(["simulate", "--config", str(write_config(tmp_path / "c.json"))]) == 2

    def test_zero_cycles_metrics_header_only(self, tmp_path):
        out = tmp_path / "s"
        assert cli.main(["simulate", "--config", str(write_config(tmp_path / "c.json", cycles=0, **virtual())),
                         "--out", str(out)]) == 0
        assert (out / "metrics.csv").read_text() == "run,metric,value\n"


class TestAnalyze:
    def test_empty_run_is_no_data(self, tmp_path, capsys):
        out = tmp_path / "z"
        cli.main(["simulate", "--config", str(write_config(tmp_path / "c.json", cycles=0, **virtual())),
                  "--out", str(out)])
        assert cli.main(["analyze", "--out", str(out)]) == 2
        assert "no-data" in capsys.readouterr().err

    def test_self_baseline_and_outputs(self, tmp_path):
        out = tmp_path / "r"
        assert cli.main(["run", "--config", str(write_config(tmp_path / "c.json", cycles=8)), "--out", str(out)]) == 0
        assert cli.main(["analyze", "--out", str(out), "--baseline", str(out)]) == 0
        m = metrics(out)
        assert m["weak_efficiency"] == 100.0 and m["strong_efficiency"] == 100.0
        assert 0.0 <= m["acceptance_dim0"] <= 1.0
        rows = list(csv.DictReader(open(out / "free_energy.csv")))
        assert rows and min(float(r["F"]) for r in rows) == 0.0
        acc = list(csv.DictReader(open(out / "acceptance.csv")))
        assert {(r["lo"], r["hi"]) for r in acc} <= {("0", "1"), ("1", "2"), ("2", "3")}

    def test_identical_ensembles_accept_everything(self, tmp_path):
        out = tmp_path / "u"
        cfg = write_config(tmp_path / "c.json", cycles=6,
                           dimensions=[{"kind": "umbrella", "ladder": [-1, 0, 1], "force_constant": 0.0}])
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert cli.main(["analyze", "--out", str(out)]) == 0
        assert metrics(out)["acceptance_dim0"] == 1.0
        assert (out / "free_energy.csv").exists()

    def test_missing_directory(self, tmp_path):
        assert cli.main(["analyze", "--out", str(tmp_path / "nothing")]) == 2


class TestValidate:
    def test_quick_passes(self, capsys):
        assert cli.main(["validate", "--quick"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_broken_criterion_is_caught(self, monkeypatch):
        # flipping the sign of the exchange delta must make the self-check fail
        original = validation.run_all

        def broken(quick=False, **kw):
            return original(delta_fn=lambda *a, **k: -validation.acceptance_delta(*a, **k), quick=quick)
        monkeypatch.setattr(validation, "run_all", broken)
        assert cli.main(["validate", "--quick"]) == 1


class TestLogging:
    @pytest.mark.parametrize("name, level", [("debug", logging.DEBUG), ("error", logging.ERROR)])
    def test_level_from_environment(self, monkeypatch, name, level):
        monkeypatch.setenv("REPEX_LOG_LEVEL", name)
        root = logging.getLogger()
        monkeypatch.setattr(root, "handlers", [])
        monkeypatch.setattr(root, "level", root.level)
        cli.setup_logging()
        assert root.level == level

    def test_unknown_level_falls_back(self, monkeypatch):
        monkeypatch.setenv("REPEX_LOG_LEVEL", "chatty")
        root = logging.getLogger()
        monkeypatch.setattr(root, "handlers", [])
        monkeypatch.setattr(root, "level", root.level)
        cli.setup_logging()
        assert root.level == logging.WARNING


def test_seed_must_be_u64(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", str(write_config(tmp_path / "c.json")), "--seed", "-1"])
