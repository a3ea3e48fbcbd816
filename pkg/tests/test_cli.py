import json

import pytest

from coopsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

CONFIG = {"mode": "univ2x", "seeds": [0], "scenario": {"duration": 5.0, "n_agents": 4}}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


def test_gen_writes_scenario(tmp_path, config_file):
    out = tmp_path / "scn" / "s.json"
    assert main(["gen", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc


def test_run_sweep_report(tmp_path, config_file):
    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(config_file), "--out", str(run_dir)]) == EXIT_OK
    assert (run_dir / "run.json").exists()

    sweep_dir = tmp_path / "sweep"
    assert main(["sweep", "--axis", "latency", "--values", "0,500", "--config", str(config_file),
                 "--out", str(sweep_dir)]) == EXIT_OK
    names = sorted(p.name for p in sweep_dir.glob("*.json"))
    assert names == ["00_latency_0ms.json", "01_latency_0ms_no_flow.json",
                     "02_latency_500ms.json", "03_latency_500ms_no_flow.json"]
    for fmt, ext in (("csv", "csv"), ("markdown", "md"), ("json", "json")):
        assert main(["report", "--in", str(sweep_dir), "--format", fmt]) == EXIT_OK
        assert (sweep_dir / f"report.{ext}").exists()


def test_config_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad.write_text(json.dumps({"mode": "psychic"}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_sweep_values_exit_1(tmp_path, config_file):
    assert main(["sweep", "--axis", "bandwidth", "--values", "a,b", "--config", str(config_file),
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_thread_env_exit_1(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv("COOPSIM_THREADS", "-2")
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_runtime_errors_exit_2(tmp_path):
    assert main(["report", "--in", str(tmp_path / "nowhere"), "--format", "csv"]) == EXIT_RUNTIME
    assert main(["report", "--in", str(tmp_path), "--format", "csv"]) == EXIT_RUNTIME


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["fly"])
    assert info.value.code == 2
