import json
import shutil

import pytest

from cocrash import io
from cocrash.cli import main
from cocrash.errors import ConfigurationError
from cocrash.pipeline import EXIT_CODES, OUTPUT_ENV, RunConfig, run_pipeline
from conftest import FIXTURES

STAGES = ("ingest", "detect", "cojump", "rank", "null", "liquidity", "report")


def artifact_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small simulated panel plus one full analyze run."""
    root = tmp_path_factory.mktemp("small")
    shutil.copy(FIXTURES / "small_plan.cfg", root / "small_plan.cfg")
    shutil.copy(FIXTURES / "small_run.cfg", root / "small_run.cfg")
    assert main(["simulate", "--plan", str(root / "small_plan.cfg"), "--output", str(root / "small")]) == 0
    assert main(["analyze", "--config", str(root / "small_run.cfg")]) == 0
    return root


def test_simulate_outputs(workspace):
    names = {p.name for p in (workspace / "small").iterdir() if p.is_file()}
    assert names == {io.PANEL, io.GROUND_TRUTH}
    events, regimes = io.read_ground_truth(workspace / "small" / io.GROUND_TRUTH)
    assert events and set(regimes.values()) == {"fragile", "systemic"}


def test_analyze_writes_all_artifacts(workspace):
    out = workspace / "small" / "analysis"
    names = {p.name for p in out.iterdir()}
    assert set(io.FIGURE_ARTIFACTS) <= names
    assert {"manifest.json", io.REPORT, io.JUMPS, io.ASSETS} <= names
    assert not (out / ".staging").exists() and not (out / "quarantine").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    for name in io.FIGURE_ARTIFACTS:
        meta = io.read_meta(out / name)
        assert meta["config_hash"] == manifest["config_hash"]
        assert meta["seed"] == "1"
        assert name in manifest["artifacts"]
    report_meta, rows = io.read_csv(out / io.REPORT)
    assert report_meta["transition_size"] == "5"
    assert [int(r["m"]) for r in rows] == list(range(1, len(rows) + 1))


def test_rerun_and_threads_are_identical(workspace, tmp_path):
    first = artifact_bytes(workspace / "small" / "analysis")
    config = RunConfig.from_file(workspace / "small_run.cfg")
    assert run_pipeline(config.with_overrides(output=tmp_path / "a")).exit_code == 0
    assert run_pipeline(config.with_overrides(output=tmp_path / "b", threads=4)).exit_code == 0
    assert artifact_bytes(tmp_path / "a") == first
    assert artifact_bytes(tmp_path / "b") == first


def test_stages_match_analyze(workspace, tmp_path):
    out = tmp_path / "staged"
    for name in STAGES:
        code = main([name, "--config", str(workspace / "small_run.cfg"), "--output", str(out)])
        assert code == 0, name
    full = artifact_bytes(workspace / "small" / "analysis")
    staged = artifact_bytes(out)
    for name in io.FIGURE_ARTIFACTS + (io.REPORT, io.JUMPS):
        assert staged[name] == full[name], name


def test_missing_input_is_ingest_failure(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[input]\npaths = nowhere.csv\n[run]\noutput = out\n")
    assert main(["analyze", "--config", str(cfg)]) == EXIT_CODES["ingest"] == 10
    out = tmp_path / "out"
    assert [p.name for p in out.iterdir()] == ["quarantine"]
    assert "stage=ingest" in (out / "quarantine" / "failure.txt").read_text()


def test_bad_configuration_exit_code(workspace, capsys):
    assert main(["analyze", "--config", str(workspace / "small_run.cfg"), "--alpha", "2"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["analyze", "--config", str(workspace / "absent.cfg")]) == 2


def test_report_without_analysis_fails(workspace, tmp_path):
    code = main(["report", "--config", str(workspace / "small_run.cfg"), "--output", str(tmp_path / "r")])
    assert code == EXIT_CODES["report"]


def test_output_precedence(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["cojump", "--config", str(workspace / "small_run.cfg")]) == 0
    assert (tmp_path / "env" / io.COCRASH_EVENTS).is_file()
    assert main(["cojump", "--config", str(workspace / "small_run.cfg"), "--output", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / io.COCRASH_EVENTS).is_file()


def test_config_hash_tracks_settings(workspace):
    config = RunConfig.from_file(workspace / "small_run.cfg")
    assert config.config_hash == config.with_overrides(threads=8, output="elsewhere").config_hash
    assert config.config_hash != config.with_overrides(seed=2).config_hash
    assert config.config_hash != config.with_overrides(direction="down").config_hash


def test_direction_filter_changes_outputs(workspace, tmp_path):
    code = main(["cojump", "--config", str(workspace / "small_run.cfg"), "--direction", "down",
                 "--output", str(tmp_path)])
    assert code == 0
    events = io.read_cocrash(tmp_path / io.COCRASH_EVENTS)
    assert events and all(set(e.direction_map().values()) == {-1} for e in events)


def test_unreadable_config():
    with pytest.raises(ConfigurationError):
        RunConfig.from_file("/nonexistent/run.cfg")
