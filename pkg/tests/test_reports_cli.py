import asyncio
import json
import sys

import pandas as pd
import pytest

from config_parser import ConfigParser
from conftest import CONFIG_DIR, ROOT, run_config
from errors import ConfigurationError
from harness.artifact import save_artifact
from harness.evaluator import calibrate, evaluate, run_sweep
from harness.experiments import ExperimentRow
from harness.reports import (
    read_confusion,
    read_experiments,
    read_predictions,
    read_sweep,
    write_confusion,
    write_experiments,
    write_predictions,
    write_sweep,
)
from models import OutputVariant

sys.path.append(str(ROOT))

from main import main  # noqa: E402


# reports

def test_confusion_csv_reads_back(tmp_path, trained, dataset):
    _, artifact = trained
    report = asyncio.run(evaluate(artifact, dataset["test"]))

    paths = write_confusion(report, tmp_path)

    pd.testing.assert_frame_equal(read_confusion(tmp_path / "confusion.csv"), report.confusion)
    assert {p.name for p in paths} == {"confusion.csv", "confusion_pct.csv", "confusion.svg", "metrics.json"}
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["structural_violations"] == 0
    assert metrics["total"] == len(dataset["test"])


def test_svg_reports_are_byte_stable(tmp_path, trained, dataset):
    _, artifact = trained
    report = asyncio.run(evaluate(artifact, dataset["test"]))

    write_confusion(report, tmp_path / "a")
    write_confusion(report, tmp_path / "b")

    assert (tmp_path / "a" / "confusion.svg").read_bytes() == (tmp_path / "b" / "confusion.svg").read_bytes()


def test_sweep_csv_reads_back(tmp_path, trained, dataset):
    cfg, artifact = trained
    calibrated = asyncio.run(calibrate(artifact, dataset["train"], cfg.quantile_grid.points()))
    records = asyncio.run(run_sweep(calibrated, {"test": dataset["test"], "extra": dataset["extra"]}))

    csv_path, svg_path = write_sweep(records, tmp_path)
    back = read_sweep(csv_path)

    assert svg_path.exists()
    assert [(r.dataset, r.total, r.source) for r in back] == [(r.dataset, r.total, r.source) for r in records]
    for a, b in zip(back, records):
        assert a.q == pytest.approx(b.q)
        assert a.ignored == pytest.approx(b.ignored)
        assert (a.error is None) == (b.error is None)


def test_experiment_table_reads_back(tmp_path):
    rows = [ExperimentRow("E1", "separate_nets", "image", 0.5, 1000, 0.01, 1.5),
            ExperimentRow("E2", "separate_nets", "image+heatmap", 0.9, 1010, 0.01, 1.6)]

    frame = read_experiments(write_experiments(rows, tmp_path))

    assert list(frame["id"]) == ["E1", "E2"]
    assert list(frame["accuracy"]) == [0.5, 0.9]


def test_predictions_read_back(tmp_path):
    lines = [{"index": 0, "output": "AR", "score": 1.25}, {"index": 1, "output": "IGNORED", "score": -3.0}]
    assert read_predictions(write_predictions(lines, tmp_path / "p.jsonl")) == lines


# configuration

def test_run_config_paths_resolve_against_the_file(monkeypatch, tmp_path):
    monkeypatch.setenv("DOPPLER_OUTPUT_DIR", str(tmp_path))
    monkeypatch.delenv("DOPPLER_WORKERS", raising=False)

    cfg = ConfigParser().parse_run_config(str(CONFIG_DIR / "run_desk.json"))

    assert cfg.seed == 42
    assert cfg.heads == str(CONFIG_DIR / "heads_default.json")
    assert cfg.data_dir == str(tmp_path / "data")
    assert cfg.variant is OutputVariant.MULTIHEAD


def test_placeholder_default_and_overrides(monkeypatch):
    monkeypatch.delenv("DOPPLER_OUTPUT_DIR", raising=False)
    monkeypatch.setenv("DOPPLER_WORKERS", "3")

    cfg = ConfigParser().parse_run_config(str(CONFIG_DIR / "run_desk.json"), seed=5)

    assert cfg.seed == 5
    assert cfg.workers == 3
    assert cfg.artifact == str((CONFIG_DIR / "../outputs/model.dsca"))


def test_unset_placeholder_without_default_is_rejected(monkeypatch, tmp_path):
    monkeypatch.delenv("DOPPLER_NOT_SET", raising=False)
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 1, "data_dir": "${DOPPLER_NOT_SET}"}))

    with pytest.raises(ConfigurationError) as info:
        ConfigParser().parse_run_config(str(path))
    assert info.value.field == "DOPPLER_NOT_SET"


def test_invalid_value_names_the_field(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 1, "variant": "two_heads"}))

    with pytest.raises(ConfigurationError) as info:
        ConfigParser().parse_run_config(str(path))
    assert info.value.field == "variant"


def test_experiment_config_loads():
    cfg = ConfigParser().parse_experiment_config(str(CONFIG_DIR / "experiment_desk.json"))
    assert [e.id for e in cfg.experiments] == ["E1", "E2", "E3", "E4", "E5"]


# command line

def _write_run(tmp_path, dataset_dir, **updates):
    cfg = run_config(tmp_path, data_dir=str(dataset_dir), heads=str(CONFIG_DIR / "heads_default.json"), **updates)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.model_dump(mode="json")))
    return cfg, path


def test_cli_missing_config_exits_with_code_2(tmp_path, capsys):
    code = asyncio.run(main(["eval", str(tmp_path / "missing.json")]))

    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "config"


def test_cli_eval_writes_reports(tmp_path, trained, dataset_dir):
    _, artifact = trained
    cfg, path = _write_run(tmp_path, dataset_dir)
    save_artifact(artifact, cfg.artifact)

    assert asyncio.run(main(["eval", str(path)])) == 0
    assert (tmp_path / "reports" / "confusion.csv").exists()


def test_cli_predict_without_calibration_is_a_usage_error(tmp_path, trained, dataset_dir, capsys):
    _, artifact = trained
    cfg, path = _write_run(tmp_path, dataset_dir)
    save_artifact(artifact, cfg.artifact)

    code = asyncio.run(main(["predict", str(path), "--q", "0.05"]))

    assert code == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"


def test_cli_predict_prints_json_lines(tmp_path, trained, dataset_dir, capsys):
    _, artifact = trained
    cfg, path = _write_run(tmp_path, dataset_dir)
    save_artifact(artifact, cfg.artifact)

    assert asyncio.run(main(["predict", str(path)])) == 0

    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert len(lines) == 19
    assert all(line["decision"] == "accepted" for line in lines)
    assert read_predictions(tmp_path / "reports" / "predictions.jsonl") == lines


def _cli_reports(root, phantom_json):
    _, path = _write_run(root, root / "data", phantom=str(phantom_json))
    for command in ("gen", "train", "calibrate", "eval", "sweep"):
        assert asyncio.run(main([command, str(path)])) == 0
    names = ("confusion.csv", "confusion_pct.csv", "metrics.json", "sweep.csv")
    return {name: (root / "reports" / name).read_bytes() for name in names}


def test_cli_runs_with_the_same_seed_write_identical_reports(tmp_path, small_phantom):
    phantom_json = tmp_path / "phantom.json"
    phantom_json.write_text(json.dumps(small_phantom.model_dump(mode="json")))
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()

    first = _cli_reports(tmp_path / "a", phantom_json)
    second = _cli_reports(tmp_path / "b", phantom_json)

    assert first == second
