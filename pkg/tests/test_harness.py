import asyncio
import math

import numpy as np
import pytest

from conftest import run_config
from engine.optim import SGD
from errors import ConfigurationError, DataError, UsageError
from harness.artifact import dump_artifact
from harness.evaluator import calibrate, evaluate, run_sweep, structural_violations, sweep_sources
from harness.inference import chunked, score_dataset
from harness.predictor import predict_records
from harness.trainer import run_hash, train, train_step
from heads.layout import restricted_argmax
from heads.variants import configure_output
from models import Mode, OutputVariant, Phase, ScoreSource
from network.resnet import build_model, preset_spec


def test_training_is_deterministic_for_a_seed(tmp_path, heads, dataset):
    recordings = dataset["train"][:24]
    a = train(run_config(tmp_path, epochs=1), heads, recordings)
    b = train(run_config(tmp_path, epochs=1), heads, recordings)
    c = train(run_config(tmp_path, epochs=1, seed=8), heads, recordings)

    assert dump_artifact(a) == dump_artifact(b)
    assert dump_artifact(a) != dump_artifact(c)


def test_training_records_history_and_means(trained, dataset):
    cfg, artifact = trained

    history = artifact.metadata["history"]
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(h["val_accuracy"] is not None for h in history)
    assert artifact.pipeline.image_mean is not None
    assert artifact.pipeline.heatmap_mean is not None
    assert artifact.metadata["config_hash"] == run_hash(cfg)
    assert artifact.metadata["train_size"] == len(dataset["train"])


def test_run_hash_ignores_paths(tmp_path):
    assert run_hash(run_config(tmp_path / "a")) == run_hash(run_config(tmp_path / "b"))
    assert run_hash(run_config(tmp_path, epochs=3)) != run_hash(run_config(tmp_path))


def test_missing_seed_is_rejected(tmp_path, heads, dataset):
    with pytest.raises(ConfigurationError):
        train(run_config(tmp_path, seed=None), heads, dataset["train"][:4])


def test_unknown_training_label_is_rejected(tmp_path, heads, dataset):
    bad = dataset["train"][0].model_copy(update={"label": "AVOO"})
    with pytest.raises(DataError) as info:
        train(run_config(tmp_path), heads, [bad])
    assert info.value.suggestion == "AVO"


def test_inactive_head_gets_no_update(heads, tiny_overrides):
    network = configure_output(OutputVariant.MULTIHEAD, heads).networks[0]
    model = build_model(preset_spec("desk", **tiny_overrides), 0)
    names = [name for name, _ in model.parameters()]
    before = {name: value.copy() for name, value in model.parameters()}
    x = np.random.default_rng(0).standard_normal((4, 2, 20, 20)).astype(np.float32)

    _, _, grads = train_step(model, network, x, np.array([0, 1, 2, 5]), [Mode.CW, Mode.PW, Mode.CW, Mode.PW],
                             SGD(lr=0.1, momentum=0.9, weight_decay=0.0))

    params = dict(model.parameters())
    assert np.all(grads[names.index("fc.weight")][6:] == 0.0)
    assert np.all(grads[names.index("fc.bias")][6:] == 0.0)
    np.testing.assert_array_equal(params["fc.weight"][6:], before["fc.weight"][6:])
    np.testing.assert_array_equal(params["fc.bias"][6:], before["fc.bias"][6:])
    assert not np.array_equal(params["fc.weight"][:6], before["fc.weight"][:6])


def test_separate_nets_train_one_network_per_head(tmp_path, heads, dataset):
    cfg = run_config(tmp_path, epochs=1, variant=OutputVariant.SEPARATE_NETS)
    artifact = train(cfg, heads, dataset["train"][:30])

    assert [m.spec.num_network_classes for m in artifact.models] == [6, 4]
    assert {h["network"] for h in artifact.metadata["history"]} == {"CWPW", "TVD"}


def test_chunking_covers_every_item():
    assert [list(c) for c in chunked(list(range(7)), 3)] == [[0, 1, 2], [3, 4, 5], [6]]


def test_scores_do_not_depend_on_worker_count(trained, dataset):
    _, artifact = trained
    test = dataset["test"]

    one = asyncio.run(score_dataset(artifact, test, ScoreSource.MC_MEAN_SOFTMAX, seed=1, chunk_size=4, workers=1))
    many = asyncio.run(score_dataset(artifact, test, ScoreSource.MC_MEAN_SOFTMAX, seed=1, chunk_size=4, workers=3))

    assert [r.score for r in one] == [r.score for r in many]
    assert [r.output for r in one] == [r.output for r in many]


def test_evaluate_has_no_cross_head_predictions(trained, dataset):
    _, artifact = trained

    report = asyncio.run(evaluate(artifact, dataset["test"], chunk_size=5, workers=2))

    assert report.total == len(dataset["test"])
    assert int(report.confusion.to_numpy().sum()) == report.total
    assert list(report.confusion.index) == artifact.heads.table.outputs
    assert ("TVD_SEPT", "AR") in report.structural
    assert structural_violations(report) == 0
    assert 0.0 <= report.accuracy <= 1.0


def test_evaluate_rejects_special_labels(trained, dataset):
    _, artifact = trained
    with pytest.raises(DataError):
        asyncio.run(evaluate(artifact, dataset["unknown"]))


def test_calibration_then_prediction(trained, dataset):
    cfg, artifact = trained
    grid = cfg.quantile_grid.points()

    calibrated = asyncio.run(calibrate(artifact, dataset["train"], grid))
    lines = asyncio.run(predict_records(calibrated, dataset["test"], q=0.0))
    strict = asyncio.run(predict_records(calibrated, dataset["train"], q=0.1))

    assert calibrated.quantiles.grid == grid
    assert calibrated.metadata["calibration"]["size"] == len(dataset["train"])
    assert all(line["decision"] == "accepted" for line in lines)
    assert {line["head"] for line in lines} <= {"CWPW", "TVD"}
    expected = sum(math.floor(0.1 * len(v) + 1e-9) for v in calibrated.quantiles.scores.values())
    assert sum(line["decision"] == "ignored" for line in strict) == expected
    for line in strict:
        if line["decision"] == "ignored":
            assert line["output"] == "IGNORED" and line["mapped_output"] != "IGNORED"


def test_prediction_above_zero_needs_a_table(trained, dataset):
    _, artifact = trained
    with pytest.raises(UsageError):
        asyncio.run(predict_records(artifact, dataset["test"], q=0.05))


def test_prediction_off_the_grid_is_rejected(trained, dataset):
    cfg, artifact = trained
    calibrated = asyncio.run(calibrate(artifact, dataset["train"], cfg.quantile_grid.points()))
    with pytest.raises(ConfigurationError):
        asyncio.run(predict_records(calibrated, dataset["test"], q=0.07))


def test_sweep_on_the_training_set_is_monotone(trained, dataset):
    cfg, artifact = trained
    calibrated = asyncio.run(calibrate(artifact, dataset["train"], cfg.quantile_grid.points()))

    rows = asyncio.run(run_sweep(calibrated, {"train": dataset["train"], "unknown": dataset["unknown"]}))

    train_rows = [r for r in rows if r.dataset == "train"]
    assert train_rows[0].ignored == 0.0
    assert [r.ignored for r in train_rows] == sorted(r.ignored for r in train_rows)
    assert all(r.error is None for r in rows if r.dataset == "unknown")


def test_sweep_sources_include_mc_variance(trained, dataset):
    cfg, artifact = trained

    results = asyncio.run(sweep_sources(artifact, dataset["train"], {"test": dataset["test"]},
                                        [ScoreSource.SOFTMAX, ScoreSource.MC_VAR_SOFTMAX], [0.0, 0.1],
                                        cfg.mc, seed=2))

    assert set(results) == {"softmax", "mc_var_softmax"}
    for records in results.values():
        assert {r.dataset for r in records} == {"train", "test"}


def test_eval_phase_scores_are_repeatable(trained, dataset):
    _, artifact = trained
    a = asyncio.run(score_dataset(artifact, dataset["val"]))
    b = asyncio.run(score_dataset(artifact, dataset["val"]))
    assert [r.score for r in a] == [r.score for r in b]


def test_tiny_random_set_is_memorized(heads):
    network = configure_output(OutputVariant.MULTIHEAD, heads).networks[0]
    model = build_model(preset_spec("desk", input_size=12), 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 2, 12, 12)).astype(np.float32)
    modes = [Mode(str(m)) for m in rng.choice([m.value for m in Mode], size=32)]
    targets = np.array([rng.choice(network.loss_groups[mode]) for mode in modes])
    optimizer = SGD(lr=0.05, momentum=0.9, weight_decay=0.0)

    for _ in range(200):
        train_step(model, network, x, targets, modes, optimizer)

    logits = model.forward(x, Phase.TRAIN)
    predicted = [restricted_argmax(row, network.loss_groups[mode]) for row, mode in zip(logits, modes)]
    assert np.mean(np.array(predicted) == targets) == 1.0
