import math

import numpy as np
import pytest

from confidence.mc_dropout import head_moments, mc_dropout_infer
from confidence.quantiles import ScoreRecord, decide, fit_quantiles, score_of
from confidence.sweep import sweep
from engine.arrays import CHECK_DTYPE
from engine.layers import Dense
from errors import ConfigurationError
from heads.variants import configure_output
from models import Decision, Mode, OutputVariant, QuantileGrid, ScoreSource
from network.resnet import build_model

GRID = QuantileGrid().points()


def record(score, predicted_class="ARAVO", output="AVO", label="AVO", network="main"):
    return ScoreRecord(network=network, predicted=0, predicted_class=predicted_class, logits=np.zeros(1),
                       score=float(score), output=output, hazard=False, label=label)


def test_grid_has_21_points():
    assert len(GRID) == 21
    assert GRID[0] == 0.0 and GRID[1] == 0.005 and GRID[-1] == 0.1


def test_cutoff_picks_the_floor_quantile():
    table = fit_quantiles([record(v) for v in range(200, 0, -1)], GRID)

    assert table.cutoff("main/ARAVO", 0.05) == 11
    assert table.cutoff("main/ARAVO", 0.0) == -math.inf


def test_score_equal_to_cutoff_is_accepted():
    table = fit_quantiles([record(v) for v in range(1, 201)], GRID)
    assert decide(11.0, "main/ARAVO", 0.05, table) is Decision.ACCEPTED
    assert decide(10.999, "main/ARAVO", 0.05, table) is Decision.IGNORED


def test_q_zero_accepts_everything():
    table = fit_quantiles([record(v) for v in range(1, 201)], GRID)
    assert decide(-1e9, "main/ARAVO", 0.0, table) is Decision.ACCEPTED


def test_class_without_records_always_accepts():
    table = fit_quantiles([record(1.0)], GRID, keys=["main/ARAVO", "main/PV"])
    assert table.scores["main/PV"] == []
    assert decide(-5.0, "main/PV", 0.1, table) is Decision.ACCEPTED


def test_off_grid_quantile_is_rejected():
    table = fit_quantiles([record(1.0)], GRID)
    with pytest.raises(ConfigurationError):
        decide(0.0, "main/ARAVO", 0.0123, table)


def test_variance_source_ignores_high_scores():
    table = fit_quantiles([record(v / 100) for v in range(1, 101)], GRID, ScoreSource.MC_VAR_SOFTMAX)

    cutoff = table.cutoff("main/ARAVO", 0.05)

    assert cutoff == pytest.approx(0.95)
    assert decide(0.99, "main/ARAVO", 0.05, table) is Decision.IGNORED
    assert decide(0.10, "main/ARAVO", 0.05, table) is Decision.ACCEPTED


@pytest.mark.parametrize("seed", range(20))
def test_cutoffs_monotone_and_ignored_sets_nested(seed):
    rng = np.random.default_rng(seed)
    classes = ["ARAVO", "TR", "PV"]
    records = [record(rng.normal(), classes[int(rng.integers(3))],
                      output="AVO" if rng.random() < 0.8 else "TR") for _ in range(300)]
    table = fit_quantiles(records, GRID)

    for cls in classes:
        cutoffs = table.cutoffs(f"main/{cls}")
        assert all(a <= b for a, b in zip(cutoffs, cutoffs[1:]))

    rows = sweep({"train": records}, table)
    ignored = [r.ignored for r in rows]
    errors = [r.error for r in rows]
    assert all(a <= b for a, b in zip(ignored, ignored[1:]))
    assert all(a >= b for a, b in zip(errors, errors[1:]))
    for cls in classes:
        key = f"main/{cls}"
        scores = [r.score for r in records if r.key == key]
        for q in GRID:
            ignored = sum(decide(s, key, q, table) is Decision.IGNORED for s in scores)
            assert abs(ignored / len(scores) - q) <= 1 / len(scores)


def test_sweep_reports_no_error_for_unlabeled_sets():
    records = [record(v, label="UNKNOWN") for v in range(50)]
    table = fit_quantiles([record(v) for v in range(50)], GRID)

    rows = sweep({"unknown": records}, table)

    assert all(r.error is None for r in rows)
    assert rows[0].ignored == 0.0


def test_sweep_error_and_ignored_share_the_denominator():
    train = [record(v) for v in range(1, 101)]
    table = fit_quantiles(train, GRID)
    test = [record(1, output="TR"), record(50, output="TR"), record(60), record(70)]

    q10 = next(r for r in sweep({"test": test}, table) if r.q == 0.1)

    assert q10.ignored == 0.25
    assert q10.error == 0.25
    assert q10.accepted_accuracy == pytest.approx(2 / 3)


def test_softmax_score_uses_the_argmax_group(heads):
    network = configure_output(OutputVariant.MULTIHEAD, heads).networks[0]
    logits = np.zeros(10)
    logits[6] = 100.0
    logits[0] = 1.0

    score = score_of(ScoreSource.SOFTMAX, network, logits, 0, Mode.CW)

    assert score == pytest.approx(math.e / (math.e + 5))


def test_mc_source_needs_moments(heads):
    network = configure_output(OutputVariant.MULTIHEAD, heads).networks[0]
    with pytest.raises(ConfigurationError):
        score_of(ScoreSource.MC_MEAN_SOFTMAX, network, np.zeros(10), 0, Mode.CW)


# MC-dropout

def _dense(seed=0):
    dense = Dense("fc", 16, 5, dtype=CHECK_DTYPE)
    dense.reset_parameters(np.random.default_rng(seed))
    return dense


def test_rate_zero_gives_zero_variance():
    features = np.random.default_rng(0).standard_normal((3, 16))
    moments = head_moments(features, _dense(), rate=0.0, runs=10, seed=1)

    np.testing.assert_allclose(moments.var_presoftmax, 0.0, atol=1e-20)
    np.testing.assert_allclose(moments.mean_presoftmax, _dense().forward(features))


def test_mc_is_deterministic_for_a_seed():
    features = np.random.default_rng(0).standard_normal((3, 16))
    a = head_moments(features, _dense(), rate=0.5, runs=20, seed=3)
    b = head_moments(features, _dense(), rate=0.5, runs=20, seed=3)
    c = head_moments(features, _dense(), rate=0.5, runs=20, seed=4)

    np.testing.assert_array_equal(a.mean_softmax, b.mean_softmax)
    assert not np.array_equal(a.mean_softmax, c.mean_softmax)


def test_single_unit_variance_matches_bernoulli_scaling():
    """One feature, weight 1: the output is x/(1-p) with probability 1-p, else 0"""
    dense = Dense("fc", 1, 1, bias=False, dtype=CHECK_DTYPE)
    dense.params["weight"] = np.ones((1, 1))
    p, runs = 0.3, 4000
    variance = p / (1 - p)
    fourth_moment = (1 - p) * variance ** 4 + p
    mean_se = math.sqrt(variance / runs)
    var_se = math.sqrt((fourth_moment - variance ** 2) / runs)

    moments = head_moments(np.array([[1.0]]), dense, rate=p, runs=runs, seed=0)

    assert moments.mean_presoftmax[0, 0] == pytest.approx(1.0, abs=3 * mean_se)
    assert moments.var_presoftmax[0, 0] == pytest.approx(variance, abs=3 * var_se)


def test_grouped_softmax_is_zero_outside_the_group():
    features = np.random.default_rng(0).standard_normal((2, 16))
    moments = head_moments(features, _dense(), 0.5, 10, 0, groups=[[0, 1], [2, 3, 4]])

    assert np.all(moments.mean_softmax[0, 2:] == 0.0)
    np.testing.assert_allclose(moments.mean_softmax.sum(axis=1), 1.0)


def test_mc_dropout_runs_backbone_once(tiny_spec):
    model = build_model(tiny_spec, 0)
    x = np.random.default_rng(0).standard_normal((2, 2, 20, 20)).astype(np.float32)

    moments = mc_dropout_infer(model, x, rate=0.5, runs=8, seed=0)

    assert moments.mean_presoftmax.shape == (2, 10)
    assert moments.runs == 8
    assert np.all(moments.var_presoftmax >= 0.0)
