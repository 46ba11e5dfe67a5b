import numpy as np
import pytest

from engine.tape import Tape
from harness.oracle import LAYER_CASES, check_layer, check_model, run_oracle, summarize_by_case
from models import Phase
from network.resnet import build_model

SEEDS = range(20)


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
def test_layer_gradients_match_central_differences(case):
    failures = [r for r in (check_layer(case, seed) for seed in SEEDS) if not r.passed]
    assert not failures, [(r.seed, r.max_rel_error) for r in failures]


def test_dropout_case_reuses_its_mask():
    fragment, x, phase = LAYER_CASES["dropout"](np.random.default_rng(0))

    np.testing.assert_array_equal(fragment.forward(x, phase), fragment.forward(x, phase))
    assert check_layer("dropout", 0).checked > 0


def test_tiny_model_gradients_match(tiny_overrides):
    result = check_model(3, overrides=tiny_overrides, max_checks=6)
    assert result.passed, result.max_rel_error
    assert result.checked > 0


@pytest.mark.slow
def test_desk_model_gradients_match():
    result = check_model(0, overrides={"input_size": 24})
    assert result.passed, result.max_rel_error


def test_kink_signature_changes_when_a_relu_flips(tiny_spec):
    model = build_model(tiny_spec, 0).astype(np.float64)
    x = np.random.default_rng(0).standard_normal((2, 2, 20, 20))

    first, second, flipped = Tape(), Tape(), Tape()
    model.forward(x, Phase.TRAIN, first)
    model.forward(x, Phase.TRAIN, second)
    model.forward(-x, Phase.TRAIN, flipped)

    assert first.kink_signature() == second.kink_signature()
    assert first.kink_signature() != flipped.kink_signature()


def test_run_oracle_summary(tiny_overrides):
    results = run_oracle(seeds=2, include_model=True, model_overrides=tiny_overrides)

    rows = summarize_by_case(results)

    assert {row[0] for row in rows} == set(LAYER_CASES) | {"model:desk"}
    assert all(ok for *_, ok in rows)
