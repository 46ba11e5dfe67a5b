import numpy as np
import pytest

from errors import ConfigurationError
from models import Phase
from network.resnet import build_model, param_report, preset_spec, stage_structure


def test_desk_parameter_count():
    model = build_model(preset_spec("desk"), 0)
    assert param_report(model).parameters == 175_114


def test_paper18_parameter_count_and_stages():
    spec = preset_spec("paper18")
    report = param_report(build_model(spec, 0))

    assert report.parameters == 11_178_506
    assert stage_structure(spec) == [2, 2, 2, 2]
    assert report.bytes == 4 * (report.parameters + report.buffers)


def test_single_channel_input_changes_only_the_stem():
    two = param_report(build_model(preset_spec("desk"), 0)).parameters
    one = param_report(build_model(preset_spec("desk", in_channels=1), 0)).parameters
    assert two - one == 16 * 3 * 3


def test_same_seed_same_weights(tiny_spec):
    a = dict(build_model(tiny_spec, 5).named_arrays())
    b = dict(build_model(tiny_spec, 5).named_arrays())
    c = dict(build_model(tiny_spec, 6).named_arrays())

    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["fc.weight"], c["fc.weight"])


def test_forward_shape_and_dtype(tiny_spec):
    model = build_model(tiny_spec, 0)
    x = np.random.default_rng(0).standard_normal((3, 2, 20, 20)).astype(np.float32)

    logits = model.forward(x, Phase.EVAL)

    assert logits.shape == (3, 10)
    assert logits.dtype == np.float32


def test_forward_rejects_wrong_input_size(tiny_spec):
    model = build_model(tiny_spec, 0)
    with pytest.raises(ConfigurationError):
        model.forward(np.zeros((1, 2, 24, 24), dtype=np.float32))


def test_unknown_preset_suggests_a_name():
    with pytest.raises(ConfigurationError) as info:
        preset_spec("paper81")
    assert info.value.suggestion == "paper18"


def test_input_that_vanishes_is_rejected():
    with pytest.raises(ConfigurationError):
        build_model(preset_spec("paper18", input_size=2), 0)


def test_load_arrays_round_trips_state(tiny_spec):
    source = build_model(tiny_spec, 1)
    target = build_model(tiny_spec, 2)

    target.load_arrays(dict(source.named_arrays()))

    x = np.random.default_rng(1).standard_normal((2, 2, 20, 20)).astype(np.float32)
    np.testing.assert_array_equal(source.forward(x), target.forward(x))
