import numpy as np
import pytest

from errors import ConfigurationError, DataError, InputError, InternalError
from heads.layout import head_for_mode, masked_loss, predict, restricted_argmax, validate_layout
from heads.mapping import (
    bucket_baseline,
    corrupted_tables,
    map_output,
    network_target,
    output_heads,
    validate_table,
)
from heads.variants import configure_output, head_of_prediction
from models import BaselineBucket, Mode, OutputVariant

EPS = 1e-6


# layout

def test_default_layout_is_valid(heads):
    assert validate_layout(heads.layout, 10) == []
    assert head_for_mode(heads.layout, Mode.CW).name == "CWPW"
    assert head_for_mode(heads.layout, "TVD").name == "TVD"


def test_layout_problems_are_reported(heads):
    problems = validate_layout(heads.layout, 12)
    assert any("12" in p for p in problems)


def test_unknown_mode_suggests_the_closest(heads):
    with pytest.raises(ConfigurationError) as info:
        head_for_mode(heads.layout, "TDV")
    assert info.value.suggestion == "TVD"


def test_restricted_argmax_ignores_other_heads(heads):
    logits = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 9.0, 0.0, 0.0, 0.0])
    index, head = predict(logits, Mode.PW, heads.layout)
    assert (index, head) == (5, "CWPW")
    assert predict(logits, Mode.TVD, heads.layout) == (6, "TVD")


def test_restricted_argmax_ties_go_to_lowest_index():
    assert restricted_argmax(np.array([1.0, 3.0, 3.0, 3.0]), [3, 2, 1]) == 1


def test_masked_loss_zero_gradient_on_inactive_head(heads):
    logits = np.random.default_rng(0).standard_normal(10)
    _, grad = masked_loss(logits, 7, Mode.TVD, heads.layout)
    assert np.all(grad[:6] == 0.0)

    with pytest.raises(DataError):
        masked_loss(logits, 2, Mode.TVD, heads.layout)


# mapping

@pytest.mark.parametrize("baseline,bucket", [
    (0.0, BaselineBucket.NEGATIVE),
    (0.5 - EPS, BaselineBucket.NEGATIVE),
    (0.5, BaselineBucket.ZERO),
    (0.5 + EPS, BaselineBucket.POSITIVE),
    (1.0, BaselineBucket.POSITIVE),
])
def test_bucket_boundaries(baseline, bucket):
    assert bucket_baseline(baseline) is bucket


def test_bucket_with_zero_epsilon():
    assert bucket_baseline(0.5 + EPS, zero_epsilon=1e-3) is BaselineBucket.ZERO


@pytest.mark.parametrize("baseline", [-0.01, 1.01])
def test_bucket_rejects_out_of_range(baseline):
    with pytest.raises(InputError):
        bucket_baseline(baseline)


def test_default_table_is_valid(heads):
    assert validate_table(heads.table, heads.layout) == []
    assert len(heads.table.outputs) == 19


@pytest.mark.parametrize("name", [
    "duplicate_specific_rows",
    "missing_tvd_no_row",
    "unreachable_output",
    "no_not_merged",
    "unknown_network_class",
])
def test_corrupted_tables_are_rejected(heads, name):
    broken = corrupted_tables(heads.table)[name]
    assert validate_table(broken, heads.layout)


def test_unknown_class_violation_carries_a_suggestion(heads):
    broken = corrupted_tables(heads.table)["unknown_network_class"]
    assert any("ARAVO" in v for v in validate_table(broken, heads.layout))


@pytest.mark.parametrize("network_class,mode,bucket,output", [
    ("ARAVO", Mode.CW, BaselineBucket.POSITIVE, "AR"),
    ("ARAVO", Mode.CW, BaselineBucket.NEGATIVE, "AVO"),
    ("ARAVO", Mode.PW, BaselineBucket.ZERO, "LVOT"),
    ("MRMVT", Mode.CW, BaselineBucket.NEGATIVE, "MR"),
    ("MRMVT", Mode.CW, BaselineBucket.ZERO, "MVT"),
    ("PRPVO", Mode.PW, BaselineBucket.ZERO, "RVOT"),
    ("TR", Mode.PW, BaselineBucket.POSITIVE, "TVI"),
    ("NO_A", Mode.PW, BaselineBucket.POSITIVE, "NO"),
    ("NO_B", Mode.TVD, BaselineBucket.NEGATIVE, "NO"),
    ("TVD_2", Mode.TVD, BaselineBucket.ZERO, "TVD_LAT"),
])
def test_map_output(heads, network_class, mode, bucket, output):
    assert map_output(network_class, mode, bucket, heads.table) == output


def test_unmapped_combination_is_internal_error(heads):
    with pytest.raises(InternalError):
        map_output("TVD_1", Mode.CW, BaselineBucket.ZERO, heads.table.model_copy(update={"rows": []}))


def test_network_target_inverts_the_table(heads):
    index = network_target("MR_PW", Mode.PW, 0.2, heads.layout, heads.table)
    assert heads.layout.class_names[index] == "MRMVT"

    with pytest.raises(DataError):
        network_target("MR_PW", Mode.PW, 0.8, heads.layout, heads.table)


def test_pv_under_cw_is_never_a_training_target(heads):
    with pytest.raises(DataError):
        network_target("PV", Mode.CW, 0.3, heads.layout, heads.table)


def test_output_heads(heads):
    produced = output_heads(heads.table, heads.layout)
    assert produced["NO"] == {"CWPW", "TVD"}
    assert produced["TVD_RV"] == {"TVD"}
    assert produced["AR"] == {"CWPW"}


# output variants

def test_variant_class_counts(heads):
    multi = configure_output(OutputVariant.MULTIHEAD, heads)
    single = configure_output(OutputVariant.SINGLE_HEAD, heads)
    separate = configure_output(OutputVariant.SEPARATE_NETS, heads)

    assert multi.class_count == 10
    assert single.class_count == 9
    assert [n.num_classes for n in separate.networks] == [6, 4]
    assert single.networks[0].class_names.count("NO") == 1


def test_single_train_multihead_test_restricts_only_the_argmax(heads):
    output = configure_output(OutputVariant.SINGLE_TRAIN_MULTIHEAD_TEST, heads)
    network = output.networks[0]
    names = network.class_names

    assert network.loss_groups[Mode.TVD] == list(range(9))
    assert sorted(names[i] for i in network.argmax_groups[Mode.TVD]) == ["NO", "TVD_1", "TVD_2", "TVD_3"]
    assert "TVD_1" not in [names[i] for i in network.argmax_groups[Mode.CW]]


def test_single_head_maps_a_cross_head_prediction(heads):
    output = configure_output(OutputVariant.SINGLE_HEAD, heads)
    network = output.networks[0]
    tvd = network.class_names.index("TVD_3")

    out, hazard = network.decide_output(tvd, Mode.CW, 0.5)

    assert out == "TVD_RV"
    assert not hazard


def test_single_head_pv_under_cw_keeps_hazard(heads):
    network = configure_output(OutputVariant.SINGLE_HEAD, heads).networks[0]
    assert network.decide_output(network.class_names.index("PV"), Mode.CW, 0.2) == ("PV", True)


def test_separate_nets_route_by_mode(heads):
    output = configure_output(OutputVariant.SEPARATE_NETS, heads)
    position, network = output.network_for_mode(Mode.TVD)
    assert position == 1
    assert network.target("TVD_SEPT", Mode.TVD, 0.4) == 0


def test_head_of_merged_no_follows_the_sample(heads):
    output = configure_output(OutputVariant.SINGLE_TRAIN_MULTIHEAD_TEST, heads)
    network = output.networks[0]
    no = network.class_names.index("NO")
    assert head_of_prediction(output, network, no, Mode.TVD) == "TVD"
    assert head_of_prediction(output, network, no, Mode.CW) == "CWPW"


def test_unknown_variant_suggests(heads):
    with pytest.raises(ConfigurationError) as info:
        configure_output("multi_head", heads)
    assert info.value.suggestion == "multihead"
