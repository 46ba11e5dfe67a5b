"""
Output-layer variants compared in the experiment matrix.

A NetworkOutput describes one trained network: its unit names, which units the
loss sees for each mode, which units the argmax reads for each mode, and the
mapping table written against its unit names. Single-head variants merge the
NO classes into one unit.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError
from heads.layout import head_for_mode, restricted_argmax
from heads.mapping import bucket_baseline, lookup, resolve_row, target_among
from models import (
    ANY,
    BaselineBucket,
    HeadLayout,
    HeadsConfig,
    MappingRow,
    MappingTable,
    Mode,
    OutputVariant,
)
from name_matching import closest_name


@dataclass
class NetworkOutput:
    name: str
    class_names: List[str]
    modes: List[Mode]
    loss_groups: Dict[Mode, List[int]]
    argmax_groups: Dict[Mode, List[int]]
    table: MappingTable
    layout: HeadLayout
    zero_epsilon: float = 0.0

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def target(self, label: str, mode, baseline: float, sample: str = "sample") -> int:
        candidates = [(i, self.class_names[i]) for i in self.loss_groups[Mode(mode)]]
        return target_among(label, mode, baseline, candidates, self.table, self.zero_epsilon, sample)

    def predict(self, logits: np.ndarray, mode) -> int:
        return restricted_argmax(logits, self.argmax_groups[Mode(mode)])

    def decide_output(self, index: int, mode, baseline: float) -> Tuple[str, bool]:
        """(output class, hazard flag) for a predicted unit"""
        bucket = bucket_baseline(baseline, self.zero_epsilon)
        row = lookup(self.class_names[index], mode, bucket, self.table)
        return row.output, row.hazard


@dataclass
class OutputConfig:
    variant: OutputVariant
    networks: List[NetworkOutput]
    layout: HeadLayout
    table: MappingTable
    merged_no: bool = False
    extra: Dict[str, object] = field(default_factory=dict)

    def network_for_mode(self, mode) -> Tuple[int, NetworkOutput]:
        mode = Mode(mode)
        for position, network in enumerate(self.networks):
            if mode in network.modes:
                return position, network
        raise ConfigurationError(f"no network serves mode {mode.value}", field="mode")

    @property
    def class_count(self) -> int:
        return sum(n.num_classes for n in self.networks)


def _merged_names(layout: HeadLayout, table: MappingTable) -> List[str]:
    names = []
    for name in layout.class_names:
        if name in table.no_classes:
            if table.no_output not in names:
                names.append(table.no_output)
        else:
            names.append(name)
    return names


def merged_table(table: MappingTable, layout: HeadLayout) -> MappingTable:
    """Table for one merged NO unit that also answers classes asked about outside their home mode.

    Every non-NO class gets an (ANY, ANY) fallback row pointing at the output of its
    least specific existing row.
    """
    rows = [row for row in table.rows if row.network_class not in table.no_classes]
    rows.append(MappingRow(network_class=table.no_output, output=table.no_output))
    for name in layout.class_names:
        if name in table.no_classes:
            continue
        own = [row for row in table.rows if row.network_class == name]
        if any(row.mode == ANY and row.baseline == ANY for row in own):
            continue
        fallback = min(own, key=lambda row: (row.specificity, row.hazard))
        rows.append(MappingRow(
            network_class=name,
            output=fallback.output,
            hazard=fallback.output in table.pw_only_outputs,
        ))
    return table.model_copy(update={"rows": rows, "no_classes": [table.no_output]})


def _head_groups(names: List[str], layout: HeadLayout, table: MappingTable) -> Dict[Mode, List[int]]:
    groups = {}
    for mode in Mode:
        head = head_for_mode(layout, mode)
        wanted = [table.no_output if c in table.no_classes else c for c in head.classes]
        groups[mode] = sorted(names.index(c) for c in wanted)
    return groups


def configure_output(variant, heads: HeadsConfig) -> OutputConfig:
    try:
        variant = OutputVariant(variant)
    except ValueError:
        raise ConfigurationError(
            f"unknown output variant '{variant}'", field="variant",
            suggestion=closest_name(variant, [v.value for v in OutputVariant]),
        )
    layout, table, eps = heads.layout, heads.table, heads.zero_epsilon

    if variant is OutputVariant.MULTIHEAD:
        names = layout.class_names
        groups = {mode: layout.indices(head_for_mode(layout, mode).name) for mode in Mode}
        network = NetworkOutput("main", names, list(Mode), groups, groups, table, layout, eps)
        return OutputConfig(variant, [network], layout, table)

    if variant is OutputVariant.SEPARATE_NETS:
        networks = []
        for head in layout.heads:
            rows = [row for row in table.rows if row.network_class in head.classes]
            produced = {
                row.output for row in rows
                for mode in head.modes for bucket in BaselineBucket
                if resolve_row(table, row.network_class, mode, bucket) is row
            }
            sub_table = table.model_copy(update={
                "rows": rows,
                "outputs": [o for o in table.outputs if o in produced],
                "no_classes": [c for c in table.no_classes if c in head.classes],
            })
            groups = {mode: list(range(len(head.classes))) for mode in head.modes}
            sub_layout = HeadLayout(heads=[head])
            networks.append(NetworkOutput(head.name, list(head.classes), list(head.modes),
                                          groups, groups, sub_table, sub_layout, eps))
        return OutputConfig(variant, networks, layout, table)

    names = _merged_names(layout, table)
    single = merged_table(table, layout)
    everything = {mode: list(range(len(names))) for mode in Mode}
    if variant is OutputVariant.SINGLE_HEAD:
        argmax = everything
    else:
        argmax = _head_groups(names, layout, table)
    network = NetworkOutput("main", names, list(Mode), everything, argmax, single, layout, eps)
    return OutputConfig(variant, [network], layout, table, merged_no=True)


def head_of_prediction(output: OutputConfig, network: NetworkOutput, index: int, mode) -> Optional[str]:
    """Head owning a predicted unit; a merged NO unit belongs to the sample's head"""
    name = network.class_names[index]
    for head in output.layout.heads:
        if name in head.classes:
            return head.name
    return head_for_mode(output.layout, mode).name
