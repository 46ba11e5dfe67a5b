"""
Post-processing from network classes to output classes.

A row matches a (network class, mode, baseline bucket) triple when its mode and
baseline patterns are equal to the triple's or ANY. Among matching rows the most
specific wins; a tie at the top is an ambiguity.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

from errors import DataError, InputError, InternalError
from models import ANY, BaselineBucket, HeadLayout, MappingRow, MappingTable, Mode
from heads.layout import head_for_mode
from name_matching import closest_name

logger = logging.getLogger(__name__)


def bucket_baseline(baseline: float, zero_epsilon: float = 0.0) -> BaselineBucket:
    """Negative [0, 0.5), Zero exactly 0.5 (or within epsilon), Positive (0.5, 1]"""
    if not 0.0 <= baseline <= 1.0:
        raise InputError(f"baseline {baseline} outside [0, 1]", field="baseline")
    if abs(baseline - 0.5) <= zero_epsilon:
        return BaselineBucket.ZERO
    return BaselineBucket.NEGATIVE if baseline < 0.5 else BaselineBucket.POSITIVE


def matching_rows(table: MappingTable, network_class: str, mode, bucket) -> List[Tuple[int, MappingRow]]:
    mode, bucket = Mode(mode), BaselineBucket(bucket)
    return [
        (i, row)
        for i, row in enumerate(table.rows)
        if row.network_class == network_class
        and row.mode in (ANY, mode)
        and row.baseline in (ANY, bucket)
    ]


def _best(candidates: List[Tuple[int, MappingRow]]) -> List[Tuple[int, MappingRow]]:
    if not candidates:
        return []
    top = max(row.specificity for _, row in candidates)
    return [(i, row) for i, row in candidates if row.specificity == top]


def resolve_row(table: MappingTable, network_class: str, mode, bucket) -> Optional[MappingRow]:
    """The unique winning row, or None when nothing (or more than one row) wins"""
    best = _best(matching_rows(table, network_class, mode, bucket))
    return best[0][1] if len(best) == 1 else None


def map_output(network_class: str, mode, bucket, table: MappingTable) -> str:
    return lookup(network_class, mode, bucket, table).output


def lookup(network_class: str, mode, bucket, table: MappingTable) -> MappingRow:
    row = resolve_row(table, network_class, mode, bucket)
    if row is None:
        raise InternalError(
            f"no unique mapping row for ({network_class}, {Mode(mode).value}, {BaselineBucket(bucket).value})"
        )
    if row.hazard:
        logger.debug("%s under %s maps to %s through a hazard row", network_class, Mode(mode).value, row.output)
    return row


def validate_table(table: MappingTable, layout: HeadLayout) -> List[str]:
    """Every violation found; an empty list means the table is total, unambiguous and merges NO"""
    violations: List[str] = []
    known = set(layout.class_names)
    universe = set(table.outputs)
    for i, row in enumerate(table.rows):
        if row.network_class not in known:
            hint = closest_name(row.network_class, known)
            violations.append(
                f"row {i} references unknown network class '{row.network_class}'"
                + (f" (did you mean '{hint}'?)" if hint else "")
            )
        if row.output not in universe:
            violations.append(f"row {i} produces '{row.output}' outside the output universe")
    if table.no_output not in universe:
        violations.append(f"NO output '{table.no_output}' missing from the output universe")

    produced: Dict[str, List[Tuple[Mode, bool]]] = {}
    for head in layout.heads:
        for network_class in head.classes:
            for mode in head.modes:
                for bucket in BaselineBucket:
                    best = _best(matching_rows(table, network_class, mode, bucket))
                    where = f"({network_class}, {mode.value}, {bucket.value})"
                    if not best:
                        violations.append(f"uncovered combination {where}")
                        continue
                    if len(best) > 1:
                        violations.append(f"ambiguous combination {where}: rows {[i for i, _ in best]}")
                        continue
                    row = best[0][1]
                    produced.setdefault(row.output, []).append((mode, row.hazard))
                    is_no_class = network_class in table.no_classes
                    if is_no_class != (row.output == table.no_output):
                        violations.append(f"NO merge violated at {where} -> {row.output}")

    for output in table.outputs:
        if output not in produced:
            violations.append(f"unreachable output class '{output}'")
    for output in table.pw_only_outputs:
        for mode, hazard in produced.get(output, []):
            if mode is not Mode.PW and not hazard:
                violations.append(f"'{output}' reachable under {mode.value} without a hazard flag")
                break
    for no_class in table.no_classes:
        if no_class not in known:
            violations.append(f"NO class '{no_class}' is not a network class")
    return violations


def network_target(label: str, mode, baseline: float, layout: HeadLayout, table: MappingTable,
                   zero_epsilon: float = 0.0, sample: str = "sample") -> int:
    """Network class index, inside the mode's head, that maps to `label`"""
    head = head_for_mode(layout, mode)
    start = layout.indices(head.name)[0]
    candidates = list(enumerate(head.classes, start=start))
    return target_among(label, mode, baseline, candidates, table, zero_epsilon, sample)


def target_among(label: str, mode, baseline: float, candidates: Sequence[Tuple[int, str]],
                 table: MappingTable, zero_epsilon: float = 0.0, sample: str = "sample") -> int:
    bucket = bucket_baseline(baseline, zero_epsilon)
    hits = []
    for index, network_class in candidates:
        row = resolve_row(table, network_class, mode, bucket)
        if row is not None and row.output == label and not row.hazard:
            hits.append(index)
    if len(hits) != 1:
        hint = closest_name(label, table.outputs) if label not in table.outputs else None
        raise DataError(
            f"{sample}: label '{label}' under {Mode(mode).value}/{bucket.value} matches "
            f"{len(hits)} network classes, expected one",
            field="label", suggestion=hint,
        )
    return hits[0]


def output_heads(table: MappingTable, layout: HeadLayout) -> Dict[str, set]:
    """Output class -> names of the heads able to produce it"""
    heads: Dict[str, set] = {}
    for head in layout.heads:
        for network_class in head.classes:
            for mode in head.modes:
                for bucket in BaselineBucket:
                    row = resolve_row(table, network_class, mode, bucket)
                    if row is not None:
                        heads.setdefault(row.output, set()).add(head.name)
    return heads


def corrupted_tables(table: MappingTable) -> Dict[str, MappingTable]:
    """Canonical broken variants of a valid table, each violating one rule"""
    rows = [row.model_copy() for row in table.rows]
    first_specific = next(row for row in rows if row.specificity == 2)
    tvd_no = [row for row in rows if row.network_class == table.no_classes[-1]]
    real_output = next(row.output for row in rows if row.network_class not in table.no_classes)
    return {
        "duplicate_specific_rows": table.model_copy(update={
            "rows": rows + [first_specific.model_copy()],
        }),
        "missing_tvd_no_row": table.model_copy(update={
            "rows": [row for row in rows if row not in tvd_no],
        }),
        "unreachable_output": table.model_copy(update={"outputs": table.outputs + ["ORPHAN"]}),
        "no_not_merged": table.model_copy(update={
            "rows": [row for row in rows if row not in tvd_no]
                    + [row.model_copy(update={"output": "NO_SECOND"}) for row in tvd_no],
            "outputs": table.outputs + ["NO_SECOND"],
        }),
        "unknown_network_class": table.model_copy(update={
            "rows": rows + [MappingRow(network_class="ARAV0", mode=Mode.CW, output=real_output)],
        }),
    }
