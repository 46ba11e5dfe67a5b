from typing import List, Sequence, Tuple

import numpy as np

from engine.losses import cross_entropy_loss
from errors import ConfigurationError, DataError
from models import HeadLayout, HeadSpec, Mode
from name_matching import closest_name


def head_for_mode(layout: HeadLayout, mode) -> HeadSpec:
    try:
        mode = Mode(mode)
    except ValueError:
        raise ConfigurationError(
            f"unknown mode '{mode}'", field="mode", suggestion=closest_name(mode, [m.value for m in Mode])
        )
    matches = [head for head in layout.heads if mode in head.modes]
    if len(matches) != 1:
        raise ConfigurationError(
            f"mode {mode.value} is served by {len(matches)} heads, expected exactly one", field="mode"
        )
    return matches[0]


def validate_layout(layout: HeadLayout, num_network_classes: int) -> List[str]:
    """Disjoint class sets covering every unit; each mode served by one head"""
    problems = []
    names = layout.class_names
    duplicated = sorted({n for n in names if names.count(n) > 1})
    if duplicated:
        problems.append(f"class names shared by several heads: {duplicated}")
    if len(names) != num_network_classes:
        problems.append(f"heads cover {len(names)} units but the network emits {num_network_classes}")
    for mode in Mode:
        served = [h.name for h in layout.heads if mode in h.modes]
        if len(served) != 1:
            problems.append(f"mode {mode.value} served by {served or 'no head'}")
    return problems


def restricted_argmax(logits: np.ndarray, indices: Sequence[int]) -> int:
    """Argmax over `indices`; ties resolve to the lowest index"""
    ordered = np.sort(np.asarray(indices, dtype=np.int64))
    return int(ordered[int(np.argmax(np.asarray(logits)[ordered]))])


def masked_loss(logits: np.ndarray, true_index: int, mode, layout: HeadLayout,
                sample: str = "sample") -> Tuple[float, np.ndarray]:
    """Cross-entropy over the mode's head only; other heads get exactly zero gradient"""
    head = head_for_mode(layout, mode)
    indices = layout.indices(head.name)
    if true_index not in indices:
        raise DataError(
            f"{sample}: class index {true_index} is not in head '{head.name}' serving {Mode(mode).value}",
            field="label",
        )
    return cross_entropy_loss(logits, true_index, indices)


def predict(logits: np.ndarray, mode, layout: HeadLayout) -> Tuple[int, str]:
    head = head_for_mode(layout, mode)
    return restricted_argmax(logits, layout.indices(head.name)), head.name
