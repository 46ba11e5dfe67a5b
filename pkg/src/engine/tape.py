import hashlib
from dataclasses import dataclass, field
from typing import Any, List

import numpy as np

from errors import UsageError


@dataclass
class TapeRecord:
    node: Any
    cache: Any


@dataclass
class Tape:
    """Forward records, consumed strictly last-in first-out by backward"""

    records: List[TapeRecord] = field(default_factory=list)

    def push(self, node, cache) -> None:
        self.records.append(TapeRecord(node, cache))

    def pop(self, node) -> Any:
        if not self.records:
            raise UsageError(f"backward on '{node.name}' before any forward was recorded")
        record = self.records[-1]
        if record.node is not node:
            raise UsageError(
                f"backward on '{node.name}' out of order: next recorded node is '{record.node.name}'"
            )
        self.records.pop()
        return record.cache

    def __len__(self) -> int:
        return len(self.records)

    def kink_signature(self) -> str:
        """Digest of every ReLU mask and max-pool winner recorded so far"""
        digest = hashlib.sha1()
        for record in self.records:
            state = record.node.kink_state(record.cache)
            if state is not None:
                digest.update(np.ascontiguousarray(state).tobytes())
        return digest.hexdigest()
