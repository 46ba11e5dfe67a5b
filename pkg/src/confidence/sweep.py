from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

from confidence.quantiles import QuantileTable, ScoreRecord, decide
from models import Decision


@dataclass
class SweepRecord:
    dataset: str
    q: float
    ignored: float
    error: Optional[float]
    accepted_accuracy: Optional[float]
    total: int
    source: str

    def to_dict(self) -> dict:
        return asdict(self)


def ignored_mask(records: Sequence[ScoreRecord], q: float, table: QuantileTable) -> List[bool]:
    return [decide(r.score, r.key, q, table) is Decision.IGNORED for r in records]


def sweep(records_by_set: Dict[str, Sequence[ScoreRecord]], table: QuantileTable,
          grid: Optional[Sequence[float]] = None) -> List[SweepRecord]:
    """Ignored and error rates per (dataset, q); both share the dataset size as denominator.

    Error counts misclassified samples that were accepted and is only reported for
    sets whose labels belong to the output universe.
    """
    grid = list(grid if grid is not None else table.grid)
    results = []
    for dataset, records in records_by_set.items():
        total = len(records)
        labeled = total > 0 and all(r.labeled for r in records)
        for q in grid:
            mask = ignored_mask(records, q, table)
            ignored = sum(mask)
            error = accuracy = None
            if labeled:
                wrong = sum(1 for r, skip in zip(records, mask) if not skip and not r.correct)
                error = wrong / total
                accepted = total - ignored
                accuracy = (accepted - wrong) / accepted if accepted else None
            results.append(SweepRecord(
                dataset=dataset,
                q=float(q),
                ignored=ignored / total if total else 0.0,
                error=error,
                accepted_accuracy=accuracy,
                total=total,
                source=table.source.value,
            ))
    return results
