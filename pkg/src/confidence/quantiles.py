"""
Per-class quantile cutoffs over scores recorded on the frozen training set.

Records are grouped by PREDICTED class. For class c with sorted scores v[0..N-1],
cutoff(q) = v[floor(q*N)] (clamped to N-1) and cutoff(0) accepts everything.
A prediction is ignored when its score falls strictly below the cutoff; variance
sources sort descending and ignore scores strictly above it.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from confidence.mc_dropout import McMoments
from engine.losses import softmax
from errors import ConfigurationError
from heads.variants import NetworkOutput, OutputConfig
from models import Decision, Recording, ScoreSource, SPECIAL_LABELS

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9


@dataclass
class ScoreRecord:
    network: str
    predicted: int
    predicted_class: str
    logits: np.ndarray
    score: float
    output: str
    hazard: bool
    label: Optional[str] = None

    @property
    def key(self) -> str:
        return class_key(self.network, self.predicted_class)

    @property
    def labeled(self) -> bool:
        return self.label is not None and self.label not in SPECIAL_LABELS

    @property
    def correct(self) -> Optional[bool]:
        return self.output == self.label if self.labeled else None


def class_key(network: str, class_name: str) -> str:
    return f"{network}/{class_name}"


def all_keys(output: OutputConfig) -> List[str]:
    return [class_key(n.name, c) for n in output.networks for c in n.class_names]


def score_of(source: ScoreSource, network: NetworkOutput, logits: np.ndarray, predicted: int, mode,
             moments: Optional[McMoments] = None, row: int = 0) -> float:
    source = ScoreSource(source)
    if source is ScoreSource.PRESOFTMAX:
        return float(logits[predicted])
    if source is ScoreSource.SOFTMAX:
        group = network.argmax_groups[mode]
        return float(softmax(np.asarray(logits, dtype=np.float64), group)[group.index(predicted)])
    if moments is None:
        raise ConfigurationError(f"score source {source.value} needs MC-dropout statistics", field="score_source")
    table = {
        ScoreSource.MC_MEAN_PRESOFTMAX: moments.mean_presoftmax,
        ScoreSource.MC_VAR_PRESOFTMAX: moments.var_presoftmax,
        ScoreSource.MC_MEAN_SOFTMAX: moments.mean_softmax,
        ScoreSource.MC_VAR_SOFTMAX: moments.var_softmax,
    }[source]
    return float(table[row, predicted])


def build_records(network: NetworkOutput, logits: np.ndarray, recordings: Sequence[Recording],
                  source: ScoreSource = ScoreSource.PRESOFTMAX,
                  moments: Optional[McMoments] = None) -> List[ScoreRecord]:
    """One record per row of `logits` (rows aligned with `recordings`)"""
    records = []
    for row, rec in enumerate(recordings):
        predicted = network.predict(logits[row], rec.mode)
        output, hazard = network.decide_output(predicted, rec.mode, rec.baseline)
        records.append(ScoreRecord(
            network=network.name,
            predicted=predicted,
            predicted_class=network.class_names[predicted],
            logits=np.asarray(logits[row]),
            score=score_of(source, network, logits[row], predicted, rec.mode, moments, row),
            output=output,
            hazard=hazard,
            label=rec.label,
        ))
    return records


async def record_scores(artifact, recordings: Sequence[Recording],
                        source: ScoreSource = ScoreSource.PRESOFTMAX, mc=None, seed: int = 0,
                        chunk_size: int = 64, workers: int = 4) -> List[ScoreRecord]:
    """Frozen-model scores for every recording, in input order"""
    from harness.inference import score_dataset

    return await score_dataset(artifact, recordings, source, mc, seed, chunk_size, workers)


class QuantileTable(BaseModel):
    source: ScoreSource = ScoreSource.PRESOFTMAX
    grid: List[float]
    scores: Dict[str, List[float]]

    @property
    def descending(self) -> bool:
        return self.source.is_variance

    def grid_index(self, q: float) -> int:
        for i, point in enumerate(self.grid):
            if abs(point - q) <= GRID_TOLERANCE:
                return i
        nearest = min(self.grid, key=lambda point: abs(point - q))
        raise ConfigurationError(
            f"quantile {q} is not on the grid; nearest grid point is {nearest}", field="quantile"
        )

    def cutoff(self, key: str, q: float) -> float:
        self.grid_index(q)
        values = self.scores.get(key, [])
        if q <= 0 or not values:
            return math.inf if self.descending else -math.inf
        index = min(int(math.floor(q * len(values) + GRID_TOLERANCE)), len(values) - 1)
        return values[index]

    def cutoffs(self, key: str) -> List[float]:
        return [self.cutoff(key, q) for q in self.grid]


def fit_quantiles(records: Iterable[ScoreRecord], grid: Sequence[float],
                  source: ScoreSource = ScoreSource.PRESOFTMAX,
                  keys: Optional[Sequence[str]] = None) -> QuantileTable:
    source = ScoreSource(source)
    grouped: Dict[str, List[float]] = {key: [] for key in keys or []}
    for record in records:
        grouped.setdefault(record.key, []).append(record.score)
    for key, values in grouped.items():
        if not values:
            logger.warning("no calibration records predicted as %s; that class always accepts", key)
        values.sort(reverse=source.is_variance)
    return QuantileTable(source=source, grid=[float(q) for q in grid], scores=grouped)


def decide(score: float, key: str, q: float, table: QuantileTable) -> Decision:
    cutoff = table.cutoff(key, q)
    ignored = score > cutoff if table.descending else score < cutoff
    return Decision.IGNORED if ignored else Decision.ACCEPTED
