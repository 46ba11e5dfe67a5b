import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from confidence.quantiles import QuantileTable, ScoreRecord, all_keys, fit_quantiles, record_scores
from confidence.sweep import SweepRecord, sweep
from errors import UsageError
from harness.artifact import ModelArtifact
from harness.dataset import check_labels
from heads.mapping import output_heads
from models import McDropoutConfig, OutputVariant, Recording, ScoreSource

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    dataset: str
    total: int
    accuracy: float
    per_class: Dict[str, Optional[float]]
    confusion: pd.DataFrame
    structural: List[Tuple[str, str]] = field(default_factory=list)
    hazards: int = 0

    @property
    def confusion_pct(self) -> pd.DataFrame:
        return row_percentages(self.confusion)

    def to_metrics(self) -> dict:
        return {
            "dataset": self.dataset,
            "total": self.total,
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class,
            "structural_cells": [list(cell) for cell in self.structural],
            "structural_violations": structural_violations(self),
            "hazards": self.hazards,
        }


def structural_cells(artifact: ModelArtifact) -> List[Tuple[str, str]]:
    """(true, predicted) output pairs that a head-restricted argmax can never produce"""
    if artifact.output.variant is OutputVariant.SINGLE_HEAD:
        return []
    table, layout = artifact.heads.table, artifact.heads.layout
    heads = output_heads(table, layout)
    return [(true, pred) for true in table.outputs for pred in table.outputs
            if heads.get(true) and heads.get(pred) and not heads[true] & heads[pred]]


def confusion_matrix(records: Sequence[ScoreRecord], labels: Sequence[str]) -> pd.DataFrame:
    """Counts with true output classes as rows and predicted output classes as columns"""
    position = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for record in records:
        counts[position[record.label], position[record.output]] += 1
    frame = pd.DataFrame(counts, index=list(labels), columns=list(labels))
    frame.index.name = "true"
    return frame


def row_percentages(counts: pd.DataFrame) -> pd.DataFrame:
    totals = counts.sum(axis=1).replace(0, np.nan)
    pct = counts.div(totals, axis=0).mul(100.0).fillna(0.0)
    pct.index.name = counts.index.name
    return pct


def structural_violations(report: EvalReport) -> int:
    return int(sum(report.confusion.loc[true, pred] for true, pred in report.structural))


def summarize(records: Sequence[ScoreRecord], artifact: ModelArtifact, dataset: str) -> EvalReport:
    labels = artifact.heads.table.outputs
    confusion = confusion_matrix(records, labels)
    per_class = {}
    for label in labels:
        row_total = int(confusion.loc[label].sum())
        per_class[label] = float(confusion.loc[label, label] / row_total) if row_total else None
    total = len(records)
    correct = int(np.trace(confusion.to_numpy()))
    return EvalReport(
        dataset=dataset,
        total=total,
        accuracy=correct / total if total else 0.0,
        per_class=per_class,
        confusion=confusion,
        structural=structural_cells(artifact),
        hazards=sum(1 for r in records if r.hazard),
    )


async def evaluate(artifact: ModelArtifact, recordings: Sequence[Recording], dataset: str = "test",
                   chunk_size: int = 64, workers: int = 4) -> EvalReport:
    check_labels(recordings, artifact.heads.table)
    records = await record_scores(artifact, recordings, ScoreSource.PRESOFTMAX, chunk_size=chunk_size,
                                  workers=workers)
    report = summarize(records, artifact, dataset)
    logger.info("%s accuracy %.4f over %d recordings", dataset, report.accuracy, report.total)
    violations = structural_violations(report)
    if violations:
        logger.warning("%d predictions landed in cross-head cells", violations)
    return report


async def calibrate(artifact: ModelArtifact, train_recordings: Sequence[Recording], grid: Sequence[float],
                    source: ScoreSource = ScoreSource.PRESOFTMAX, mc: Optional[McDropoutConfig] = None,
                    seed: int = 0, chunk_size: int = 64, workers: int = 4) -> ModelArtifact:
    """Artifact copy carrying quantile cutoffs fitted on the frozen training set"""
    source = ScoreSource(source)
    records = await record_scores(artifact, train_recordings, source, mc, seed, chunk_size, workers)
    table = fit_quantiles(records, grid, source, keys=all_keys(artifact.output))
    metadata = dict(artifact.metadata)
    metadata["calibration"] = {"size": len(records), "source": source.value, "seed": seed}
    if source.needs_mc:
        metadata["calibration"]["mc"] = (mc or McDropoutConfig()).model_dump()
    logger.info("calibrated %d classes on %d training recordings (%s)", len(table.scores), len(records), source.value)
    return ModelArtifact(variant=artifact.variant, models=artifact.models, heads=artifact.heads,
                         pipeline=artifact.pipeline, quantiles=table, metadata=metadata)


def calibration_mc(artifact: ModelArtifact) -> Optional[McDropoutConfig]:
    stored = artifact.metadata.get("calibration", {}).get("mc")
    return McDropoutConfig(**stored) if stored else None


async def score_sets(artifact: ModelArtifact, sets: Dict[str, Sequence[Recording]], source: ScoreSource,
                     mc: Optional[McDropoutConfig] = None, seed: int = 0, chunk_size: int = 64,
                     workers: int = 4) -> Dict[str, List[ScoreRecord]]:
    scored = {}
    for name, recordings in sets.items():
        scored[name] = await record_scores(artifact, recordings, source, mc, seed, chunk_size, workers)
    return scored


async def run_sweep(artifact: ModelArtifact, sets: Dict[str, Sequence[Recording]], chunk_size: int = 64,
                    workers: int = 4, seed: int = 0) -> List[SweepRecord]:
    """Ignored/error rates over the artifact's quantile grid, one inference pass per set"""
    table = require_quantiles(artifact)
    scored = await score_sets(artifact, sets, table.source, calibration_mc(artifact), seed, chunk_size, workers)
    return sweep(scored, table)


async def sweep_sources(artifact: ModelArtifact, train_recordings: Sequence[Recording],
                        sets: Dict[str, Sequence[Recording]], sources: Sequence[ScoreSource],
                        grid: Sequence[float], mc: Optional[McDropoutConfig] = None, seed: int = 0,
                        chunk_size: int = 64, workers: int = 4) -> Dict[str, List[SweepRecord]]:
    """Per score source: fit cutoffs on the training set, then sweep every set"""
    results = {}
    keys = all_keys(artifact.output)
    for source in sources:
        source = ScoreSource(source)
        train_records = await record_scores(artifact, train_recordings, source, mc, seed, chunk_size, workers)
        table = fit_quantiles(train_records, grid, source, keys=keys)
        scored = await score_sets(artifact, sets, source, mc, seed, chunk_size, workers)
        results[source.value] = sweep({"train": train_records, **scored}, table)
    return results


def require_quantiles(artifact: ModelArtifact) -> QuantileTable:
    if artifact.quantiles is None:
        raise UsageError("artifact has no quantile table; run `calibrate` first", field="quantiles")
    return artifact.quantiles
