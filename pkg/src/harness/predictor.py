import logging
from typing import List, Sequence

from confidence.quantiles import decide, record_scores
from harness.artifact import ModelArtifact
from harness.evaluator import calibration_mc, require_quantiles
from heads.variants import head_of_prediction
from models import Decision, Recording, ScoreSource

logger = logging.getLogger(__name__)


async def predict_records(artifact: ModelArtifact, recordings: Sequence[Recording], q: float = 0.0,
                          seed: int = 0, chunk_size: int = 64, workers: int = 4) -> List[dict]:
    """One machine-readable line per recording: output class or ignored, plus its head and score"""
    table = require_quantiles(artifact) if q > 0 else artifact.quantiles
    if table is not None:
        table.grid_index(q)
    source = table.source if table is not None else ScoreSource.PRESOFTMAX
    mc = calibration_mc(artifact) if source.needs_mc else None
    records = await record_scores(artifact, recordings, source, mc, seed, chunk_size, workers)

    output = artifact.output
    lines = []
    for index, (rec, record) in enumerate(zip(recordings, records)):
        _, network = output.network_for_mode(rec.mode)
        decision = decide(record.score, record.key, q, table) if table is not None else Decision.ACCEPTED
        if record.hazard:
            logger.warning("recording %s: %s predicted under %s is a known mapping hazard",
                           rec.path or index, record.output, rec.mode.value)
        lines.append({
            "index": index,
            "path": rec.path,
            "mode": rec.mode.value,
            "network_class": record.predicted_class,
            "head": head_of_prediction(output, network, record.predicted, rec.mode),
            "output": record.output if decision is Decision.ACCEPTED else "IGNORED",
            "mapped_output": record.output,
            "presoftmax": float(record.logits[record.predicted]),
            "score": record.score,
            "source": source.value,
            "decision": decision.value,
            "hazard": record.hazard,
        })
    return lines
