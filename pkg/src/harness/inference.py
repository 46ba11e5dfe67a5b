"""
Chunked inference against a frozen artifact.

Samples are cut into fixed-size chunks and the chunks fan out over worker
threads. Chunk boundaries depend only on chunk_size, so results do not depend
on the number of workers.
"""
import asyncio
import logging
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from confidence.mc_dropout import McMoments, head_moments
from confidence.quantiles import ScoreRecord, build_records
from models import McDropoutConfig, Mode, Phase, Recording, ScoreSource
from pipeline.encoding import encode_batch

logger = logging.getLogger(__name__)

T = TypeVar("T")


def chunked(items: Sequence[T], chunk_size: int) -> List[Sequence[T]]:
    size = max(1, int(chunk_size))
    return [items[i:i + size] for i in range(0, len(items), size)]


async def gather_chunks(fn: Callable, items: Sequence, chunk_size: int, workers: int) -> list:
    """fn(chunk_index, chunk) on worker threads; results in chunk order"""
    semaphore = asyncio.Semaphore(max(1, workers))

    async def run(index, chunk):
        async with semaphore:
            return await asyncio.to_thread(fn, index, chunk)

    return await asyncio.gather(*(run(i, chunk) for i, chunk in enumerate(chunked(items, chunk_size))))


def map_chunks(fn: Callable, items: Sequence, chunk_size: int) -> list:
    return [fn(i, chunk) for i, chunk in enumerate(chunked(items, chunk_size))]


def logits_fn(model, pipeline):
    def run(_, recordings):
        return model.forward(encode_batch(recordings, pipeline, Phase.EVAL), Phase.EVAL)
    return run


def moments_fn(model, pipeline, network, mc: McDropoutConfig, seed: int, position: int):
    def run(index, recordings):
        features = model.features(encode_batch(recordings, pipeline, Phase.EVAL), Phase.EVAL)
        groups = [network.argmax_groups[Mode(rec.mode)] for rec in recordings]
        return head_moments(features, model.fc, mc.rate, mc.runs, [seed, position, index], groups)
    return run


def merge_moments(parts: List[McMoments]) -> McMoments:
    return McMoments(
        mean_presoftmax=np.concatenate([p.mean_presoftmax for p in parts]),
        var_presoftmax=np.concatenate([p.var_presoftmax for p in parts]),
        mean_softmax=np.concatenate([p.mean_softmax for p in parts]),
        var_softmax=np.concatenate([p.var_softmax for p in parts]),
        runs=parts[0].runs,
        rate=parts[0].rate,
    )


def logits_sync(model, pipeline, recordings: Sequence[Recording], chunk_size: int = 64) -> np.ndarray:
    parts = map_chunks(logits_fn(model, pipeline), list(recordings), chunk_size)
    return np.concatenate(parts) if parts else np.zeros((0, model.spec.num_network_classes), dtype=np.float32)


async def score_dataset(artifact, recordings: Sequence[Recording],
                        source: ScoreSource = ScoreSource.PRESOFTMAX, mc: Optional[McDropoutConfig] = None,
                        seed: int = 0, chunk_size: int = 64, workers: int = 4) -> List[ScoreRecord]:
    """One ScoreRecord per recording, in input order"""
    source = ScoreSource(source)
    output = artifact.output
    records: List[Optional[ScoreRecord]] = [None] * len(recordings)
    for position, (network, model) in enumerate(zip(output.networks, artifact.models)):
        indices = [i for i, rec in enumerate(recordings) if Mode(rec.mode) in network.modes]
        if not indices:
            continue
        subset = [recordings[i] for i in indices]
        parts = await gather_chunks(logits_fn(model, artifact.pipeline), subset, chunk_size, workers)
        logits = np.concatenate(parts)
        moments = None
        if source.needs_mc:
            mc = mc or McDropoutConfig()
            parts = await gather_chunks(moments_fn(model, artifact.pipeline, network, mc, seed, position),
                                        subset, chunk_size, workers)
            moments = merge_moments(parts)
        for i, record in zip(indices, build_records(network, logits, subset, source, moments)):
            records[i] = record
    logger.debug("scored %d recordings with source %s", len(recordings), source.value)
    return records
