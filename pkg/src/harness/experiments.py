"""
Ablation matrix over input encoding and output variant.

    E1  image only       separate networks per head
    E2  image + heatmap  separate networks per head
    E3  image + heatmap  one head
    E4  image + heatmap  trained with one head, evaluated with two
    E5  image + heatmap  two heads

Every experiment on the same phantom sees the same generated data. E4 reuses
the network trained for E3.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config_parser import ConfigParser
from errors import ConfigurationError
from harness.artifact import ModelArtifact
from harness.evaluator import EvalReport, evaluate
from harness.trainer import train
from models import (
    ExperimentConfig,
    HeadsConfig,
    OutputVariant,
    Phase,
    Recording,
    RunConfig,
)
from name_matching import closest_name
from network.resnet import param_report
from pipeline.encoding import encode_batch
from synth.generator import SPLITS, config_hash, generate_all
from synth.manifest import load_recordings, read_manifest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentVariant:
    id: str
    train_variant: OutputVariant
    eval_variant: OutputVariant
    use_heatmap: bool


EXPERIMENTS: Dict[str, ExperimentVariant] = {
    "E1": ExperimentVariant("E1", OutputVariant.SEPARATE_NETS, OutputVariant.SEPARATE_NETS, False),
    "E2": ExperimentVariant("E2", OutputVariant.SEPARATE_NETS, OutputVariant.SEPARATE_NETS, True),
    "E3": ExperimentVariant("E3", OutputVariant.SINGLE_HEAD, OutputVariant.SINGLE_HEAD, True),
    "E4": ExperimentVariant("E4", OutputVariant.SINGLE_HEAD, OutputVariant.SINGLE_TRAIN_MULTIHEAD_TEST, True),
    "E5": ExperimentVariant("E5", OutputVariant.MULTIHEAD, OutputVariant.MULTIHEAD, True),
}


@dataclass
class ExperimentRow:
    id: str
    variant: str
    input: str
    accuracy: float
    parameters: int
    size_mb: float
    ms_per_sample: float


def experiment_variant(experiment_id: str) -> ExperimentVariant:
    if experiment_id not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment '{experiment_id}'", field="experiments",
                                 suggestion=closest_name(experiment_id, EXPERIMENTS))
    return EXPERIMENTS[experiment_id]


def phantom_data(phantom_path: str, seed: int, data_root: Path, cfg: RunConfig,
                 heads: HeadsConfig) -> Dict[str, List[Recording]]:
    """Generated splits for one phantom config, regenerated when seed or config changed"""
    phantom = ConfigParser().parse_phantom_config(phantom_path)
    out_dir = data_root / Path(phantom_path).stem
    expected = config_hash(phantom)
    fresh = all((out_dir / f"{split}.jsonl").exists() for split in SPLITS)
    if fresh:
        header = read_manifest(out_dir / "train.jsonl")
        fresh = header.seed == seed and header.config_hash == expected
    if not fresh:
        generate_all(phantom, seed, out_dir, cfg.test_shift, heads.table)
    return {split: load_recordings(out_dir / f"{split}.jsonl") for split in SPLITS}


def median_latency(artifact: ModelArtifact, recording: Recording, runs: int) -> float:
    """Median single-sample forward time in milliseconds"""
    position, _ = artifact.output.network_for_mode(recording.mode)
    model = artifact.models[position]
    x = encode_batch([recording], artifact.pipeline, Phase.EVAL)
    times = []
    for _ in range(max(1, runs)):
        start = time.perf_counter()
        model.forward(x, Phase.EVAL)
        times.append(time.perf_counter() - start)
    return float(np.median(times) * 1000.0)


def experiment_row(variant: ExperimentVariant, artifact: ModelArtifact, report: EvalReport,
                   latency_ms: float) -> ExperimentRow:
    reports = [param_report(model) for model in artifact.models]
    return ExperimentRow(
        id=variant.id,
        variant=variant.eval_variant.value,
        input="image+heatmap" if variant.use_heatmap else "image",
        accuracy=report.accuracy,
        parameters=sum(r.parameters for r in reports),
        size_mb=sum(r.megabytes for r in reports),
        ms_per_sample=latency_ms,
    )


async def run_experiments(exp_cfg: ExperimentConfig, run_cfg: RunConfig, heads: HeadsConfig,
                          ids: Optional[Sequence[str]] = None,
                          progress: bool = False) -> Tuple[List[ExperimentRow], Dict[str, EvalReport]]:
    seed = run_cfg.require_seed()
    wanted = set(ids) if ids else None
    for experiment_id in wanted or ():
        experiment_variant(experiment_id)
    data_root = Path(run_cfg.data_dir)
    datasets: Dict[str, Dict[str, List[Recording]]] = {}
    trained: Dict[tuple, ModelArtifact] = {}
    rows, reports = [], {}

    for spec in exp_cfg.experiments:
        if wanted is not None and spec.id not in wanted:
            continue
        variant = experiment_variant(spec.id)
        phantom_path = spec.phantom or run_cfg.phantom
        if phantom_path is None:
            raise ConfigurationError(f"{spec.id}: no phantom config given", field="phantom")
        if phantom_path not in datasets:
            datasets[phantom_path] = phantom_data(phantom_path, seed, data_root, run_cfg, heads)
        data = datasets[phantom_path]

        key = (variant.train_variant, variant.use_heatmap, phantom_path)
        if key not in trained:
            pipeline = run_cfg.pipeline.model_copy(update={"use_heatmap": variant.use_heatmap})
            cfg = run_cfg.model_copy(update={"variant": variant.train_variant, "pipeline": pipeline})
            logger.info("%s: training %s (%s)", spec.id, variant.train_variant.value,
                        "image+heatmap" if variant.use_heatmap else "image")
            trained[key] = train(cfg, heads, data["train"], data["val"], progress=progress)
        base = trained[key]
        artifact = ModelArtifact(variant=variant.eval_variant, models=base.models, heads=heads,
                                 pipeline=base.pipeline, metadata=dict(base.metadata, experiment=spec.id))

        report = await evaluate(artifact, data["test"], dataset=f"{spec.id}/test",
                                chunk_size=run_cfg.chunk_size, workers=run_cfg.workers)
        latency = median_latency(artifact, data["test"][0], exp_cfg.timing_runs) if data["test"] else 0.0
        rows.append(experiment_row(variant, artifact, report, latency))
        reports[spec.id] = report
        logger.info("%s accuracy %.4f", spec.id, report.accuracy)
    return rows, reports
