"""
Training loop for every output variant.

Inputs are assembled once (rescale, heatmap, mean subtraction); each epoch
reshuffles and draws fresh random crops. One network per entry of the output
configuration: separate_nets trains each head's network on that head's samples
only, the other variants train a single network on everything.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from rich.progress import Progress

from engine.losses import batch_cross_entropy
from engine.optim import SGD, StepDecay
from engine.tape import Tape
from errors import ConfigurationError
from harness.artifact import ModelArtifact
from harness.dataset import check_labels
from harness.inference import logits_sync
from heads.layout import restricted_argmax, validate_layout
from heads.mapping import validate_table
from heads.variants import NetworkOutput, configure_output
from models import HeadsConfig, Mode, Phase, PipelineConfig, Recording, RunConfig
from network.resnet import Model, build_model, preset_spec
from pipeline.encoding import assemble_all, channel_means, crop_batch

logger = logging.getLogger(__name__)

HASHED_FIELDS = ("seed", "pipeline", "architecture", "architecture_overrides", "variant", "optimizer",
                 "epochs", "batch_size", "retrain_on_train_val")


@dataclass
class EpochLog:
    network: str
    epoch: int
    lr: float
    loss: float
    accuracy: float
    val_accuracy: Optional[float] = None


def run_hash(cfg: RunConfig) -> str:
    data = cfg.model_dump(mode="json", include=set(HASHED_FIELDS))
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def resolve_means(pipeline: PipelineConfig, recordings: Sequence[Recording]) -> PipelineConfig:
    """Fill null channel means from the training recordings"""
    missing_image = pipeline.image_mean is None
    missing_heatmap = pipeline.use_heatmap and pipeline.heatmap_mean is None
    if not (missing_image or missing_heatmap):
        return pipeline
    image_mean, heatmap_mean = channel_means(recordings, pipeline)
    update = {}
    if missing_image:
        update["image_mean"] = image_mean
    if missing_heatmap:
        update["heatmap_mean"] = heatmap_mean
    logger.info("channel means from %d training recordings: %s", len(recordings), update)
    return pipeline.model_copy(update=update)


def network_spec(cfg: RunConfig, network: NetworkOutput, pipeline: PipelineConfig):
    overrides = dict(cfg.architecture_overrides)
    overrides.update(
        in_channels=pipeline.channels,
        num_network_classes=network.num_classes,
        input_size=pipeline.crop,
    )
    return preset_spec(cfg.architecture, **overrides)


def train_step(model: Model, network: NetworkOutput, x: np.ndarray, targets: np.ndarray,
               modes: Sequence[Mode], optimizer: SGD) -> Tuple[float, np.ndarray, List[np.ndarray]]:
    """One SGD step on a batch; returns (loss, logits, gradients in parameter order)"""
    tape = Tape()
    logits = model.forward(x, Phase.TRAIN, tape)
    subsets = [network.loss_groups[Mode(mode)] for mode in modes]
    loss, grad = batch_cross_entropy(logits, targets, subsets)
    _, grads = model.backward(grad, tape)
    optimizer.step([p for _, p in model.parameters()], grads)
    return loss, logits, grads


def output_accuracy(network: NetworkOutput, logits: np.ndarray, recordings: Sequence[Recording]) -> float:
    hits = 0
    for row, rec in zip(logits, recordings):
        output, _ = network.decide_output(network.predict(row, rec.mode), rec.mode, rec.baseline)
        hits += output == rec.label
    return hits / len(recordings) if recordings else 0.0


def train_network(cfg: RunConfig, network: NetworkOutput, model: Model, pipeline: PipelineConfig,
                  recordings: Sequence[Recording], rng: np.random.Generator,
                  val_recordings: Sequence[Recording] = (), progress: Optional[Progress] = None) -> List[EpochLog]:
    targets = np.array([network.target(r.label, r.mode, r.baseline, r.path or f"sample {i}")
                        for i, r in enumerate(recordings)], dtype=np.int64)
    modes = [Mode(r.mode) for r in recordings]
    assembled = assemble_all(recordings, pipeline)
    optimizer = SGD(cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay)
    schedule = StepDecay(cfg.optimizer.lr, cfg.epochs, cfg.optimizer.step_size, cfg.optimizer.gamma)
    n, batch = len(recordings), max(1, cfg.batch_size)
    task = progress.add_task(f"training {network.name}", total=cfg.epochs) if progress else None

    history = []
    for epoch in range(cfg.epochs):
        optimizer.lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        seen, total_loss, correct = 0, 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            # batchnorm needs two samples in train phase
            if idx.size < 2 and n > 1:
                continue
            x = crop_batch(assembled[idx], pipeline.crop, pipeline.train_crop, rng)
            batch_modes = [modes[i] for i in idx]
            loss, logits, _ = train_step(model, network, x, targets[idx], batch_modes, optimizer)
            total_loss += loss * idx.size
            seen += idx.size
            correct += sum(
                restricted_argmax(row, network.loss_groups[mode]) == target
                for row, mode, target in zip(logits, batch_modes, targets[idx])
            )
        val_accuracy = None
        if val_recordings:
            val_logits = logits_sync(model, pipeline, val_recordings)
            val_accuracy = output_accuracy(network, val_logits, val_recordings)
        log = EpochLog(network.name, epoch + 1, optimizer.lr, total_loss / max(seen, 1), correct / max(seen, 1),
                       val_accuracy)
        history.append(log)
        logger.info("%s epoch %d/%d lr %.4g loss %.4f acc %.4f%s", network.name, log.epoch, cfg.epochs, log.lr,
                    log.loss, log.accuracy, "" if val_accuracy is None else f" val {val_accuracy:.4f}")
        if progress:
            progress.advance(task)
    return history


def train(cfg: RunConfig, heads: HeadsConfig, train_recordings: Sequence[Recording],
          val_recordings: Optional[Sequence[Recording]] = None, progress: bool = False) -> ModelArtifact:
    seed = cfg.require_seed()
    output = configure_output(cfg.variant, heads)
    problems = validate_layout(heads.layout, len(heads.layout.class_names)) + validate_table(heads.table, heads.layout)
    if problems:
        raise ConfigurationError(f"heads config rejected: {'; '.join(problems)}", field="heads")
    check_labels(train_recordings, heads.table)
    val_recordings = list(val_recordings or [])
    if val_recordings:
        check_labels(val_recordings, heads.table)
    if cfg.retrain_on_train_val:
        train_recordings = list(train_recordings) + val_recordings
        val_recordings = []
    if not train_recordings:
        raise ConfigurationError("training set is empty", field="data.train")

    pipeline = resolve_means(cfg.pipeline, train_recordings)
    models, history = [], []
    with Progress(disable=not progress) as bar:
        for position, network in enumerate(output.networks):
            mine = [r for r in train_recordings if Mode(r.mode) in network.modes]
            val_mine = [r for r in val_recordings if Mode(r.mode) in network.modes]
            model = build_model(network_spec(cfg, network, pipeline), seed + position)
            rng = np.random.default_rng([seed, position])
            logger.info("training %s on %d recordings (%d units)", network.name, len(mine), network.num_classes)
            history.extend(train_network(cfg, network, model, pipeline, mine, rng, val_mine, bar))
            models.append(model)

    metadata = {
        "seed": seed,
        "config_hash": run_hash(cfg),
        "epochs": cfg.epochs,
        "train_size": len(train_recordings),
        "means": [pipeline.image_mean, pipeline.heatmap_mean],
        "history": [asdict(log) for log in history],
    }
    return ModelArtifact(variant=output.variant, models=models, heads=heads, pipeline=pipeline, metadata=metadata)
