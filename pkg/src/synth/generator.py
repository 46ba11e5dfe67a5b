import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, DataError
from models import ClassTemplate, MappingTable, Mode, PhantomConfig, ShiftParams
from synth.manifest import DatasetManifest, ManifestRecord, write_image, write_manifest
from synth.phantom import (
    Pose,
    degrade,
    inside_frame,
    pose_point,
    render_empty,
    render_image,
    sample_pose,
    to_pixel,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "unknown", "extra")
NO_LABEL = "NO"
SHIFT_BOUNDS = {"gain": 0.20, "pose": 0.25, "jitter": 0.30}


@dataclass
class SamplePlan:
    index: int
    kind: str                          # class | no | unknown | extra
    label: str
    mode: Mode
    baseline: float
    roi: Tuple[float, float]
    sample_seed: int
    anchor: Optional[str] = None
    pose: Optional[Pose] = None


def config_hash(cfg: PhantomConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def split_rng(seed: int, split: str) -> np.random.Generator:
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split '{split}'", field="split")
    return np.random.default_rng([seed, SPLITS.index(split)])


def validate_phantom(cfg: PhantomConfig, table: Optional[MappingTable] = None) -> None:
    half_height = abs(cfg.envelope.center[0]) + max(cfg.envelope.axes)
    half_width = abs(cfg.envelope.center[1]) + max(cfg.envelope.axes)
    for name, (y, x) in {**cfg.anchors, **cfg.holdout_anchors}.items():
        if abs(y) > half_height or abs(x) > half_width:
            raise ConfigurationError(f"anchor '{name}' lies outside the structure bounding box", field=name)
    shared = set(cfg.anchors) & set(cfg.holdout_anchors)
    if shared:
        raise ConfigurationError(f"held-out anchors reused by templates: {sorted(shared)}", field="holdout_anchors")
    for template in cfg.templates:
        if template.anchor not in cfg.anchors:
            raise ConfigurationError(
                f"template '{template.output}' references unknown anchor '{template.anchor}'", field="templates"
            )
    outputs = [t.output for t in cfg.templates]
    if len(set(outputs)) != len(outputs):
        raise ConfigurationError("several templates share an output class", field="templates")
    if table is not None:
        missing = [o for o in table.outputs if o != table.no_output and o not in outputs]
        if missing:
            raise ConfigurationError(f"output classes without a template: {missing}", field="templates")


def class_counts(total: int, labels: List[str]) -> Dict[str, int]:
    """Even split of `total` over labels; the remainder goes to the first labels"""
    base, remainder = divmod(total, len(labels))
    return {label: base + (1 if i < remainder else 0) for i, label in enumerate(labels)}


def _baseline(template: ClassTemplate, rng: np.random.Generator) -> float:
    rule = template.baseline
    if rule.kind == "point":
        return float(rule.value)
    return float(rng.uniform(rule.low, rule.high))


def _posed_roi(cfg: PhantomConfig, anchor: Tuple[float, float], jitter: float,
               rng: np.random.Generator, what: str) -> Tuple[Pose, Tuple[float, float]]:
    for _ in range(cfg.pose_retries):
        pose = sample_pose(rng, cfg.pose)
        pixel = to_pixel(cfg, pose_point(pose, anchor))
        if inside_frame(cfg, pixel):
            row = float(np.clip(pixel[0] + rng.normal(0.0, jitter), 0.0, cfg.rows - 1))
            col = float(np.clip(pixel[1] + rng.normal(0.0, jitter), 0.0, cfg.cols - 1))
            return pose, (row, col)
    raise DataError(f"{what}: anchor left the frame in {cfg.pose_retries} pose draws", field="pose")


def plan_dataset(cfg: PhantomConfig, split: str, seed: int) -> List[SamplePlan]:
    """Every random draw except pixels, so counts and labels can be checked without rendering"""
    rng = split_rng(seed, split)
    total = getattr(cfg.counts, split)
    templates = {t.output: t for t in cfg.templates}
    if split in ("unknown", "extra"):
        kinds = [split] * total
        labels = [split.upper()] * total
    else:
        counts = class_counts(total, list(templates) + [NO_LABEL])
        labels = [label for label, n in counts.items() for _ in range(n)]
        labels = [labels[i] for i in rng.permutation(len(labels))]
        kinds = ["no" if label == NO_LABEL else "class" for label in labels]

    plans = []
    holdout = sorted(cfg.holdout_anchors)
    template_names = list(templates)
    for index, (kind, label) in enumerate(zip(kinds, labels)):
        sample_seed = int(rng.integers(2 ** 32))
        if kind == "no":
            mode = Mode(rng.choice([m.value for m in Mode]))
            roi = (float(rng.uniform(0, cfg.rows - 1)), float(rng.uniform(0, cfg.cols - 1)))
            plans.append(SamplePlan(index, kind, label, mode, float(rng.uniform(0.0, 1.0)), roi, sample_seed))
            continue
        if kind == "extra":
            anchor = holdout[int(rng.integers(len(holdout)))]
            point, jitter = cfg.holdout_anchors[anchor], float(np.mean([t.jitter for t in cfg.templates]))
            mode, baseline = Mode(rng.choice([m.value for m in Mode])), 0.5
        else:
            if kind == "unknown":
                template = templates[template_names[int(rng.integers(len(template_names)))]]
            else:
                template = templates[label]
            anchor, point, jitter = template.anchor, cfg.anchors[template.anchor], template.jitter
            mode, baseline = template.mode, _baseline(template, rng)
        pose, roi = _posed_roi(cfg, point, jitter, rng, f"{split}[{index}] {label}")
        plans.append(SamplePlan(index, kind, label, mode, baseline, roi, sample_seed, anchor, pose))
    return plans


def render_plan(cfg: PhantomConfig, plan: SamplePlan) -> np.ndarray:
    rng = np.random.default_rng(plan.sample_seed)
    if plan.kind == "no":
        return render_empty(cfg, rng)
    image = render_image(cfg, plan.pose, rng)
    if plan.kind == "unknown":
        image = degrade(image, rng, cfg.unknown_contrast, cfg.occlusion_bands)
    return image


def generate_dataset(cfg: PhantomConfig, seed: int, split: str, out_dir: Path,
                     table: Optional[MappingTable] = None) -> Tuple[DatasetManifest, Path]:
    """Render one split into out_dir/<split>/ and write out_dir/<split>.jsonl"""
    validate_phantom(cfg, table)
    out_dir = Path(out_dir)
    plans = plan_dataset(cfg, split, seed)
    records = []
    for plan in plans:
        relative = f"{split}/{plan.index:05d}.f32"
        write_image(out_dir / relative, render_plan(cfg, plan))
        records.append(ManifestRecord(
            path=relative, roi_row=plan.roi[0], roi_col=plan.roi[1], baseline=plan.baseline,
            mode=plan.mode, label=plan.label, split=split,
        ))
    manifest = DatasetManifest(split=split, seed=seed, config_hash=config_hash(cfg), records=records)
    path = write_manifest(manifest, out_dir / f"{split}.jsonl")
    logger.info("generated %d %s samples -> %s", len(records), split, path)
    return manifest, path


def generate_special_sets(cfg: PhantomConfig, seed: int, out_dir: Path,
                          table: Optional[MappingTable] = None) -> Dict[str, Tuple[DatasetManifest, Path]]:
    return {split: generate_dataset(cfg, seed, split, out_dir, table) for split in ("unknown", "extra")}


def site_shift(cfg: PhantomConfig, shift: ShiftParams) -> PhantomConfig:
    """Nuisance-distribution shift for test generation; anchors and templates keep their meaning"""
    for name, bound in SHIFT_BOUNDS.items():
        value = getattr(shift, name)
        if abs(value) > bound:
            raise ConfigurationError(f"{name} shift {value} exceeds +/-{bound}", field=f"test_shift.{name}")
    if shift.gain == 0 and shift.pose == 0 and shift.jitter == 0:
        return cfg.model_copy(deep=True)
    widen = 1.0 + shift.pose
    pose = cfg.pose.model_copy(update={
        "translate": cfg.pose.translate * widen,
        "rotate_deg": cfg.pose.rotate_deg * widen,
        "scale_min": 1.0 - (1.0 - cfg.pose.scale_min) * widen,
        "scale_max": 1.0 + (cfg.pose.scale_max - 1.0) * widen,
    })
    templates = [t.model_copy(update={"jitter": t.jitter * (1.0 + shift.jitter)}) for t in cfg.templates]
    return cfg.model_copy(update={"gain": cfg.gain * (1.0 + shift.gain), "pose": pose, "templates": templates})


def generate_all(cfg: PhantomConfig, seed: int, out_dir: Path, shift: Optional[ShiftParams] = None,
                 table: Optional[MappingTable] = None) -> Dict[str, Path]:
    """All five splits; test (and the special sets) come from the site-shifted config"""
    shifted = site_shift(cfg, shift or ShiftParams())
    paths = {split: generate_dataset(cfg, seed, split, out_dir, table)[1] for split in ("train", "val")}
    paths["test"] = generate_dataset(shifted, seed, "test", out_dir, table)[1]
    for split, (_, path) in generate_special_sets(shifted, seed, out_dir, table).items():
        paths[split] = path
    return paths
