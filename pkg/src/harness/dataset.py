import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from errors import DataError
from models import MappingTable, Recording, RunConfig, SPECIAL_LABELS
from name_matching import closest_name
from synth.generator import SPLITS
from synth.manifest import load_recordings

logger = logging.getLogger(__name__)


def manifest_path(cfg: RunConfig, split: str) -> Path:
    """Explicit data.<split> path, else <data_dir>/<split>.jsonl"""
    explicit = getattr(cfg.data, split)
    return Path(explicit) if explicit else Path(cfg.data_dir) / f"{split}.jsonl"


def check_labels(recordings: Sequence[Recording], table: MappingTable, allow_special: bool = False) -> None:
    universe = set(table.outputs)
    if allow_special:
        universe |= set(SPECIAL_LABELS)
    for rec in recordings:
        if rec.label not in universe:
            raise DataError(
                f"record {rec.path or '?'}: label '{rec.label}' is outside the output universe",
                field="label", suggestion=closest_name(str(rec.label), universe),
            )


def load_split(cfg: RunConfig, split: str, table: Optional[MappingTable] = None) -> List[Recording]:
    if split not in SPLITS:
        raise DataError(f"unknown split '{split}'", field="split", suggestion=closest_name(split, SPLITS))
    path = manifest_path(cfg, split)
    recordings = load_recordings(path)
    if table is not None:
        check_labels(recordings, table, allow_special=split in ("unknown", "extra"))
    logger.info("loaded %d %s recordings from %s", len(recordings), split, path)
    return recordings


def load_splits(cfg: RunConfig, splits: Sequence[str], table: Optional[MappingTable] = None,
                missing_ok: bool = False) -> Dict[str, List[Recording]]:
    loaded = {}
    for split in splits:
        if missing_ok and not manifest_path(cfg, split).exists():
            logger.warning("no %s manifest at %s; skipping", split, manifest_path(cfg, split))
            continue
        loaded[split] = load_split(cfg, split, table)
    return loaded
