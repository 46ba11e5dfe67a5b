"""
Dataset manifests and raw image files.

A manifest is JSON Lines: a header line {"kind": "header", ...} followed by one
record per sample. Image paths are relative to the manifest's directory. An
image file is an 8-byte header (<u4 rows, <u4 cols) followed by rows*cols <f4.
"""
import json
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from errors import DataError
from models import Mode, Recording

HEADER_DTYPE = np.dtype("<u4")
PIXEL_DTYPE = np.dtype("<f4")


class ManifestRecord(BaseModel):
    path: str
    roi_row: float
    roi_col: float
    baseline: float
    mode: Mode
    label: str
    split: str


class DatasetManifest(BaseModel):
    split: str
    seed: int
    config_hash: str
    records: List[ManifestRecord] = []


def _dumps(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def write_image(path: Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"image must be 2-D, got shape {image.shape}", field="image")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(np.array(image.shape, dtype=HEADER_DTYPE).tobytes())
        f.write(image.astype(PIXEL_DTYPE).tobytes())


def read_image(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"image file missing: {path}", field="path")
    if len(raw) < 8:
        raise DataError(f"image file truncated: {path}", field="path")
    rows, cols = np.frombuffer(raw[:8], dtype=HEADER_DTYPE)
    expected = 8 + int(rows) * int(cols) * PIXEL_DTYPE.itemsize
    if len(raw) != expected:
        raise DataError(f"image file {path} holds {len(raw)} bytes, header implies {expected}", field="path")
    return np.frombuffer(raw[8:], dtype=PIXEL_DTYPE).reshape(int(rows), int(cols)).copy()


def write_manifest(manifest: DatasetManifest, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": "header", "split": manifest.split, "seed": manifest.seed, "config_hash": manifest.config_hash}
    lines = [_dumps(header)] + [_dumps(record.model_dump(mode="json")) for record in manifest.records]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = [line for line in path.read_text().splitlines() if line.strip()]
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}", field="path")
    if not lines:
        raise DataError(f"empty manifest: {path}", field="path")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise DataError(f"{path}: first line is not a manifest header", field="header")
        records = [ManifestRecord(**json.loads(line)) for line in lines[1:]]
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"{path}: malformed manifest line: {e}", field="record")
    return DatasetManifest(split=header["split"], seed=header["seed"], config_hash=header["config_hash"],
                           records=records)


def load_recordings(path: Path, manifest: Optional[DatasetManifest] = None) -> List[Recording]:
    """Manifest plus its image files as Recordings, in manifest order"""
    path = Path(path)
    manifest = manifest or read_manifest(path)
    recordings = []
    for record in manifest.records:
        image_path = path.parent / record.path
        recordings.append(Recording(
            image=read_image(image_path),
            roi_row=record.roi_row,
            roi_col=record.roi_col,
            baseline=record.baseline,
            mode=record.mode,
            label=record.label,
            split=record.split,
            path=record.path,
        ))
    return recordings
