"""
Recording -> network input.

Order: heatmap rendered at native resolution, image and heatmap rescaled
together (bilinear), per-channel mean subtraction, then cropping.
"""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from engine.arrays import TRAIN_DTYPE
from errors import ConfigurationError, InputError
from models import Mode, Phase, PipelineConfig, Recording


@dataclass
class EncodedInput:
    channels: np.ndarray            # (C, S, S) or (C, crop, crop) after crop()
    mode: Mode
    roi: Tuple[float, float]        # ROI in the coordinates of `channels`
    offset: Tuple[int, int] = (0, 0)

    @property
    def size(self) -> int:
        return int(self.channels.shape[-1])


def render_heatmap(roi: Tuple[float, float], dims: Tuple[int, int], sigma: float) -> np.ndarray:
    """Unit-peak isotropic Gaussian centred on the ROI, at native resolution"""
    rows, cols = dims
    r0, c0 = roi
    if not (0 <= r0 < rows and 0 <= c0 < cols):
        raise InputError(f"ROI {roi} outside a {rows}x{cols} frame", field="roi")
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}", field="sigma")
    r = np.arange(rows, dtype=np.float64)[:, None]
    c = np.arange(cols, dtype=np.float64)[None, :]
    return np.exp(-((r - r0) ** 2 + (c - c0) ** 2) / (2.0 * sigma ** 2))


def bilinear_resize(array: np.ndarray, out_shape: Tuple[int, int]) -> np.ndarray:
    """Bilinear resample with pixel-centre alignment; edges clamp"""
    in_h, in_w = array.shape
    out_h, out_w = out_shape
    rr = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    cc = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    grid = np.meshgrid(rr, cc, indexing="ij")
    return ndimage.map_coordinates(np.asarray(array, dtype=np.float64), grid, order=1, mode="nearest")


def rescaled_position(value: float, native: int, target: int) -> float:
    return (value + 0.5) * (target / native) - 0.5


def assemble_input(rec: Recording, cfg: PipelineConfig,
                   means: Optional[Tuple[float, float]] = None) -> EncodedInput:
    """Pre-crop encoding. `means` overrides the config's channel means; None entries subtract nothing"""
    rec.check()
    image_mean, heatmap_mean = means if means is not None else (cfg.image_mean, cfg.heatmap_mean)
    size = (cfg.rescale, cfg.rescale)
    image = bilinear_resize(np.clip(rec.image, 0.0, 1.0), size) - (image_mean or 0.0)
    planes = [image]
    if cfg.use_heatmap:
        heatmap = render_heatmap((rec.roi_row, rec.roi_col), rec.dims, cfg.sigma)
        planes.append(bilinear_resize(heatmap, size) - (heatmap_mean or 0.0))
    rows, cols = rec.dims
    roi = (rescaled_position(rec.roi_row, rows, cfg.rescale), rescaled_position(rec.roi_col, cols, cfg.rescale))
    return EncodedInput(channels=np.stack(planes).astype(TRAIN_DTYPE), mode=rec.mode, roi=roi)


def crop_offsets(full: int, size: int, mode: str, rng: Optional[np.random.Generator] = None) -> Tuple[int, int]:
    if size > full:
        raise ConfigurationError(f"crop size {size} exceeds input size {full}", field="crop")
    if mode == "center":
        start = (full - size) // 2
        return start, start
    if mode == "random":
        if rng is None:
            raise ConfigurationError("random crop needs a seeded generator", field="crop")
        row, col = rng.integers(0, full - size + 1, size=2)
        return int(row), int(col)
    raise ConfigurationError(f"unknown crop mode '{mode}'", field="crop")


def crop(encoded: EncodedInput, size: int, mode: str = "center",
         rng: Optional[np.random.Generator] = None) -> EncodedInput:
    """Same window on every channel; the ROI shifts by the offsets"""
    top, left = crop_offsets(encoded.size, size, mode, rng)
    window = encoded.channels[:, top:top + size, left:left + size]
    roi = (encoded.roi[0] - top, encoded.roi[1] - left)
    return EncodedInput(channels=np.ascontiguousarray(window), mode=encoded.mode, roi=roi, offset=(top, left))


def assemble_all(recordings: Sequence[Recording], cfg: PipelineConfig,
                 means: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Pre-crop encodings stacked as (N, C, S, S)"""
    out = np.empty((len(recordings), cfg.channels, cfg.rescale, cfg.rescale), dtype=TRAIN_DTYPE)
    for i, rec in enumerate(recordings):
        out[i] = assemble_input(rec, cfg, means).channels
    return out


def crop_batch(assembled: np.ndarray, size: int, mode: str,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Crop every sample of an (N, C, S, S) stack; random offsets are drawn in sample order"""
    out = np.empty(assembled.shape[:2] + (size, size), dtype=assembled.dtype)
    for i in range(assembled.shape[0]):
        top, left = crop_offsets(assembled.shape[-1], size, mode, rng)
        out[i] = assembled[i, :, top:top + size, left:left + size]
    return out


def encode_batch(recordings: Sequence[Recording], cfg: PipelineConfig, phase=Phase.EVAL,
                 rng: Optional[np.random.Generator] = None,
                 means: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """(N, C, crop, crop) float32 batch ready for the network"""
    mode = cfg.train_crop if Phase(phase) is Phase.TRAIN else cfg.eval_crop
    return crop_batch(assemble_all(recordings, cfg, means), cfg.crop, mode, rng)


def channel_means(recordings: Iterable[Recording], cfg: PipelineConfig) -> Tuple[float, float]:
    """Per-channel means of pre-crop encodings with nothing subtracted"""
    totals = np.zeros(2, dtype=np.float64)
    count = 0
    for rec in recordings:
        encoded = assemble_input(rec, cfg, means=(0.0, 0.0))
        totals[: encoded.channels.shape[0]] += encoded.channels.reshape(encoded.channels.shape[0], -1).mean(axis=1)
        count += 1
    if count == 0:
        raise ConfigurationError("cannot compute channel means from an empty set", field="data")
    image_mean, heatmap_mean = totals / count
    return float(image_mean), float(heatmap_mean) if cfg.use_heatmap else 0.0
