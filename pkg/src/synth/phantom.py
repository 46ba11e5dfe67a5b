"""
Procedural beam-space phantom.

Geometry lives in normalised coordinates: y (depth, down) and x both span
[-1, 1] across the frame. A canonical structure (tissue envelope, dark
chambers, bright walls) is posed by scale, rotation and translation, smoothed,
multiplied by unit-mean Rayleigh speckle, scaled by the gain and clipped to [0, 1].
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from models import Ellipse, PhantomConfig, PoseRange

RAYLEIGH_UNIT_MEAN_SCALE = 1.0 / math.sqrt(math.pi / 2.0)
CONTRAST_SMOOTHING = 4.0


@dataclass(frozen=True)
class Pose:
    dy: float = 0.0
    dx: float = 0.0
    angle: float = 0.0      # radians
    scale: float = 1.0


IDENTITY_POSE = Pose()


def sample_pose(rng: np.random.Generator, pose: PoseRange) -> Pose:
    """Translation is a fraction of the frame; the frame spans 2 normalised units"""
    dy, dx = rng.uniform(-2 * pose.translate, 2 * pose.translate, size=2)
    angle = math.radians(rng.uniform(-pose.rotate_deg, pose.rotate_deg))
    scale = rng.uniform(pose.scale_min, pose.scale_max)
    return Pose(float(dy), float(dx), float(angle), float(scale))


def pose_point(pose: Pose, point: Tuple[float, float]) -> Tuple[float, float]:
    y, x = point
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    return (pose.scale * (c * y - s * x) + pose.dy, pose.scale * (s * y + c * x) + pose.dx)


def to_pixel(cfg: PhantomConfig, point: Tuple[float, float]) -> Tuple[float, float]:
    y, x = point
    return ((y + 1.0) * 0.5 * cfg.rows - 0.5, (x + 1.0) * 0.5 * cfg.cols - 0.5)


def inside_frame(cfg: PhantomConfig, pixel: Tuple[float, float]) -> bool:
    row, col = pixel
    return 0.0 <= row <= cfg.rows - 1 and 0.0 <= col <= cfg.cols - 1


def _canonical_grid(cfg: PhantomConfig, pose: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """Canonical coordinates of every pixel centre under the inverse pose"""
    ys = (np.arange(cfg.rows) + 0.5) / cfg.rows * 2.0 - 1.0
    xs = (np.arange(cfg.cols) + 0.5) / cfg.cols * 2.0 - 1.0
    Y, X = np.meshgrid(ys, xs, indexing="ij")
    Y, X = (Y - pose.dy) / pose.scale, (X - pose.dx) / pose.scale
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    return c * Y + s * X, -s * Y + c * X


def _inside(ellipse: Ellipse, Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    dy, dx = Y - ellipse.center[0], X - ellipse.center[1]
    a = math.radians(ellipse.angle)
    c, s = math.cos(a), math.sin(a)
    u, v = c * dy + s * dx, -s * dy + c * dx
    return (u / ellipse.axes[0]) ** 2 + (v / ellipse.axes[1]) ** 2 <= 1.0


def render_structure(cfg: PhantomConfig, pose: Pose, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant intensity map: background, envelope, then chambers, then walls"""
    Y, X = _canonical_grid(cfg, pose)
    image = np.full((cfg.rows, cfg.cols), cfg.background, dtype=np.float64)
    j = cfg.intensity_jitter
    for ellipse in [cfg.envelope, *cfg.chambers, *cfg.walls]:
        level = ellipse.intensity * rng.uniform(1.0 - j, 1.0 + j)
        image[_inside(ellipse, Y, X)] = level
    return image


def speckle(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.rayleigh(RAYLEIGH_UNIT_MEAN_SCALE, size=shape)


def finish(cfg: PhantomConfig, field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    smoothed = ndimage.gaussian_filter(field, cfg.speckle_smoothing) if cfg.speckle_smoothing > 0 else field
    return np.clip(smoothed * speckle(rng, field.shape) * cfg.gain, 0.0, 1.0)


def render_image(cfg: PhantomConfig, pose: Pose, rng: np.random.Generator) -> np.ndarray:
    return finish(cfg, render_structure(cfg, pose, rng), rng)


def render_empty(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Air/gel frame: a uniform field in speckle, no structure"""
    level = rng.uniform(cfg.background, cfg.envelope.intensity * 0.6)
    return finish(cfg, np.full((cfg.rows, cfg.cols), level), rng)


def degrade(image: np.ndarray, rng: np.random.Generator, contrast: float, bands: int) -> np.ndarray:
    """Collapse contrast around the mean and blank horizontal bands with the mean"""
    mean = float(image.mean())
    out = mean + (image - mean) * contrast
    rows = image.shape[0]
    for _ in range(bands):
        height = int(rng.integers(max(1, rows // 12), max(2, rows // 5)))
        top = int(rng.integers(0, rows - height + 1))
        out[top:top + height, :] = mean
    return np.clip(out, 0.0, 1.0)


def structure_contrast(image: np.ndarray) -> float:
    """std of the image smoothed at sigma 4 px over its mean"""
    mean = float(np.mean(image))
    if mean <= 0:
        return 0.0
    return float(np.std(ndimage.gaussian_filter(np.asarray(image, dtype=np.float64), CONTRAST_SMOOTHING)) / mean)
