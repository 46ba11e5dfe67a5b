import numpy as np

from errors import NumericalError

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


def check_finite(array: np.ndarray, node: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values produced by {node}", node=node)
    return array


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=TRAIN_DTYPE) -> np.ndarray:
    """He fan-in initialisation for layers followed by ReLU"""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)
