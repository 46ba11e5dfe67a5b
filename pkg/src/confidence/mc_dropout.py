from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from engine.layers import Dense, Dropout
from errors import ConfigurationError
from models import Phase


@dataclass
class McMoments:
    """Per-sample, per-unit statistics over the dropout runs (float64)"""

    mean_presoftmax: np.ndarray
    var_presoftmax: np.ndarray
    mean_softmax: np.ndarray
    var_softmax: np.ndarray
    runs: int
    rate: float


def _group_softmax(logits: np.ndarray, groups: Optional[Sequence[Sequence[int]]]) -> np.ndarray:
    """Softmax of each row over its own group; zero elsewhere"""
    if groups is None:
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    probs = np.zeros_like(logits)
    for row, group in enumerate(groups):
        idx = np.asarray(group)
        z = logits[row, idx] - logits[row, idx].max()
        e = np.exp(z)
        probs[row, idx] = e / e.sum()
    return probs


def head_moments(features: np.ndarray, dense: Dense, rate: float, runs: int, seed,
                 groups: Optional[Sequence[Sequence[int]]] = None) -> McMoments:
    """Repeat dropout+dense over fixed features with dropout forced on; Welford accumulation.

    The dropout node is private to the call, so chunks may run on several threads.
    """
    if runs <= 0:
        raise ConfigurationError(f"runs must be positive, got {runs}", field="runs")
    dropout = Dropout("mc.dropout")
    dropout.force(rate, np.random.default_rng(seed))
    shape = (features.shape[0], dense.out_features)
    mean_z, m2_z = np.zeros(shape), np.zeros(shape)
    mean_p, m2_p = np.zeros(shape), np.zeros(shape)
    for run in range(1, runs + 1):
        logits = dense.forward(dropout.forward(features, Phase.EVAL), Phase.EVAL).astype(np.float64)
        probs = _group_softmax(logits, groups)
        for value, mean, m2 in ((logits, mean_z, m2_z), (probs, mean_p, m2_p)):
            delta = value - mean
            mean += delta / run
            m2 += delta * (value - mean)
    return McMoments(mean_z, m2_z / runs, mean_p, m2_p / runs, runs, rate)


def mc_dropout_infer(model, x: np.ndarray, rate: float = 0.5, runs: int = 100, seed: int = 0,
                     groups: Optional[Sequence[Sequence[int]]] = None) -> McMoments:
    """MC-dropout on the input units of the final dense layer; the backbone runs once"""
    features = model.features(x, Phase.EVAL)
    return head_moments(features, model.fc, rate, runs, seed, groups)
