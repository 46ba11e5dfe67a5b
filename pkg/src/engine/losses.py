from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, UsageError


def _subset(size: int, subset: Optional[Sequence[int]]) -> np.ndarray:
    if subset is None:
        return np.arange(size)
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size == 0:
        raise ConfigurationError("softmax over an empty index subset", field="subset")
    return idx


def softmax(logits: np.ndarray, subset: Optional[Sequence[int]] = None) -> np.ndarray:
    """Softmax over `subset` of the last axis; the result has len(subset) entries"""
    logits = np.asarray(logits)
    idx = _subset(logits.shape[-1], subset)
    z = logits[..., idx]
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, target: int, subset: Optional[Sequence[int]] = None) -> Tuple[float, np.ndarray]:
    """Cross-entropy of one logit vector against `target`, restricted to `subset`.

    The returned gradient spans the full vector and is exactly 0.0 outside the subset.
    """
    logits = np.asarray(logits)
    idx = _subset(logits.shape[-1], subset)
    hits = np.flatnonzero(idx == target)
    if hits.size == 0:
        raise UsageError(f"target {target} is not in the loss subset {idx.tolist()}", field="target")
    probs = softmax(logits, idx)
    loss = -float(np.log(probs[hits[0]]))
    grad = np.zeros_like(logits)
    local = probs.copy()
    local[hits[0]] -= 1.0
    grad[idx] = local
    return loss, grad


def batch_cross_entropy(logits: np.ndarray, targets: Sequence[int],
                        subsets: Sequence[Sequence[int]]) -> Tuple[float, np.ndarray]:
    """Mean masked cross-entropy over a batch; gradient already divided by N"""
    n = logits.shape[0]
    if n == 0:
        raise ConfigurationError("empty batch", field="batch")
    grad = np.zeros_like(logits)
    total = 0.0
    groups: Dict[Tuple[int, ...], list] = {}
    for row, subset in enumerate(subsets):
        groups.setdefault(tuple(int(i) for i in subset), []).append(row)
    targets = np.asarray(targets, dtype=np.int64)
    for subset, rows in groups.items():
        idx = _subset(logits.shape[1], subset)
        rows = np.asarray(rows)
        position = {int(c): k for k, c in enumerate(idx)}
        local_target = np.array([position.get(int(t), -1) for t in targets[rows]], dtype=np.int64)
        if (local_target < 0).any():
            row = int(rows[np.flatnonzero(local_target < 0)[0]])
            raise UsageError(
                f"sample {row}: target {int(targets[row])} is not in the loss subset {list(subset)}",
                field="target",
            )
        probs = softmax(logits[rows], idx)
        picked = probs[np.arange(rows.size), local_target]
        total += float(-np.log(picked).sum())
        probs[np.arange(rows.size), local_target] -= 1.0
        grad[np.ix_(rows, idx)] = probs / logits.dtype.type(n)
    return total / n, grad
