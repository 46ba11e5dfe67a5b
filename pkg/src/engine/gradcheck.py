"""
Central finite-difference oracle for analytic gradients.

A fragment is anything with forward(x, phase, tape), backward(grad, tape) and
parameters(): a single layer, a Sequential chain or a whole Model. Elements whose
perturbation flips a ReLU mask or a max-pool winner are skipped and counted.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from engine.arrays import CHECK_DTYPE
from engine.losses import batch_cross_entropy
from engine.tape import Tape
from models import Phase

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

STEP = 1e-5
ERROR_FLOOR = 1e-6


@dataclass
class GroupResult:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0


@dataclass
class GradCheckReport:
    groups: Dict[str, GroupResult] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((g.max_rel_error for g in self.groups.values()), default=0.0)

    @property
    def skipped(self) -> int:
        return sum(g.skipped for g in self.groups.values())

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def projection_loss(shape, seed: int = 0) -> LossFn:
    """loss = sum(out * R) for a fixed random R; d loss / d out = R"""
    weights = np.random.default_rng(seed).standard_normal(shape)

    def loss(out):
        return float(np.sum(out * weights)), weights.astype(out.dtype)
    return loss


def cross_entropy_objective(targets, subsets) -> LossFn:
    def loss(out):
        return batch_cross_entropy(out, targets, subsets)
    return loss


def grad_check(fragment, x: np.ndarray, loss_fn: LossFn, phase=Phase.TRAIN, step: float = STEP,
               max_checks: int = 32, seed: int = 0, check_input: bool = True) -> GradCheckReport:
    """Compare analytic gradients with central differences, per parameter group.

    The fragment must already hold float64 parameters (see Model.astype).
    """
    x = np.array(x, dtype=CHECK_DTYPE)
    rng = np.random.default_rng(seed)

    def evaluate() -> Tuple[float, str]:
        tape = Tape()
        out = fragment.forward(x, phase, tape)
        loss, _ = loss_fn(out)
        return loss, tape.kink_signature()

    tape = Tape()
    out = fragment.forward(x, phase, tape)
    _, grad_out = loss_fn(out)
    signature = tape.kink_signature()
    grad_in, param_grads = fragment.backward(grad_out, tape)

    groups = [(name, array, grad) for (name, array), grad in zip(fragment.parameters(), param_grads)]
    if check_input:
        groups.append(("input", x, grad_in))

    report = GradCheckReport()
    for name, array, analytic in groups:
        result = GroupResult()
        flat = array.reshape(-1)
        count = min(flat.size, max_checks)
        for index in np.sort(rng.choice(flat.size, size=count, replace=False)):
            original = flat[index]
            flat[index] = original + step
            plus, plus_sig = evaluate()
            flat[index] = original - step
            minus, minus_sig = evaluate()
            flat[index] = original
            if plus_sig != signature or minus_sig != signature:
                result.skipped += 1
                continue
            numeric = (plus - minus) / (2 * step)
            result.checked += 1
            result.max_rel_error = max(
                result.max_rel_error, relative_error(float(analytic.reshape(-1)[index]), numeric)
            )
        report.groups[name] = result
    return report
