"""
Finite-difference oracle over every layer kind and a whole model.

Each case builds a fresh float64 fragment from a seed, so a run over N seeds
covers N random configurations per layer kind.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from engine.arrays import CHECK_DTYPE
from engine.gradcheck import GradCheckReport, cross_entropy_objective, grad_check, projection_loss
from engine.layers import BatchNorm2d, Conv2d, Dense, Dropout, GlobalAvgPool, MaxPool2x2, ReLU, Sequential
from models import Phase
from network.resnet import ResidualBlock, build_model, preset_spec

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    case: str
    seed: int
    max_rel_error: float
    checked: int
    skipped: int
    passed: bool


class BlockFragment:
    """Adapts a ResidualBlock to the fragment protocol"""

    def __init__(self, block: ResidualBlock):
        self.block = block

    def forward(self, x, phase, tape=None):
        return self.block.forward(x, phase, tape)

    def backward(self, grad, tape):
        collected: Dict[str, list] = {}
        grad_in = self.block.backward(grad, tape, collected)
        return grad_in, [g for node in self.block.nodes() for g in collected.get(node.name, [])]

    def parameters(self):
        return [(f"{node.name}.{key}", value) for node in self.block.nodes() for key, value in node.params.items()]


class FixedMaskDropout:
    """Forced dropout that draws the same mask on every forward pass"""

    def __init__(self, node: Dropout, rate: float, mask_seed: int):
        self.node = node
        self.rate = rate
        self.mask_seed = mask_seed

    def forward(self, x, phase, tape=None):
        self.node.force(self.rate, np.random.default_rng(self.mask_seed))
        return self.node.forward(x, phase, tape)

    def backward(self, grad, tape):
        return self.node.backward(grad, tape)

    def parameters(self):
        return []


def _init(nodes, rng):
    for node in nodes:
        node.reset_parameters(rng)
        node.astype(CHECK_DTYPE)


def _conv_case(rng: np.random.Generator):
    kernel = int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3))
    conv = Conv2d("conv", int(rng.integers(1, 4)), int(rng.integers(1, 5)), kernel, stride,
                  int(rng.integers(0, kernel // 2 + 1)), bias=bool(rng.integers(0, 2)))
    _init([conv], rng)
    size = int(rng.integers(kernel + 1, kernel + 6))
    return conv, rng.standard_normal((2, conv.in_channels, size, size)), Phase.TRAIN


def _batchnorm_case(rng: np.random.Generator):
    channels = int(rng.integers(1, 5))
    bn = BatchNorm2d("bn", channels)
    _init([bn], rng)
    bn.params["weight"] = rng.uniform(0.5, 1.5, channels)
    bn.params["bias"] = rng.standard_normal(channels)
    phase = Phase.TRAIN if rng.integers(0, 2) else Phase.EVAL
    if phase is Phase.EVAL:
        bn.buffers["running_mean"] = rng.standard_normal(channels)
        bn.buffers["running_var"] = rng.uniform(0.5, 2.0, channels)
    return bn, rng.standard_normal((3, channels, 4, 4)), phase


def _relu_case(rng: np.random.Generator):
    return ReLU("relu"), rng.standard_normal((2, 3, 5, 5)), Phase.TRAIN


def _maxpool_case(rng: np.random.Generator):
    size = 2 * int(rng.integers(2, 5))
    return MaxPool2x2("pool"), rng.standard_normal((2, 2, size, size)), Phase.TRAIN


def _avgpool_case(rng: np.random.Generator):
    return GlobalAvgPool("gap"), rng.standard_normal((2, 3, 4, 4)), Phase.TRAIN


def _dense_case(rng: np.random.Generator):
    dense = Dense("dense", int(rng.integers(2, 9)), int(rng.integers(2, 7)), bias=bool(rng.integers(0, 2)))
    _init([dense], rng)
    return dense, rng.standard_normal((3, dense.in_features)), Phase.TRAIN


def _dropout_case(rng: np.random.Generator):
    fragment = FixedMaskDropout(Dropout("drop"), float(rng.uniform(0.1, 0.7)), int(rng.integers(0, 2**31)))
    return fragment, rng.standard_normal((3, int(rng.integers(2, 9)))), Phase.EVAL


def _block_case(rng: np.random.Generator):
    cin = int(rng.integers(1, 4))
    cout = int(rng.choice([cin, cin + 1]))
    block = ResidualBlock("block", cin, cout, int(rng.integers(1, 3)), 1e-5, 0.1)
    _init(block.nodes(), rng)
    return BlockFragment(block), rng.standard_normal((2, cin, 6, 6)), Phase.TRAIN


def _chain_case(rng: np.random.Generator):
    chain = Sequential([Conv2d("c", 2, 3, 3, 1, 1), BatchNorm2d("bn", 3), ReLU("r"), MaxPool2x2("p"),
                        GlobalAvgPool("g")])
    _init(chain.nodes, rng)
    return chain, rng.standard_normal((2, 2, 6, 6)), Phase.TRAIN


LAYER_CASES: Dict[str, Callable] = {
    "conv2d": _conv_case,
    "batchnorm": _batchnorm_case,
    "relu": _relu_case,
    "maxpool": _maxpool_case,
    "global_avg_pool": _avgpool_case,
    "dense": _dense_case,
    "dropout": _dropout_case,
    "residual_block": _block_case,
    "chain": _chain_case,
}


def _summarize(case: str, seed: int, report: GradCheckReport, tolerance: float) -> OracleResult:
    checked = sum(g.checked for g in report.groups.values())
    return OracleResult(case, seed, report.max_rel_error, checked, report.skipped, report.passed(tolerance))


def check_layer(case: str, seed: int, tolerance: float = 1e-4) -> OracleResult:
    rng = np.random.default_rng(seed)
    fragment, x, phase = LAYER_CASES[case](rng)
    out = fragment.forward(np.asarray(x, dtype=CHECK_DTYPE), phase)
    report = grad_check(fragment, x, projection_loss(out.shape, seed), phase=phase, seed=seed)
    return _summarize(case, seed, report, tolerance)


def check_model(seed: int, preset: str = "desk", overrides: Optional[dict] = None, batch: int = 2,
                max_checks: int = 4, tolerance: float = 1e-4) -> OracleResult:
    """Whole model under masked cross-entropy, every sample's loss on a random half of the units"""
    spec = preset_spec(preset, **(overrides or {}))
    model = build_model(spec, seed).astype(CHECK_DTYPE)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, spec.in_channels, spec.input_size, spec.input_size))
    units = spec.num_network_classes
    subsets: List[List[int]] = []
    for _ in range(batch):
        size = max(1, units // 2)
        subsets.append(sorted(int(i) for i in rng.choice(units, size=size, replace=False)))
    targets = [int(rng.choice(subset)) for subset in subsets]
    report = grad_check(model, x, cross_entropy_objective(targets, subsets), phase=Phase.TRAIN,
                        max_checks=max_checks, seed=seed)
    return _summarize(f"model:{preset}", seed, report, tolerance)


def run_oracle(seeds: int = 20, base_seed: int = 0, include_model: bool = True,
               model_overrides: Optional[dict] = None) -> List[OracleResult]:
    results = []
    for case in LAYER_CASES:
        for k in range(seeds):
            results.append(check_layer(case, base_seed + k))
    if include_model:
        results.append(check_model(base_seed, overrides=model_overrides))
    failed = [r for r in results if not r.passed]
    logger.info("gradient oracle: %d checks, %d failed", len(results), len(failed))
    return results


def summarize_by_case(results: List[OracleResult]) -> List[Tuple[str, float, int, int, bool]]:
    """(case, worst error, checked, skipped, all passed) per case"""
    rows = {}
    for r in results:
        worst, checked, skipped, ok = rows.get(r.case, (0.0, 0, 0, True))
        rows[r.case] = (max(worst, r.max_rel_error), checked + r.checked, skipped + r.skipped, ok and r.passed)
    return [(case, *values) for case, values in rows.items()]
