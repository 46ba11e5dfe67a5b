import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    LayerNode,
    MaxPool2x2,
    ReLU,
    ResidualAdd,
    Sequential,
    conv_output_size,
)
from engine.tape import Tape
from errors import ConfigurationError
from models import ArchitectureSpec, Phase
from name_matching import closest_name

logger = logging.getLogger(__name__)

PRESETS: Dict[str, Dict] = {
    "desk": {
        "input_size": 56,
        "stem_kernel": 3,
        "stem_stride": 1,
        "stem_channels": 16,
        "stem_pool": False,
        "stages": [
            {"blocks": 2, "width": 16, "downsample": False},
            {"blocks": 2, "width": 32, "downsample": True},
            {"blocks": 2, "width": 64, "downsample": True},
        ],
    },
    "paper18": {
        "input_size": 224,
        "stem_kernel": 7,
        "stem_stride": 2,
        "stem_channels": 64,
        "stem_pool": True,
        "stages": [
            {"blocks": 2, "width": 64, "downsample": False},
            {"blocks": 2, "width": 128, "downsample": True},
            {"blocks": 2, "width": 256, "downsample": True},
            {"blocks": 2, "width": 512, "downsample": True},
        ],
    },
}


def preset_spec(name: str, **overrides) -> ArchitectureSpec:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown architecture preset '{name}'", field="architecture",
            suggestion=closest_name(name, PRESETS),
        )
    values = {"preset": name, **PRESETS[name], **overrides}
    return ArchitectureSpec(**values)


def final_spatial_size(spec: ArchitectureSpec) -> int:
    size = conv_output_size(spec.input_size, spec.stem_kernel, spec.stem_stride, spec.stem_kernel // 2)
    if spec.stem_pool:
        size //= 2
    for stage in spec.stages:
        if stage.downsample:
            size = conv_output_size(size, 3, 2, 1)
    return size


def validate_spec(spec: ArchitectureSpec) -> None:
    if spec.in_channels not in (1, 2):
        raise ConfigurationError(f"in_channels must be 1 or 2, got {spec.in_channels}", field="in_channels")
    if not spec.stages:
        raise ConfigurationError("architecture needs at least one stage", field="stages")
    if spec.num_network_classes <= 0:
        raise ConfigurationError("num_network_classes must be positive", field="num_network_classes")
    for i, stage in enumerate(spec.stages):
        if stage.width <= 0 or stage.blocks <= 0:
            raise ConfigurationError(f"stage {i}: blocks and width must be positive", field=f"stages.{i}")
    if spec.stem_channels <= 0 or spec.stem_kernel <= 0 or spec.stem_stride <= 0:
        raise ConfigurationError("stem kernel, stride and channels must be positive", field="stem")
    if final_spatial_size(spec) <= 0:
        raise ConfigurationError(f"input size {spec.input_size} vanishes before the pool", field="input_size")


class ResidualBlock:
    """Two 3x3 conv+BN pairs with an identity or 1x1 conv+BN shortcut"""

    def __init__(self, name: str, in_channels: int, out_channels: int, stride: int, eps: float, momentum: float):
        self.name = name
        self.conv1 = Conv2d(f"{name}.conv1", in_channels, out_channels, 3, stride, 1, bias=False)
        self.bn1 = BatchNorm2d(f"{name}.bn1", out_channels, eps, momentum)
        self.relu1 = ReLU(f"{name}.relu1")
        self.conv2 = Conv2d(f"{name}.conv2", out_channels, out_channels, 3, 1, 1, bias=False)
        self.bn2 = BatchNorm2d(f"{name}.bn2", out_channels, eps, momentum)
        self.shortcut: Optional[Tuple[Conv2d, BatchNorm2d]] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = (
                Conv2d(f"{name}.shortcut.conv", in_channels, out_channels, 1, stride, 0, bias=False),
                BatchNorm2d(f"{name}.shortcut.bn", out_channels, eps, momentum),
            )
        self.add = ResidualAdd(f"{name}.add")
        self.relu2 = ReLU(f"{name}.relu2")

    def nodes(self) -> List[LayerNode]:
        extra = list(self.shortcut) if self.shortcut else []
        return [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2, *extra, self.add, self.relu2]

    def forward(self, x, phase, tape: Optional[Tape] = None):
        out = self.conv1.forward(x, phase, tape)
        out = self.bn1.forward(out, phase, tape)
        out = self.relu1.forward(out, phase, tape)
        out = self.conv2.forward(out, phase, tape)
        out = self.bn2.forward(out, phase, tape)
        skip = x
        if self.shortcut:
            conv, bn = self.shortcut
            skip = bn.forward(conv.forward(x, phase, tape), phase, tape)
        out = self.add.forward((out, skip), phase, tape)
        return self.relu2.forward(out, phase, tape)

    def backward(self, grad, tape: Tape, collected: Dict[str, list]):
        grad, _ = self.relu2.backward(grad, tape)
        (grad_main, grad_skip), _ = self.add.backward(grad, tape)
        if self.shortcut:
            conv, bn = self.shortcut
            grad_skip, collected[bn.name] = bn.backward(grad_skip, tape)
            grad_skip, collected[conv.name] = conv.backward(grad_skip, tape)
        for node in (self.bn2, self.conv2, self.relu1, self.bn1, self.conv1):
            grad_main, collected[node.name] = node.backward(grad_main, tape)
        return grad_main + grad_skip


class Model:
    """Residual CNN: stem, residual stages, global average pool, dropout, dense"""

    def __init__(self, spec: ArchitectureSpec):
        validate_spec(spec)
        self.spec = spec
        self.metadata: Dict[str, object] = {}
        eps, momentum = spec.bn_eps, spec.bn_momentum
        k = spec.stem_kernel
        stem = [
            Conv2d("stem.conv", spec.in_channels, spec.stem_channels, k, spec.stem_stride, k // 2, bias=False),
            BatchNorm2d("stem.bn", spec.stem_channels, eps, momentum),
            ReLU("stem.relu"),
        ]
        if spec.stem_pool:
            stem.append(MaxPool2x2("stem.pool"))
        self.stem = Sequential(stem)
        self.blocks: List[ResidualBlock] = []
        width = spec.stem_channels
        for s, stage in enumerate(spec.stages):
            for b in range(stage.blocks):
                stride = 2 if stage.downsample and b == 0 else 1
                self.blocks.append(ResidualBlock(f"stage{s + 1}.block{b + 1}", width, stage.width, stride, eps, momentum))
                width = stage.width
        self.pool = GlobalAvgPool("pool")
        self.dropout = Dropout("head.dropout", spec.head_dropout)
        self.fc = Dense("fc", width, spec.num_network_classes)
        self.feature_width = width

    def nodes(self) -> List[LayerNode]:
        nodes = list(self.stem.nodes)
        for block in self.blocks:
            nodes.extend(block.nodes())
        return nodes + [self.pool, self.dropout, self.fc]

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{node.name}.{key}", value) for node in self.nodes() for key, value in node.params.items()]

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters and running buffers in persistence order"""
        arrays = []
        for node in self.nodes():
            arrays.extend((f"{node.name}.{key}", value) for key, value in node.params.items())
            arrays.extend((f"{node.name}.{key}", value) for key, value in node.buffers.items())
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for node in self.nodes():
            for store in (node.params, node.buffers):
                for key, current in store.items():
                    name = f"{node.name}.{key}"
                    if name not in arrays:
                        raise ConfigurationError(f"missing array '{name}'", field=name)
                    value = np.asarray(arrays[name])
                    if value.shape != current.shape:
                        raise ConfigurationError(
                            f"array '{name}' has shape {value.shape}, expected {current.shape}", field=name
                        )
                    store[key] = value.astype(current.dtype).copy()

    def astype(self, dtype) -> "Model":
        for node in self.nodes():
            node.astype(dtype)
        return self

    def features(self, x: np.ndarray, phase=Phase.EVAL, tape: Optional[Tape] = None) -> np.ndarray:
        size = self.spec.input_size
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels or x.shape[2:] != (size, size):
            raise ConfigurationError(
                f"input batch shape {x.shape} does not match (N, {self.spec.in_channels}, {size}, {size})",
                field="input",
            )
        out = self.stem.forward(x, phase, tape)
        for block in self.blocks:
            out = block.forward(out, phase, tape)
        return self.pool.forward(out, phase, tape)

    def head(self, features: np.ndarray, phase=Phase.EVAL, tape: Optional[Tape] = None) -> np.ndarray:
        return self.fc.forward(self.dropout.forward(features, phase, tape), phase, tape)

    def forward(self, x: np.ndarray, phase=Phase.EVAL, tape: Optional[Tape] = None) -> np.ndarray:
        """Pre-softmax scores, shape (N, num_network_classes)"""
        return self.head(self.features(x, phase, tape), phase, tape)

    def backward(self, grad: np.ndarray, tape: Tape):
        collected: Dict[str, list] = {}
        for node in (self.fc, self.dropout, self.pool):
            grad, collected[node.name] = node.backward(grad, tape)
        for block in reversed(self.blocks):
            grad = block.backward(grad, tape, collected)
        for node in reversed(self.stem.nodes):
            grad, collected[node.name] = node.backward(grad, tape)
        flat = [g for node in self.nodes() for g in collected.get(node.name, [])]
        return grad, flat


def build_model(spec: ArchitectureSpec, seed: int) -> Model:
    """Deterministic He-initialised model for (spec, seed)"""
    model = Model(spec)
    init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    for node in model.nodes():
        node.reset_parameters(rng)
    model.dropout.rng = np.random.default_rng(dropout_seq)
    model.metadata["seed"] = seed
    logger.debug("built %s model with %d parameters", spec.preset, param_report(model).parameters)
    return model


@dataclass
class ParamReport:
    parameters: int
    buffers: int
    bytes: int
    layers: List[Tuple[str, str, int]] = field(default_factory=list)

    @property
    def megabytes(self) -> float:
        return self.bytes / 2 ** 20


def param_report(model) -> ParamReport:
    """Counts trainable parameters; bytes = 4 * (parameters + batchnorm running buffers)"""
    if isinstance(model, LayerNode):
        nodes = [model]
    elif isinstance(model, Sequential):
        nodes = model.nodes
    else:
        nodes = model.nodes()
    layers, params, buffers = [], 0, 0
    for node in nodes:
        count = sum(int(v.size) for v in node.params.values())
        params += count
        buffers += sum(int(v.size) for v in node.buffers.values())
        if count:
            layers.append((node.name, node.kind, count))
    return ParamReport(parameters=params, buffers=buffers, bytes=4 * (params + buffers), layers=layers)


def stage_structure(spec: ArchitectureSpec) -> List[int]:
    return [stage.blocks for stage in spec.stages]
