"""
Layer set of the residual CNN.

Every node computes in the dtype of its input (float32 for training, float64
for gradient checks), uses N,C,H,W row-major layout for feature maps and keeps
whatever its backward pass needs in the cache it pushes on the tape.
"""
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine.arrays import TRAIN_DTYPE, check_finite, he_normal
from engine.tape import Tape
from errors import ConfigurationError
from models import Phase


def _phase(phase) -> Phase:
    return phase if isinstance(phase, Phase) else Phase(phase)


class LayerNode:
    kind = "node"

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.hyper: Dict[str, object] = {}

    # subclasses implement these two
    def _forward(self, x, phase: Phase):
        raise NotImplementedError

    def _backward(self, grad_out, cache):
        raise NotImplementedError

    def forward(self, x, phase=Phase.EVAL, tape: Optional[Tape] = None):
        out, cache = self._forward(x, _phase(phase))
        check_finite(out, self.name)
        if tape is not None:
            tape.push(self, cache)
        return out

    def backward(self, grad_out, tape: Tape):
        cache = tape.pop(self)
        return self._backward(grad_out, cache)

    def kink_state(self, cache):
        return None

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        return list(self.params.items())

    def reset_parameters(self, rng: np.random.Generator) -> None:
        pass

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for key in store:
                store[key] = store[key].astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def layer_forward(node: LayerNode, x, phase=Phase.EVAL, tape: Optional[Tape] = None):
    return node.forward(x, phase, tape)


def layer_backward(node: LayerNode, grad_out, tape: Tape):
    return node.backward(grad_out, tape)


def _expect_rank(node: LayerNode, x: np.ndarray, rank: int) -> None:
    if x.ndim != rank:
        raise ConfigurationError(
            f"{node.name}: expected a rank-{rank} input, got shape {x.shape}", field=node.name
        )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*k*k, out_h*out_w), channel-major like the kernel"""
    xp = np.ascontiguousarray(xp)
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kernel, kernel, out_h, out_w),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(n, c * kernel * kernel, out_h * out_w)


def col2im(cols: np.ndarray, padded_shape, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Scatter-add columns back onto the padded input grid"""
    n, c = padded_shape[:2]
    cols = cols.reshape(n, c, kernel, kernel, out_h, out_w)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[:, :, i, j]
    return out


class Conv2d(LayerNode):
    kind = "conv2d"

    def __init__(self, name, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 bias=True, dtype=TRAIN_DTYPE):
        super().__init__(name)
        if min(in_channels, out_channels, kernel_size, stride) <= 0:
            raise ConfigurationError(f"{name}: channels, kernel and stride must be positive", field=name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.hyper = {"kernel": kernel_size, "stride": stride, "padding": padding}
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def reset_parameters(self, rng):
        weight = self.params["weight"]
        fan_in = self.in_channels * self.hyper["kernel"] ** 2
        self.params["weight"] = he_normal(rng, weight.shape, fan_in, weight.dtype)
        if "bias" in self.params:
            self.params["bias"] = np.zeros_like(self.params["bias"])

    def _forward(self, x, phase):
        _expect_rank(self, x, 4)
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigurationError(
                f"{self.name}: expected {self.in_channels} input channels, got {c}", field=self.name
            )
        k, s, p = self.hyper["kernel"], self.hyper["stride"], self.hyper["padding"]
        out_h, out_w = conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)
        if out_h <= 0 or out_w <= 0:
            raise ConfigurationError(f"{self.name}: input {h}x{w} too small for kernel {k}", field=self.name)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = im2col(xp, k, s, out_h, out_w)
        weight = self.params["weight"].reshape(self.out_channels, -1)
        out = np.matmul(weight, cols).reshape(n, self.out_channels, out_h, out_w)
        if "bias" in self.params:
            out = out + self.params["bias"].reshape(1, -1, 1, 1)
        return out, (x.shape, xp.shape, cols)

    def _backward(self, grad_out, cache):
        in_shape, padded_shape, cols = cache
        n, _, out_h, out_w = grad_out.shape
        k, s, p = self.hyper["kernel"], self.hyper["stride"], self.hyper["padding"]
        weight = self.params["weight"].reshape(self.out_channels, -1)
        go = grad_out.reshape(n, self.out_channels, out_h * out_w)
        grad_weight = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.params["weight"].shape)
        grad_cols = np.matmul(weight.T, go)
        grad_padded = col2im(grad_cols, padded_shape, k, s, out_h, out_w)
        h, w = in_shape[2:]
        grad_in = grad_padded[:, :, p:p + h, p:p + w] if p else grad_padded
        grads = [grad_weight]
        if "bias" in self.params:
            grads.append(go.sum(axis=(0, 2)))
        return grad_in, grads


# ---------------------------------------------------------------------------
# normalisation and activations
# ---------------------------------------------------------------------------

class BatchNorm2d(LayerNode):
    kind = "batchnorm"

    def __init__(self, name, channels, eps=1e-5, momentum=0.1, dtype=TRAIN_DTYPE):
        super().__init__(name)
        self.channels = channels
        self.hyper = {"eps": eps, "momentum": momentum}
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def reset_parameters(self, rng):
        self.params["weight"] = np.ones_like(self.params["weight"])
        self.params["bias"] = np.zeros_like(self.params["bias"])

    def _forward(self, x, phase):
        _expect_rank(self, x, 4)
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"{self.name}: expected {self.channels} channels, got {x.shape[1]}", field=self.name
            )
        axes = (0, 2, 3)
        eps = self.hyper["eps"]
        if phase is Phase.TRAIN:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (count / (count - 1)) if count > 1 else var
            momentum = self.hyper["momentum"]
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = ((1 - momentum) * rm + momentum * mean).astype(rm.dtype)
            self.buffers["running_var"] = ((1 - momentum) * rv + momentum * unbiased).astype(rv.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        out = self.params["weight"].reshape(1, -1, 1, 1) * xhat + self.params["bias"].reshape(1, -1, 1, 1)
        return out, (phase, xhat, inv_std)

    def _backward(self, grad_out, cache):
        phase, xhat, inv_std = cache
        axes = (0, 2, 3)
        grad_bias = grad_out.sum(axis=axes)
        grad_weight = (grad_out * xhat).sum(axis=axes)
        dxhat = grad_out * self.params["weight"].reshape(1, -1, 1, 1)
        inv_std = inv_std.reshape(1, -1, 1, 1)
        if phase is Phase.TRAIN:
            count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
            grad_in = (inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_in = dxhat * inv_std
        return grad_in, [grad_weight, grad_bias]


class ReLU(LayerNode):
    kind = "relu"

    def _forward(self, x, phase):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def _backward(self, grad_out, mask):
        return np.where(mask, grad_out, 0).astype(grad_out.dtype, copy=False), []

    def kink_state(self, mask):
        return mask


class MaxPool2x2(LayerNode):
    """2x2 window, stride 2; odd trailing rows/cols are dropped"""

    kind = "maxpool2x2"

    def _forward(self, x, phase):
        _expect_rank(self, x, 4)
        n, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        if oh == 0 or ow == 0:
            raise ConfigurationError(f"{self.name}: input {h}x{w} too small to pool", field=self.name)
        windows = (
            x[:, :, :2 * oh, :2 * ow]
            .reshape(n, c, oh, 2, ow, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, oh, ow, 4)
        )
        winner = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
        return out, (x.shape, winner)

    def _backward(self, grad_out, cache):
        in_shape, winner = cache
        n, c, h, w = in_shape
        oh, ow = h // 2, w // 2
        grad_windows = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
        np.put_along_axis(grad_windows, winner[..., None], grad_out[..., None], axis=-1)
        grad_in = np.zeros(in_shape, dtype=grad_out.dtype)
        grad_in[:, :, :2 * oh, :2 * ow] = (
            grad_windows.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        )
        return grad_in, []

    def kink_state(self, cache):
        return cache[1].astype(np.uint8)


class GlobalAvgPool(LayerNode):
    kind = "global_avg_pool"

    def _forward(self, x, phase):
        _expect_rank(self, x, 4)
        return x.mean(axis=(2, 3)), x.shape

    def _backward(self, grad_out, in_shape):
        area = in_shape[2] * in_shape[3]
        grad = np.broadcast_to((grad_out / area)[:, :, None, None], in_shape)
        return np.ascontiguousarray(grad), []


class Dense(LayerNode):
    kind = "dense"

    def __init__(self, name, in_features, out_features, bias=True, dtype=TRAIN_DTYPE):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = np.zeros((out_features, in_features), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def reset_parameters(self, rng):
        weight = self.params["weight"]
        self.params["weight"] = he_normal(rng, weight.shape, self.in_features, weight.dtype)
        if "bias" in self.params:
            self.params["bias"] = np.zeros_like(self.params["bias"])

    def _forward(self, x, phase):
        _expect_rank(self, x, 2)
        if x.shape[1] != self.in_features:
            raise ConfigurationError(
                f"{self.name}: expected {self.in_features} features, got {x.shape[1]}", field=self.name
            )
        out = x @ self.params["weight"].T
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out, x

    def _backward(self, grad_out, x):
        grads = [grad_out.T @ x]
        if "bias" in self.params:
            grads.append(grad_out.sum(axis=0))
        return grad_out @ self.params["weight"], grads


class ResidualAdd(LayerNode):
    """Input is the pair (main, shortcut); backward hands g to both branches"""

    kind = "residual_add"

    def _forward(self, pair, phase):
        main, shortcut = pair
        if main.shape != shortcut.shape:
            raise ConfigurationError(
                f"{self.name}: branch shapes differ {main.shape} vs {shortcut.shape}", field=self.name
            )
        return main + shortcut, None

    def _backward(self, grad_out, cache):
        return (grad_out, grad_out), []


class Dropout(LayerNode):
    """Inverted dropout. Identity in eval phase unless forced active (MC-dropout)"""

    kind = "dropout"

    def __init__(self, name, rate=0.0, rng: Optional[np.random.Generator] = None):
        super().__init__(name)
        self.hyper = {"rate": self._checked(rate)}
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.forced_rate: Optional[float] = None

    @staticmethod
    def _checked(rate: float) -> float:
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}", field="rate")
        return float(rate)

    def force(self, rate: Optional[float], rng: Optional[np.random.Generator] = None) -> None:
        self.forced_rate = None if rate is None else self._checked(rate)
        if rng is not None:
            self.rng = rng

    def _forward(self, x, phase):
        rate = self.hyper["rate"] if phase is Phase.TRAIN else 0.0
        if self.forced_rate is not None:
            rate = self.forced_rate
        if rate == 0.0:
            return x, None
        keep = self.rng.random(x.shape) >= rate
        scale = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
        return x * scale, scale

    def _backward(self, grad_out, scale):
        if scale is None:
            return grad_out, []
        return grad_out * scale, []


class Sequential:
    """Ordered chain of single-input nodes, usable wherever a model fragment is expected"""

    def __init__(self, nodes: List[LayerNode]):
        self.nodes = list(nodes)

    def forward(self, x, phase=Phase.EVAL, tape: Optional[Tape] = None):
        for node in self.nodes:
            x = layer_forward(node, x, phase, tape)
        return x

    def backward(self, grad_out, tape: Tape):
        grads_per_node = []
        for node in reversed(self.nodes):
            grad_out, grads = layer_backward(node, grad_out, tape)
            grads_per_node.append(grads)
        flat = [g for grads in reversed(grads_per_node) for g in grads]
        return grad_out, flat

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{node.name}.{key}", value) for node in self.nodes for key, value in node.parameters()]

    def astype(self, dtype) -> "Sequential":
        for node in self.nodes:
            node.astype(dtype)
        return self
