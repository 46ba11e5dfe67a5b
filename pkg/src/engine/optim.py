import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import ConfigurationError


class SGD:
    """SGD with momentum and L2 weight decay folded into the velocity.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v
    """

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {lr}", field="lr")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[int, np.ndarray] = {}

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ConfigurationError(f"{len(params)} params but {len(grads)} gradients", field="grads")
        for slot, (param, grad) in enumerate(zip(params, grads)):
            if param.shape != grad.shape:
                raise ConfigurationError(
                    f"gradient {slot} has shape {grad.shape}, param has {param.shape}", field="grads"
                )
            v = self.velocity.get(slot)
            if v is None:
                v = np.zeros_like(param)
                self.velocity[slot] = v
            dtype = param.dtype.type
            v *= dtype(self.momentum)
            v += grad
            if self.weight_decay:
                v += dtype(self.weight_decay) * param
            param -= dtype(self.lr) * v


def sgd_step(params: List[np.ndarray], grads: List[np.ndarray], lr: float, momentum: float,
             weight_decay: float, state: Optional[SGD] = None) -> SGD:
    """Functional form of one update; pass the returned state back in for the next step"""
    if state is None:
        state = SGD(lr, momentum, weight_decay)
    elif lr <= 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}", field="lr")
    state.lr = lr
    state.step(params, grads)
    return state


class StepDecay:
    """lr * gamma ** (epoch // step_size)"""

    def __init__(self, base_lr: float, epochs: int, step_size: Optional[int] = None, gamma: float = 0.1):
        self.base_lr = base_lr
        self.step_size = step_size or max(1, math.ceil(epochs / 3))
        self.gamma = gamma

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.gamma ** (epoch // self.step_size)
