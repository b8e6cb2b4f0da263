from typing import Dict

import numpy as np

from src.lib.errors import ConfigError, DimensionError

OPTIMIZERS = ("sgd", "adagrad")


class Optimizer:
    """
    SGD or Adagrad over named parameter arrays, updated in place.

    Adagrad keeps one accumulator per parameter name:
        acc += g^2
        p   -= lr * g / sqrt(acc + eps)
    """

    def __init__(self, kind: str = "adagrad", lr: float = 0.05, eps: float = 1e-10):
        if kind not in OPTIMIZERS:
            raise ConfigError("optimizer.kind", f"expected one of {OPTIMIZERS}, got '{kind}'")
        if lr < 0:
            raise ConfigError("optimizer.lr", "learning rate must be >= 0")
        self.kind = kind
        self.lr = lr
        self.eps = eps
        self.accumulators: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        for name, grad in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter '{name}'")
            param = params[name]
            if grad.shape != param.shape:
                raise DimensionError(name, param.shape, grad.shape)
            if self.kind == "sgd":
                param -= self.lr * grad
            else:
                acc = self.accumulators.get(name)
                if acc is None:
                    acc = np.zeros_like(param)
                    self.accumulators[name] = acc
                acc += grad * grad
                param -= self.lr * grad / np.sqrt(acc + self.eps)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: acc.copy() for name, acc in self.accumulators.items()}


def optimizer_step(opt: Optimizer, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
    opt.step(params, grads)
    return params
