"""
Dense building blocks with explicit forward and backward passes.

All arrays are float64. Layers accept either a single vector ``(in,)`` or a
batch ``(S, in)`` and return the matching shape. Parameters are exposed as
named numpy arrays so optimizers and gradient checks can update them in
place.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.lib.errors import DimensionError
from src.lib.hashing import hash_ids

ACTIVATIONS = ("relu", "identity")


class Module:
    """Anything that owns named parameters."""

    def parameters(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def load_parameters(self, values: Dict[str, np.ndarray], strict: bool = True):
        params = self.parameters()
        for name, target in params.items():
            if name not in values:
                if strict:
                    raise KeyError(f"missing parameter '{name}'")
                continue
            source = np.asarray(values[name], dtype=np.float64)
            if source.shape != target.shape:
                raise DimensionError(name, target.shape, source.shape)
            target[...] = source

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))


def prefixed(prefix: str, params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{name}": value for name, value in params.items()}


class MacMeter:
    """Multiply-accumulates actually executed by matmuls while the meter is open."""

    def __init__(self):
        self.macs = 0

    def add(self, macs: int):
        self.macs += int(macs)


_open_meters: List[MacMeter] = []


@contextmanager
def metered():
    """
    Count the MACs of every Dense forward and dot product run inside the block.

    Meters nest; an inner block's work also counts toward the outer ones.
    """
    meter = MacMeter()
    _open_meters.append(meter)
    try:
        yield meter
    finally:
        _open_meters.remove(meter)


def record_macs(macs: int):
    for meter in _open_meters:
        meter.add(macs)


class Dense(Module):
    """Affine layer y = act(x W^T + b) with W of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: Optional[np.random.Generator] = None, name: str = "dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.name = name
        if rng is None:
            self.weight = np.zeros((out_dim, in_dim))
        else:
            # He init for relu, Glorot-style for identity
            scale = np.sqrt(2.0 / in_dim) if activation == "relu" else np.sqrt(1.0 / in_dim)
            self.weight = rng.normal(0.0, scale, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (activation output, pre-activation)."""
        if x.shape[-1] != self.in_dim:
            raise DimensionError(self.name, self.in_dim, x.shape[-1])
        pre = x @ self.weight.T + self.bias
        if _open_meters:
            record_macs((x.shape[0] if x.ndim == 2 else 1) * self.in_dim * self.out_dim)
        if self.activation == "relu":
            return np.maximum(pre, 0.0), pre
        return pre, pre

    def backward(self, x: np.ndarray, pre: np.ndarray, grad_out: np.ndarray):
        if self.activation == "relu":
            grad_out = grad_out * (pre > 0.0)
        grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        return grads, grad_out @ self.weight

    def macs(self) -> int:
        return self.in_dim * self.out_dim


@dataclass
class MLPCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


class MLP(Module):
    """
    Stack of Dense layers. Hidden layers use relu; the last layer uses
    ``final_activation``.

    Args:
        sizes: [in_dim, hidden..., out_dim]
        final_activation: activation of the output layer
        rng: Generator for initialisation (None gives all-zero weights)
        name: used in error messages
    """

    def __init__(self, sizes: Sequence[int], final_activation: str = "identity",
                 rng: Optional[np.random.Generator] = None, name: str = "mlp"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.name = name
        self.layers: List[Dense] = []
        for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            activation = final_activation if i == len(sizes) - 2 else "relu"
            self.layers.append(Dense(d_in, d_out, activation, rng, name=f"{name}.layer{i}"))

    @classmethod
    def from_layers(cls, layers: List[Dense], name: str = "mlp") -> "MLP":
        for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"{name}.layer{i + 1}", a.out_dim, b.in_dim)
        mlp = cls.__new__(cls)
        mlp.name = name
        mlp.layers = list(layers)
        return mlp

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            params.update(prefixed(str(i), layer.parameters()))
        return params

    def forward(self, x: np.ndarray, cache: Optional[MLPCache] = None) -> np.ndarray:
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if cache is not None:
            cache.squeeze = squeeze
        for layer in self.layers:
            if cache is not None:
                cache.inputs.append(h)
            h, pre = layer.forward(h)
            if cache is not None:
                cache.pre.append(pre)
        return h[0] if squeeze else h

    def backward(self, cache: MLPCache, grad_out: np.ndarray):
        """
        Backpropagate ``grad_out`` (dLoss/dOutput) through the cached pass.

        Returns:
            (dict of parameter gradients, gradient wrt the input)
        """
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if grad.shape[-1] != self.out_dim:
            raise DimensionError(f"{self.name}.output", self.out_dim, grad.shape[-1])
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads, grad = self.layers[i].backward(cache.inputs[i], cache.pre[i], grad)
            grads.update(prefixed(str(i), layer_grads))
        return grads, (grad[0] if cache.squeeze else grad)

    def macs(self) -> int:
        return sum(layer.macs() for layer in self.layers)


def mlp_forward(mlp: MLP, x: np.ndarray) -> np.ndarray:
    return mlp.forward(x)


def mlp_backward(mlp: MLP, x: np.ndarray, grad_out: np.ndarray):
    cache = MLPCache()
    mlp.forward(x, cache)
    return mlp.backward(cache, grad_out)


class EmbeddingTable(Module):
    """
    Hashed embedding table. Raw ids are hashed into ``rows`` buckets, so any
    id (including out-of-vocabulary ones) has a row.
    """

    def __init__(self, rows: int, dim: int, rng: Optional[np.random.Generator] = None,
                 name: str = "embedding"):
        self.rows = rows
        self.dim = dim
        self.name = name
        if rng is None:
            self.weight = np.zeros((rows, dim))
        else:
            self.weight = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(rows, dim))

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight}

    def bucket(self, ids) -> np.ndarray:
        return hash_ids(ids, self.rows)

    def lookup_sum(self, ids) -> np.ndarray:
        # sorted so the sum is bitwise independent of id order
        buckets = np.sort(self.bucket(ids))
        if buckets.size == 0:
            return np.zeros(self.dim)
        return self.weight[buckets].sum(axis=0)

    def counts(self, id_lists: Sequence[Sequence[int]]) -> np.ndarray:
        """Bag-of-buckets count matrix (S, rows) for a batch of id lists."""
        counts = np.zeros((len(id_lists), self.rows))
        for i, ids in enumerate(id_lists):
            if len(ids):
                np.add.at(counts[i], self.bucket(ids), 1.0)
        return counts

    def pool(self, counts: np.ndarray) -> np.ndarray:
        """Sum pooling for a batch given its count matrix."""
        if counts.shape[-1] != self.rows:
            raise DimensionError(self.name, self.rows, counts.shape[-1])
        return counts @ self.weight

    def pool_backward(self, counts: np.ndarray, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        return {"weight": counts.T @ grad_out}


def embedding_lookup_sum(table: EmbeddingTable, ids) -> np.ndarray:
    return table.lookup_sum(ids)
