"""Parameter containers and the dense layer shared by all networks."""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


def glorot(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape, dtype=T.default_dtype())


class Module:
    """Flat parameter registry with named children, enough for checkpoints."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def param(self, name: str, array: np.ndarray) -> Tensor:
        p = Tensor(array, requires_grad=True, name=name)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[f"{prefix}{name}"] = p
        for cname, child in self._children.items():
            out.update(child.named_params(f"{prefix}{cname}."))
        return out

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_params(prefix).items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            src = arrays[name]
            if tuple(src.shape) != tuple(p.data.shape):
                raise ValueError(f"{name}: shape {src.shape} != expected {p.data.shape}")
            p.data = src.astype(p.data.dtype)


@contextlib.contextmanager
def frozen(*modules: Module):
    """Disable gradient tracking for the given modules' parameters.

    Ops record grad requirements at graph build time, so any forward pass
    inside this context treats the parameters as constants.
    """
    params = [p for m in modules for p in m.params()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


class Dense(Module):
    def __init__(self, rng: Rng, in_dim: int, out_dim: int, activation=None, name: str = "dense"):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.w = self.param("w", glorot(rng, (in_dim, out_dim), in_dim, out_dim))
        self.b = self.param("b", np.zeros(out_dim, dtype=T.default_dtype()))
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w) + self.b
        if self.activation is not None:
            out = self.activation(out)
        return out


class MLP(Module):
    """Stack of tanh hidden layers with a linear head."""

    def __init__(self, rng: Rng, in_dim: int, hidden: int, out_dim: int, depth: int = 2):
        super().__init__()
        self.layers: list[Dense] = []
        d = in_dim
        for i in range(depth):
            layer = Dense(rng.child(f"h{i}"), d, hidden, activation=T.tanh)
            self.add_module(f"h{i}", layer)
            self.layers.append(layer)
            d = hidden
        self.out = self.add_module("out", Dense(rng.child("out"), d, out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.out(x)
