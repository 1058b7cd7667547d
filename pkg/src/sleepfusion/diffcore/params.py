"""Named parameter collections and weight initializers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import InputError
from .tensor import Tensor


class Param:
    """One named trainable tensor. Frozen params keep their values fixed."""

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, tensor: Tensor, trainable: bool = True):
        self.name = name
        self.tensor = tensor
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Param({self.name}, shape={self.tensor.shape}{flag})"


class ParamGroup:
    """Insertion-ordered collection of uniquely named Params."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True) -> Param:
        if name in self._params:
            raise InputError(f"duplicate parameter name: {name}")
        p = Param(name, Tensor(np.asarray(array), requires_grad=True), trainable)
        self._params[name] = p
        return p

    def merge(self, other: "ParamGroup") -> None:
        for p in other:
            if p.name in self._params:
                raise InputError(f"duplicate parameter name: {p.name}")
            self._params[p.name] = p

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def subset(self, prefix: str) -> list[Param]:
        return [p for p in self._params.values() if p.name.startswith(prefix)]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.zero_grad()

    def freeze(self, prefixes: tuple[str, ...]) -> int:
        """Mark matching params untrainable; returns how many were frozen."""
        n = 0
        for p in self._params.values():
            if p.name.startswith(prefixes):
                p.trainable = False
                p.tensor.requires_grad = False
                p.tensor.grad = None
                n += 1
        return n

    def count(self) -> int:
        return sum(p.tensor.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data for p in self._params.values()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        from ..errors import StateError

        for p in self._params.values():
            if p.name not in arrays:
                if strict:
                    raise StateError(f"checkpoint is missing parameter {p.name}")
                continue
            src = arrays[p.name]
            if tuple(src.shape) != tuple(p.tensor.shape):
                raise StateError(
                    f"shape mismatch for {p.name}: checkpoint {src.shape} vs model {p.tensor.shape}"
                )
            p.tensor.data = src.astype(p.tensor.dtype, copy=True)


class Initializer:
    """Deterministic weight init driven by one seeded generator."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype

    def xavier(self, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
        shape = shape or (fan_in, fan_out)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def he_conv(self, c_out: int, c_in: int, k: int) -> np.ndarray:
        std = math.sqrt(2.0 / (c_in * k))
        return (self.rng.standard_normal((c_out, c_in, k)) * std).astype(self.dtype)

    def normal(self, shape, std: float = 0.02) -> np.ndarray:
        return (self.rng.standard_normal(shape) * std).astype(self.dtype)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)

    def ones(self, shape) -> np.ndarray:
        return np.ones(shape, dtype=self.dtype)
