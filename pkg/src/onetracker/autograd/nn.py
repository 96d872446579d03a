"""Parameter containers and the handful of layers the tracker is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor. ``frozen`` parameters never receive gradients."""

    def __init__(self, data, dtype=None, name: str | None = None):
        super().__init__(np.array(data, dtype=dtype or np.float64), requires_grad=True)
        self.name = name

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.requires_grad = not value
        if value:
            self.grad = None


class Module:
    """Attribute-walking parameter registry (modules, parameters, lists of modules)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) in seen:
                continue
            seen.add(id(p))
            p.name = name
            yield name, p

    def _walk(self, prefix):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in params:
                continue
            p = params[name]
            if p.shape != tuple(arr.shape):
                raise ValueError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = np.array(arr, dtype=p.data.dtype)

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float64):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """Row-token affine map ``y = x @ weight + bias`` with weight stored (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False, dtype=np.float64):
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            w = np.zeros((in_features, out_features), dtype=dtype)
        else:
            w = xavier_uniform(rng, in_features, out_features, (in_features, out_features), dtype)
        self.weight = Parameter(w, dtype=dtype)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float64):
        self.weight = Parameter(np.ones(dim, dtype=dtype), dtype=dtype)
        self.bias = Parameter(np.zeros(dim, dtype=dtype), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 padding: int = 0, stride: int = 1, dtype=np.float64):
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        self.weight = Parameter(xavier_uniform(rng, fan_in, fan_out, (out_ch, in_ch, kernel, kernel), dtype),
                                dtype=dtype)
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype), dtype=dtype)
        self.padding = padding
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
