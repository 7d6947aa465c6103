"""Minimal module system: parameter discovery, buffers, train/eval, freezing."""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Parameter, Tensor


class Module:
    training: bool = True

    def __init__(self):
        self._buffers: Dict[str, np.ndarray] = {}
        self.training = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self, flag: bool = True) -> "Module":
        for p in self.parameters():
            p.frozen = flag
        return self

    def name_parameters(self, prefix: str = "") -> "Module":
        """Stamp each parameter with its dotted path (used as optimizer keys)."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in params.items():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {p.shape}")
            p.data[...] = src
        for name, buf in buffers.items():
            src = np.asarray(state[name])
            if src.shape != buf.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {buf.shape}")
            buf[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _he(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE,
                 init_std: Optional[float] = None):
        super().__init__()
        if init_std is None:
            w = _he(rng, (d_out, d_in), d_in, dtype)
        else:
            w = (rng.standard_normal((d_out, d_in)) * init_std).astype(dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator, stride=1, padding=0,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        kernel = ops._tuple(kernel, 3)
        fan_in = c_in * int(np.prod(kernel))
        self.weight = Parameter(_he(rng, (c_out, c_in) + kernel, fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = ops._tuple(stride, 3)
        self.padding = ops._tuple(padding, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator, stride=1, padding=0,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        kernel = ops._tuple(kernel, 2)
        fan_in = c_in * int(np.prod(kernel))
        self.weight = Parameter(_he(rng, (c_out, c_in) + kernel, fan_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = ops._tuple(stride, 2)
        self.padding = ops._tuple(padding, 2)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Batch normalization over axis 1; running-stat momentum 0.1, eps 1e-5."""

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self._buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(
            x, self.gamma, self.beta, self._buffers["running_mean"], self._buffers["running_var"],
            self.training, self.momentum, self.eps,
        )


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return ops.dropout(x, self.rate, self.training, rng)
