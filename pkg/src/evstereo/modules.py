"""Lightweight layer containers: parameter registry, common layers, init."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import nn_ops
from .autograd import DEFAULT_DTYPE, Tensor


class Module:
    """Base container tracking parameters, buffers, and submodules by name."""

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, ModuleList):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        missing = (set(own_params) | set(own_buffers)) - set(state)
        extra = set(state) - (set(own_params) | set(own_buffers))
        if missing or extra:
            raise KeyError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = np.ascontiguousarray(arr)
        for name, buf in own_buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {buf.shape}")
            buf[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList:
    """Ordered list of submodules that participates in name walking."""

    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, module: Module):
        self._items.append(module)

    def train(self, mode: bool = True):
        for m in self._items:
            m.train(mode)

    def named_parameters(self, prefix: str = ""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")

    def named_buffers(self, prefix: str = ""):
        for i, m in enumerate(self._items):
            yield from m.named_buffers(f"{prefix}{i}.")


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=DEFAULT_DTYPE), requires_grad=True, op="param")


def kaiming_conv_weight(rng: np.random.Generator, out_ch: int, in_ch: int,
                        kh: int, kw: int) -> Tensor:
    fan_in = in_ch * kh * kw
    std = np.sqrt(2.0 / fan_in)
    return parameter(rng.normal(0.0, std, size=(out_ch, in_ch, kh, kw)))


class Conv2d(Module):
    def __init__(self, rng: Optional[np.random.Generator], in_ch: int, out_ch: int,
                 kernel: int = 3, stride: int = 1, padding: int = 0,
                 dilation: int = 1, bias: bool = True, zero_init: bool = False):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if zero_init or rng is None:
            self.weight = parameter(np.zeros((out_ch, in_ch, kh, kw)))
        else:
            self.weight = kaiming_conv_weight(rng, out_ch, in_ch, kh, kw)
        self.bias = parameter(np.zeros(out_ch)) if bias else None
        self.stride = stride
        self.padding = padding
        self.dilation = dilation

    def forward(self, x: Tensor) -> Tensor:
        return nn_ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                             padding=self.padding, dilation=self.dilation)

    __call__ = forward


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nn_ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                                  self.running_var, self.training,
                                  momentum=self.momentum, eps=self.eps)

    __call__ = forward


class DeformConv2d(Module):
    """Deformable conv whose offsets come from a zero-initialized predictor.

    At initialization the offsets are identically zero, so the layer behaves
    as a plain convolution until the offset predictor learns otherwise.
    """

    def __init__(self, rng: Optional[np.random.Generator], in_ch: int, out_ch: int,
                 kernel: int = 3, bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.offset_conv = Conv2d(None, in_ch, 2 * kernel * kernel,
                                  kernel=kernel, padding=kernel // 2,
                                  zero_init=True)
        if zero_init or rng is None:
            self.weight = parameter(np.zeros((out_ch, in_ch, kernel, kernel)))
        else:
            self.weight = kaiming_conv_weight(rng, out_ch, in_ch, kernel, kernel)
        self.bias = parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        offsets = self.offset_conv(x)
        return nn_ops.deform_conv2d(x, offsets, self.weight, self.bias)

    __call__ = forward


class ConvBNReLU(Module):
    def __init__(self, rng, in_ch, out_ch, kernel=3, stride=1, padding=1,
                 dilation=1):
        super().__init__()
        self.conv = Conv2d(rng, in_ch, out_ch, kernel=kernel, stride=stride,
                           padding=padding, dilation=dilation, bias=False)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        from .autograd import relu
        return relu(self.bn(self.conv(x)))

    __call__ = forward
