"""Parameter containers, basic layers and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class: tracks Tensor parameters and sub-modules by attribute.

    Attribute assignment order fixes parameter iteration order, which in
    turn fixes optimizer update order and checkpoint layout.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        """This module plus every nested sub-module, depth first."""
        yield self
        for value in vars(self).values():
            stack = [value]
            while stack:
                item = stack.pop()
                if isinstance(item, Module):
                    yield from item.modules()
                elif isinstance(item, (list, tuple)):
                    stack.extend(reversed(item))

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(p.data.dtype).copy()

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())


def _walk(name: str, value):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    """Convolution layer; an optional fixed 0/1 tap mask enforces causality."""

    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, pad=0, mask=None, dtype=np.float32):
        self.stride = stride
        self.pad = pad
        self.mask = None if mask is None else np.asarray(mask, dtype=dtype)
        fan_in = in_ch * kernel * kernel
        self.weight = parameter(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = parameter(np.zeros(out_ch, dtype=dtype))

    def __call__(self, x):
        mask = self.mask
        if mask is not None and mask.dtype != self.weight.dtype:
            mask = mask.astype(self.weight.data.dtype)
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.pad, mask)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True, scale=None, dtype=np.float32):
        std = np.sqrt(2.0 / d_in) if scale is None else scale
        self.weight = parameter((rng.standard_normal((d_in, d_out)) * std).astype(dtype))
        if bias:
            self.bias = parameter(np.zeros(d_out, dtype=dtype))

    def __call__(self, x):
        out = ad.matmul(x, self.weight)
        b = getattr(self, "bias", None)
        return ad.add(out, b) if b is not None else out


class Adam:
    """Adam with bias correction; update order follows parameter order."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.items = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}

    def zero_grad(self) -> None:
        for _, p in self.items:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.items:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
