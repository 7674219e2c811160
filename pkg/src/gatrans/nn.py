"""Small layer library on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .glam import GlamParams
from .tensor import Tensor


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + name, val
            elif isinstance(val, GlamParams):
                for sub, t in val.parameters():
                    yield f"{prefix}{name}.{sub}", t
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    @property
    def param_count(self):
        return sum(t.size for t in self.parameters())


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.w = Tensor(kaiming_uniform(rng, (out_dim, in_dim), in_dim, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return x @ self.w.transpose(1, 0) + self.b


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.w = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.w = Tensor(kaiming_uniform(rng, (in_ch, out_ch, kernel, kernel), fan_in, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride

    def __call__(self, x):
        return T.conv_transpose2d(x, self.w, self.b, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)
