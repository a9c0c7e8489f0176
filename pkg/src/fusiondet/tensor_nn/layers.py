"""Stateful layer wrappers around the kernels in :mod:`ops`.

Parameters live in a flat ``{name: array}`` dict owned by the model, so a
layer only stores its parameter names and the forward cache.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "maxpool" | "relu" | "concat"
    kernel: int = 1
    out_channels: int = 1
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.out_channels < 1:
            raise ValueError(f"invalid layer spec {self}")


class Conv2d:
    def __init__(self, name, in_channels, spec: LayerSpec):
        self.name = name
        self.in_channels = in_channels
        self.spec = spec
        self.w_name = f"{name}.weight"
        self.b_name = f"{name}.bias"
        self.input_grad = True
        self._x = None
        self._cols = None

    @property
    def out_channels(self):
        return self.spec.out_channels

    def param_shapes(self):
        k = self.spec.kernel
        return {self.w_name: (self.spec.out_channels, self.in_channels, k, k),
                self.b_name: (self.spec.out_channels,)}

    @property
    def fan_in(self):
        return self.in_channels * self.spec.kernel ** 2

    def out_hw(self, h, w):
        s = self.spec
        return (ops.conv_output_size(h, s.kernel, s.stride, s.pad),
                ops.conv_output_size(w, s.kernel, s.stride, s.pad))

    def forward(self, x, params):
        self._x = x
        out, self._cols = ops.conv2d_forward(
            x, params[self.w_name], params[self.b_name], self.spec.stride, self.spec.pad, return_cols=True
        )
        return out

    def backward(self, g, params, grads):
        gx, gw, gb = ops.conv2d_backward(
            g, self._x, params[self.w_name], self.spec.stride, self.spec.pad,
            cols=self._cols, input_grad=self.input_grad,
        )
        grads[self.w_name] = grads.get(self.w_name, 0) + gw
        grads[self.b_name] = grads.get(self.b_name, 0) + gb
        return gx


class MaxPool2d:
    def __init__(self, name, spec: LayerSpec):
        self.name = name
        self.spec = spec
        self._cache = None

    def param_shapes(self):
        return {}

    def out_hw(self, h, w):
        k, s = self.spec.kernel, self.spec.stride
        return (h - k) // s + 1, (w - k) // s + 1

    def forward(self, x, params):
        out, arg = ops.maxpool_forward(x, self.spec.kernel, self.spec.stride)
        self._cache = (arg, x.shape)
        return out

    def backward(self, g, params, grads):
        arg, shape = self._cache
        return ops.maxpool_backward(g, arg, shape, self.spec.kernel, self.spec.stride)


class ReLU:
    spec = LayerSpec("relu")

    def __init__(self, name):
        self.name = name
        self._x = None

    def param_shapes(self):
        return {}

    def out_hw(self, h, w):
        return h, w

    def forward(self, x, params):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, g, params, grads):
        return ops.relu_backward(g, self._x)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def param_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def out_hw(self, h, w):
        for layer in self.layers:
            h, w = layer.out_hw(h, w)
        return h, w

    def forward(self, x, params):
        for layer in self.layers:
            x = layer.forward(x, params)
        return x

    def backward(self, g, params, grads):
        for layer in reversed(self.layers):
            g = layer.backward(g, params, grads)
        return g


def count_parameters(shapes) -> int:
    return int(sum(np.prod(s) for s in shapes.values()))
