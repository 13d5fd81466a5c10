"""Stateful layer wrappers: each caches what its backward pass needs."""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from . import functional as F
from .optim import glorot_init


class Layer:
    name: str = ""
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray, training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv1D(Layer):
    """Time-axis convolution over ``(..., L, Cin)``.

    Fed ``(B, D, L, Cin)`` it is the cross-data-type convolution: the same
    kernel scans every data-type row. Fed ``(B, L, D)`` it is a regular 1-D
    convolution with the data types as input channels.
    """

    def __init__(self, width: int, cin: int, cout: int, rng: np.random.Generator, name: str = "conv"):
        super().__init__()
        if width < 1:
            raise ValueError("kernel width must be >= 1")
        self.name = name
        self.params = {"w": glorot_init((width, cin, cout), rng), "b": np.zeros(cout)}

    def forward(self, x, training=False, rng=None):
        F.check_finite(x, self.name)
        self._x = x
        return F.conv1d_forward(x, self.params["w"], self.params["b"])

    def backward(self, dy):
        dx, dw, db = F.conv1d_backward(dy, self._x, self.params["w"])
        self.grads = {"w": dw, "b": db}
        return dx


class MaxPool1D(Layer):
    def __init__(self, window: int, name: str = "pool"):
        super().__init__()
        self.name = name
        self.window = window

    def forward(self, x, training=False, rng=None):
        self._len = x.shape[-2]
        y, self._arg = F.maxpool1d_forward(x, self.window)
        return y

    def backward(self, dy):
        return F.maxpool1d_backward(dy, self._arg, self.window, self._len)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "fc"):
        super().__init__()
        self.name = name
        self.params = {"w": glorot_init((n_in, n_out), rng), "b": np.zeros(n_out)}

    def forward(self, x, training=False, rng=None):
        F.check_finite(x, self.name)
        self._x = x
        return F.dense_forward(x, self.params["w"], self.params["b"])

    def backward(self, dy):
        dx, dw, db = F.dense_backward(dy, self._x, self.params["w"])
        self.grads = {"w": dw, "b": db}
        return dx


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training=False, rng=None):
        self._x = x
        return F.relu(x)

    def backward(self, dy):
        return F.relu_backward(dy, self._x)


class Dropout(Layer):
    name = "dropout"

    def __init__(self, keep_prob: float):
        super().__init__()
        self.keep_prob = keep_prob

    def forward(self, x, training=False, rng=None):
        y, self._mask = F.dropout(x, self.keep_prob, rng, training)
        return y

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Reshape(Layer):
    name = "reshape"

    def __init__(self, fn, name: str = "reshape"):
        super().__init__()
        self.fn = fn
        self.name = name

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return self.fn(x)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Sequential:
    def __init__(self, layers: List[Layer]):
        self.layers = layers
        for i, layer in enumerate(layers):
            if layer.params:
                layer.name = f"{i:02d}_{layer.name}"

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {f"{l.name}.{k}": l.grads[k] for l in self.layers for k in l.params}

    def load(self, params: Dict[str, np.ndarray]) -> None:
        for l in self.layers:
            for k in l.params:
                key = f"{l.name}.{k}"
                if params[key].shape != l.params[k].shape:
                    raise ValueError(f"{key}: shape {params[key].shape} != {l.params[k].shape}")
                l.params[k][...] = params[key]


class Transpose(Layer):
    name = "transpose"

    def __init__(self, axes):
        super().__init__()
        self.axes = tuple(axes)
        self.inverse = tuple(np.argsort(self.axes))

    def forward(self, x, training=False, rng=None):
        return np.transpose(x, self.axes)

    def backward(self, dy):
        return np.transpose(dy, self.inverse)
