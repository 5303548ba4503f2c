"""Layers with hand-written forward and backward passes.

Activations are laid out ``(batch, length, channels)`` for the sequence
layers and ``(batch, features)`` after flattening. Every layer caches what
its backward pass needs during ``forward`` and writes parameter gradients to
``self.grads`` in ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..rng import SplitMix64


class ShapeError(ValueError):
    """Input shape incompatible with a layer; the message names the layer."""


def out_length(length: int, kernel: int, stride: int) -> int:
    """Output length of a valid (unpadded) sliding window."""
    if kernel < 1 or stride < 1:
        raise ValueError(f"kernel and stride must be >= 1, got kernel={kernel}, stride={stride}")
    if length < kernel:
        raise ValueError(f"input length {length} shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (B, L, C) -> (B, L_out, C, kernel) strided view
    return sliding_window_view(x, kernel, axis=1)[:, ::stride]


def _scatter_windows(grad_cols: np.ndarray, length: int, kernel: int, stride: int) -> np.ndarray:
    # adjoint of _windows: grad_cols (B, L_out, C, kernel) -> (B, length, C)
    batch, n_out, channels, _ = grad_cols.shape
    grad_x = np.zeros((batch, length, channels), dtype=grad_cols.dtype)
    span = stride * (n_out - 1) + 1
    for j in range(kernel):
        grad_x[:, j : j + span : stride] += grad_cols[..., j]
    return grad_x


class Layer:
    name: str = "layer"
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self) -> None:
        self.params = {}
        self.grads = {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


class Conv1d(Layer):
    """Valid 1-D convolution with optional ReLU.

    ``out[b, t, k] = relu(sum_c sum_j W[k, c, j] * x[b, t*stride + j, c] + bias[k])``
    """

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: int,
        stride: int = 1,
        relu: bool = True,
        name: str = "conv",
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if min(in_channels, filters, kernel, stride) < 1:
            raise ValueError(f"{name}: channels, filters, kernel and stride must all be >= 1")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.relu = relu
        self.name = name
        self.params = {
            "W": np.zeros((filters, in_channels, kernel), dtype=dtype),
            "b": np.zeros(filters, dtype=dtype),
        }
        self._cache: tuple | None = None

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel

    def output_shape(self, shape):
        length, channels = shape
        if channels != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got {channels}")
        if length < self.kernel:
            raise ShapeError(f"{self.name}: input length {length} shorter than kernel {self.kernel}")
        return out_length(length, self.kernel, self.stride), self.filters

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected (batch, length, channels) input, got shape {x.shape}")
        self.output_shape(x.shape[1:])
        cols = _windows(x, self.kernel, self.stride)
        z = np.tensordot(cols, self.params["W"], axes=([2, 3], [1, 2])) + self.params["b"]
        out = np.maximum(z, 0) if self.relu else z
        self._cache = (x.shape, cols, out)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        x_shape, cols, out = self._cache
        if grad_out.shape != out.shape:
            raise ShapeError(f"{self.name}: gradient shape {grad_out.shape} does not match output {out.shape}")
        g = grad_out * (out > 0) if self.relu else grad_out
        self.grads = {
            "W": np.tensordot(g, cols, axes=([0, 1], [0, 1])),
            "b": g.sum(axis=(0, 1)),
        }
        grad_cols = np.tensordot(g, self.params["W"], axes=([2], [0]))
        return _scatter_windows(grad_cols, x_shape[1], self.kernel, self.stride)

    def describe(self):
        return {
            "type": "conv1d",
            "name": self.name,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel": self.kernel,
            "stride": self.stride,
            "relu": self.relu,
        }


class MaxPool1d(Layer):
    """Per-channel max over sliding windows; ties go to the lowest index."""

    def __init__(self, kernel: int, stride: int | None = None, name: str = "pool") -> None:
        super().__init__()
        stride = kernel if stride is None else stride
        if kernel < 1 or stride < 1:
            raise ValueError(f"{name}: kernel and stride must be >= 1")
        self.kernel = kernel
        self.stride = stride
        self.name = name
        self._cache: tuple | None = None

    def output_shape(self, shape):
        length, channels = shape
        if length < self.kernel:
            raise ShapeError(f"{self.name}: input length {length} shorter than window {self.kernel}")
        return out_length(length, self.kernel, self.stride), channels

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeError(f"{self.name}: expected (batch, length, channels) input, got shape {x.shape}")
        self.output_shape(x.shape[1:])
        cols = _windows(x, self.kernel, self.stride)
        # np.argmax returns the first maximum
        argmax = cols.argmax(axis=-1)
        out = np.take_along_axis(cols, argmax[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, argmax)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        x_shape, argmax = self._cache
        if grad_out.shape != argmax.shape:
            raise ShapeError(f"{self.name}: gradient shape {grad_out.shape} does not match output {argmax.shape}")
        grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
        n_out = argmax.shape[1]
        span = self.stride * (n_out - 1) + 1
        for j in range(self.kernel):
            grad_x[:, j : j + span : self.stride] += np.where(argmax == j, grad_out, 0)
        return grad_x

    def describe(self):
        return {"type": "maxpool1d", "name": self.name, "kernel": self.kernel, "stride": self.stride}


class Flatten(Layer):
    name = "flatten"

    def __init__(self, name: str = "flatten") -> None:
        super().__init__()
        self.name = name
        self._shape: tuple[int, ...] | None = None

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        if self._shape is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return grad_out.reshape(self._shape)

    def describe(self):
        return {"type": "flatten", "name": self.name}


class Dense(Layer):
    """Affine map ``x @ W.T + b`` with optional ReLU; ``W`` is (out, in)."""

    def __init__(
        self, in_features: int, out_features: int, relu: bool = False, name: str = "dense", dtype=np.float32
    ) -> None:
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ValueError(f"{name}: feature counts must be >= 1")
        self.in_features = in_features
        self.out_features = out_features
        self.relu = relu
        self.name = name
        self.params = {
            "W": np.zeros((out_features, in_features), dtype=dtype),
            "b": np.zeros(out_features, dtype=dtype),
        }
        self._cache: tuple | None = None

    @property
    def fan_in(self) -> int:
        return self.in_features

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"{self.name}: expected {self.in_features} input features, got {shape}")
        return (self.out_features,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_features}) input, got shape {x.shape}")
        z = x @ self.params["W"].T + self.params["b"]
        out = np.maximum(z, 0) if self.relu else z
        self._cache = (x, out)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        x, out = self._cache
        if grad_out.shape != out.shape:
            raise ShapeError(f"{self.name}: gradient shape {grad_out.shape} does not match output {out.shape}")
        g = grad_out * (out > 0) if self.relu else grad_out
        self.grads = {"W": g.T @ x, "b": g.sum(axis=0)}
        return g @ self.params["W"]

    def describe(self):
        return {
            "type": "dense",
            "name": self.name,
            "in_features": self.in_features,
            "out_features": self.out_features,
            "relu": self.relu,
        }


class Dropout(Layer):
    """Inverted dropout: in training, keep each unit with probability ``keep``
    and scale survivors by ``1/keep``; identity otherwise."""

    def __init__(self, keep: float = 0.5, rng: SplitMix64 | None = None, name: str = "dropout") -> None:
        super().__init__()
        if not 0 < keep <= 1:
            raise ValueError(f"{name}: keep probability must be in (0, 1], got {keep}")
        self.keep = keep
        self.rng = rng if rng is not None else SplitMix64(0)
        self.name = name
        self._mask: np.ndarray | None = None

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=False):
        if not train or self.keep == 1.0:
            self._mask = None
            return x
        keep = self.rng.uniform(x.shape) < self.keep
        self._mask = (keep / self.keep).astype(x.dtype)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def describe(self):
        return {"type": "dropout", "name": self.name, "keep": self.keep}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood in nats and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax: logits {logits.shape} and labels {labels.shape} disagree")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1
    return loss, grad / n
