"""Neural network layers with explicit forward and backward passes.

Everything is plain NumPy with a channels-last layout: image batches are
``(B, H, W, C)``, dense activations ``(B, F)``, per-fiber sequences
``(B, L, C)``.  Convolutions use valid padding and stride 1 (each spatial
dimension shrinks by kernel-1), implemented as im2col + GEMM; the input
gradient reuses the same GEMM kernel on the padded output gradient with a
rotated filter bank.

Every layer implements::

    out_shape(in_shape)          shape algebra, no batch dimension
    init_params(gen, dtype)      allocate + initialize trainable tensors
    forward(x, train, gen)       returns (y, cache)
    backward(dy, cache)          returns (dx, {param_name: gradient})

plus an allocation-free inference path used by the streaming pipeline:
``alloc_infer(in_shape, batch, dtype)`` builds scratch buffers once and
``infer(x, bufs)`` reuses them on every call.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError

__all__ = [
    "Conv2d",
    "BatchNorm",
    "LeakyRelu",
    "Dropout",
    "Dense",
    "Flatten",
    "Conv1dUpsample",
    "SplitFibers",
    "MergeFibers",
    "LAYER_KINDS",
]


def _he_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def _conv_cols(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col: (B, H, W, C) -> contiguous (B, OH, OW, kh, kw, C)."""
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (B, OH, OW, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


class Layer:
    """Base: a layer with no trainable parameters."""

    kind = "base"

    def params(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        """Non-trainable state carried in checkpoints (e.g. running stats)."""
        return {}

    def init_params(self, gen: np.random.Generator, dtype) -> None:
        pass

    def out_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(in_shape)

    def config(self) -> Dict[str, object]:
        return {}

    def on_params_changed(self) -> None:
        pass

    # inference hot path -----------------------------------------------
    def alloc_infer(self, in_shape, batch: int, dtype) -> dict:
        return {}

    def infer(self, x: np.ndarray, bufs: dict) -> np.ndarray:
        y, _ = self.forward(x, train=False, gen=None)
        return y


class Conv2d(Layer):
    """Valid-padding 2-D convolution (stride 1)."""

    kind = "conv2d"

    def __init__(self, kernel: Tuple[int, int], filters: int):
        self.kh, self.kw = int(kernel[0]), int(kernel[1])
        self.filters = int(filters)
        if self.kh < 1 or self.kw < 1 or self.filters < 1:
            raise ConfigError(f"bad conv2d geometry kernel={kernel} filters={filters}")
        self.weight: Optional[np.ndarray] = None  # (kh, kw, cin, filters)
        self.bias: Optional[np.ndarray] = None

    def config(self):
        return {"kh": self.kh, "kw": self.kw, "filters": self.filters}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        h, w, c = in_shape
        oh, ow = h - self.kh + 1, w - self.kw + 1
        if oh < 1 or ow < 1:
            raise ConfigError(
                f"conv2d kernel ({self.kh},{self.kw}) does not fit input {in_shape}"
            )
        if self.weight is None:
            self._cin = c
        return (oh, ow, self.filters)

    def init_params(self, gen, dtype):
        fan_in = self.kh * self.kw * self._cin
        self.weight = gen.normal(0.0, _he_std(fan_in), size=(self.kh, self.kw, self._cin, self.filters)).astype(dtype)
        self.bias = np.zeros(self.filters, dtype=dtype)

    def forward(self, x, train, gen):
        cols = _conv_cols(x, self.kh, self.kw)
        b, oh, ow = cols.shape[:3]
        flat = cols.reshape(b * oh * ow, -1)
        y = flat @ self.weight.reshape(-1, self.filters)
        y += self.bias
        return y.reshape(b, oh, ow, self.filters), (flat, x.shape)

    def backward(self, dy, cache):
        flat, x_shape = cache
        b, oh, ow, f = dy.shape
        dy_flat = dy.reshape(b * oh * ow, f)
        dw = (flat.T @ dy_flat).reshape(self.weight.shape)
        db = dy_flat.sum(axis=0)
        # Input gradient: full correlation = valid conv of the padded dy
        # with the 180-degree rotated, channel-swapped filter bank.
        pad = ((0, 0), (self.kh - 1, self.kh - 1), (self.kw - 1, self.kw - 1), (0, 0))
        dy_pad = np.pad(dy, pad)
        w_rot = self.weight[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh, kw, f, cin)
        cols = _conv_cols(dy_pad, self.kh, self.kw)
        dx = cols.reshape(-1, self.kh * self.kw * f) @ w_rot.reshape(-1, w_rot.shape[-1])
        return dx.reshape(x_shape), {"weight": dw, "bias": db}

    def alloc_infer(self, in_shape, batch, dtype):
        h, w, c = in_shape
        oh, ow = h - self.kh + 1, w - self.kw + 1
        return {
            "cols": np.empty((batch, oh, ow, self.kh, self.kw, c), dtype=dtype),
            "out": np.empty((batch, oh, ow, self.filters), dtype=dtype),
        }

    def infer(self, x, bufs):
        cols, out = bufs["cols"], bufs["out"]
        win = sliding_window_view(x, (self.kh, self.kw), axis=(1, 2))
        np.copyto(cols, win.transpose(0, 1, 2, 4, 5, 3))
        n = out.shape[0] * out.shape[1] * out.shape[2]
        np.matmul(
            cols.reshape(n, -1),
            self.weight.reshape(-1, self.filters),
            out=out.reshape(n, self.filters),
        )
        out += self.bias
        return out


class BatchNorm(Layer):
    """Per-channel batch normalization (statistics over batch and space).

    Training uses batch statistics and updates exponential running
    estimates (biased variance, momentum 0.1); inference applies the
    running statistics as a single scale-and-shift.
    """

    kind = "batchnorm"
    eps = 1e-5
    momentum = 0.1

    def __init__(self):
        self.gamma = None
        self.beta = None
        self.running_mean = None
        self.running_var = None
        self._coeffs = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def out_shape(self, in_shape):
        self._channels = in_shape[-1]
        return tuple(in_shape)

    def init_params(self, gen, dtype):
        c = self._channels
        self.gamma = np.ones(c, dtype=dtype)
        self.beta = np.zeros(c, dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._coeffs = None

    def on_params_changed(self):
        self._coeffs = None

    def forward(self, x, train, gen):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            m = np.asarray(self.momentum, dtype=x.dtype)
            self.running_mean += m * (mean - self.running_mean)
            self.running_var += m * (var - self.running_var)
            self._coeffs = None
            y = self.gamma * xhat + self.beta
            return y, (xhat, inv_std, axes)
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        return self.gamma * (x - self.running_mean) * inv_std + self.beta, None

    def backward(self, dy, cache):
        xhat, inv_std, axes = cache
        n = 1
        for a in axes:
            n *= dy.shape[a]
        dgamma = np.sum(dy * xhat, axis=axes)
        dbeta = np.sum(dy, axis=axes)
        # Standard batchnorm gradient including the batch-statistics terms.
        dxhat = dy * self.gamma
        dx = (inv_std / n) * (n * dxhat - dbeta * self.gamma - xhat * dgamma * self.gamma)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def _infer_coeffs(self, dtype):
        if self._coeffs is None:
            scale = (self.gamma / np.sqrt(self.running_var + self.eps)).astype(dtype)
            shift = (self.beta - self.running_mean * scale).astype(dtype)
            self._coeffs = (scale, shift)
        return self._coeffs

    def infer(self, x, bufs):
        scale, shift = self._infer_coeffs(x.dtype)
        np.multiply(x, scale, out=x)
        np.add(x, shift, out=x)
        return x


class LeakyRelu(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = 0.2):
        if not 0.0 <= slope < 1.0:
            raise ConfigError(f"leaky_relu slope must be in [0, 1), got {slope}")
        self.slope = float(slope)

    def config(self):
        return {"slope": self.slope}

    def forward(self, x, train, gen):
        y = np.maximum(x, self.slope * x)
        return y, (x > 0)

    def backward(self, dy, cache):
        positive = cache
        dx = dy * np.where(positive, 1.0, self.slope).astype(dy.dtype)
        return dx, {}

    def alloc_infer(self, in_shape, batch, dtype):
        return {"tmp": np.empty((batch,) + tuple(in_shape), dtype=dtype)}

    def infer(self, x, bufs):
        tmp = bufs["tmp"]
        np.multiply(x, x.dtype.type(self.slope), out=tmp)
        np.maximum(x, tmp, out=x)
        return x


class Dropout(Layer):
    """Inverted dropout: training rescales by 1/keep, inference is identity."""

    kind = "dropout"

    def __init__(self, keep_prob: float = 0.7):
        if not 0.0 < keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")
        self.keep_prob = float(keep_prob)

    def config(self):
        return {"keep_prob": self.keep_prob}

    def forward(self, x, train, gen):
        if not train or self.keep_prob >= 1.0:
            return x, None
        mask = (gen.random(x.shape) < self.keep_prob).astype(x.dtype)
        mask /= x.dtype.type(self.keep_prob)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}

    def infer(self, x, bufs):
        return x


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int):
        self.units = int(units)
        if self.units < 1:
            raise ConfigError(f"dense units must be >= 1, got {units}")
        self.weight = None  # (fan_in, units)
        self.bias = None

    def config(self):
        return {"units": self.units}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigError(f"dense needs flat input, got shape {in_shape}")
        self._fan_in = in_shape[0]
        return (self.units,)

    def init_params(self, gen, dtype):
        self.weight = gen.normal(0.0, _he_std(self._fan_in), size=(self._fan_in, self.units)).astype(dtype)
        self.bias = np.zeros(self.units, dtype=dtype)

    def forward(self, x, train, gen):
        return x @ self.weight + self.bias, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.weight.T, {"weight": x.T @ dy, "bias": dy.sum(axis=0)}

    def alloc_infer(self, in_shape, batch, dtype):
        return {"out": np.empty((batch, self.units), dtype=dtype)}

    def infer(self, x, bufs):
        out = bufs["out"]
        np.matmul(x, self.weight, out=out)
        out += self.bias
        return out


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)

    def forward(self, x, train, gen):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}

    def infer(self, x, bufs):
        return x.reshape(x.shape[0], -1)


class Conv1dUpsample(Layer):
    """Transposed 1-D convolution along the sequence axis.

    Maps (B, L, C) to (B, (L-1)*stride + kernel, filters): each input
    position scatters a kernel-length contribution into the upsampled
    output, implemented as one GEMM per kernel tap.
    """

    kind = "conv1d_upsample"

    def __init__(self, kernel: int, filters: int, stride: int = 2):
        self.kernel = int(kernel)
        self.filters = int(filters)
        self.stride = int(stride)
        if self.kernel < 1 or self.filters < 1 or self.stride < 1:
            raise ConfigError(
                f"bad conv1d_upsample geometry kernel={kernel} filters={filters} stride={stride}"
            )
        self.weight = None  # (kernel, cin, filters)
        self.bias = None

    def config(self):
        return {"kernel": self.kernel, "filters": self.filters, "stride": self.stride}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        l, c = in_shape
        self._cin = c
        self._lin = l
        return ((l - 1) * self.stride + self.kernel, self.filters)

    def init_params(self, gen, dtype):
        self.weight = gen.normal(0.0, _he_std(self._cin * self.kernel), size=(self.kernel, self._cin, self.filters)).astype(dtype)
        self.bias = np.zeros(self.filters, dtype=dtype)

    def _out_len(self, l):
        return (l - 1) * self.stride + self.kernel

    def forward(self, x, train, gen):
        b, l, c = x.shape
        y = np.zeros((b, self._out_len(l), self.filters), dtype=x.dtype)
        for i in range(self.kernel):
            y[:, i : i + (l - 1) * self.stride + 1 : self.stride, :] += x @ self.weight[i]
        y += self.bias
        return y, x

    def backward(self, dy, cache):
        x = cache
        b, l, c = x.shape
        dx = np.zeros_like(x)
        dw = np.zeros_like(self.weight)
        for i in range(self.kernel):
            tap = dy[:, i : i + (l - 1) * self.stride + 1 : self.stride, :]
            dx += tap @ self.weight[i].T
            dw[i] = np.einsum("blc,blf->cf", x, tap)
        db = dy.sum(axis=(0, 1))
        return dx, {"weight": dw, "bias": db}

    def alloc_infer(self, in_shape, batch, dtype):
        l, c = in_shape
        return {
            "out": np.empty((batch, self._out_len(l), self.filters), dtype=dtype),
            "tap": np.empty((batch, l, self.filters), dtype=dtype),
        }

    def infer(self, x, bufs):
        out, tap = bufs["out"], bufs["tap"]
        l = x.shape[1]
        out[...] = 0.0
        for i in range(self.kernel):
            np.matmul(x, self.weight[i], out=tap)
            out[:, i : i + (l - 1) * self.stride + 1 : self.stride, :] += tap
        out += self.bias
        return out


class SplitFibers(Layer):
    """Reshape pooled features into per-fiber sequences.

    (B, fibers*length*channels) -> (B*fibers, length, channels); the fiber
    axis joins the batch so the upsampling head shares weights across
    fibers.
    """

    kind = "split_fibers"

    def __init__(self, fibers: int, length: int, channels: int):
        self.fibers = int(fibers)
        self.length = int(length)
        self.channels = int(channels)

    def config(self):
        return {"fibers": self.fibers, "length": self.length, "channels": self.channels}

    def out_shape(self, in_shape):
        expected = self.fibers * self.length * self.channels
        if in_shape != (expected,):
            raise ConfigError(
                f"split_fibers expects flat input of {expected}, got {in_shape}"
            )
        return (self.length, self.channels)

    def forward(self, x, train, gen):
        b = x.shape[0]
        return x.reshape(b * self.fibers, self.length, self.channels), b

    def backward(self, dy, cache):
        b = cache
        return dy.reshape(b, -1), {}

    def infer(self, x, bufs):
        return x.reshape(x.shape[0] * self.fibers, self.length, self.channels)


class MergeFibers(Layer):
    """Collect per-fiber outputs back into one row per frame: (B*fibers, Y) -> (B, fibers*Y)."""

    kind = "merge_fibers"

    def __init__(self, fibers: int):
        self.fibers = int(fibers)

    def config(self):
        return {"fibers": self.fibers}

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigError(f"merge_fibers needs flat per-fiber input, got {in_shape}")
        return (self.fibers * in_shape[0],)

    def forward(self, x, train, gen):
        bn = x.shape[0]
        if bn % self.fibers:
            raise DimensionError(f"batch {bn} not divisible by fibers {self.fibers}")
        return x.reshape(bn // self.fibers, -1), None

    def backward(self, dy, cache):
        return dy.reshape(dy.shape[0] * self.fibers, -1), {}

    def infer(self, x, bufs):
        return x.reshape(x.shape[0] // self.fibers, -1)


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2d, BatchNorm, LeakyRelu, Dropout, Dense, Flatten,
                Conv1dUpsample, SplitFibers, MergeFibers)
}
