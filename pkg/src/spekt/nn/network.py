"""Network container, architecture builders, and the inference hot path.

Architectures follow the two reference designs: a compact net for 5x5
regions (two 2x2 convolutions) and a deeper one for 20x20 regions (three
3x3 convolutions), each followed by 512- and 256-wide dense layers with
dropout at 70% keep probability and a linear output of one neuron per
wavelength channel.  No pooling anywhere: pooling consistently hurt
reconstruction quality, and with valid padding the spatial dimensions
already shrink at every convolution.

The multi-fiber variant stacks several fibers' crops as input channels,
runs one shared convolutional trunk, then splits into per-fiber sequences
that a pair of stride-2 transposed 1-D convolutions upsamples along the
spectral axis before a shared linear projection onto the channel grid.
"""

from __future__ import annotations

import copy
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DimensionError
from ..rng import Rng
from .layers import (
    LAYER_KINDS,
    BatchNorm,
    Conv1dUpsample,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LeakyRelu,
    MergeFibers,
    SplitFibers,
)

__all__ = [
    "Network",
    "Workspace",
    "build_cnn_small",
    "build_cnn_large",
    "build_multifiber",
    "layer_from_config",
]


def layer_from_config(kind: str, config: Dict[str, object]):
    if kind not in LAYER_KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")
    if kind == "conv2d":
        return Conv2d((int(config["kh"]), int(config["kw"])), int(config["filters"]))
    if kind == "batchnorm":
        return BatchNorm()
    if kind == "leaky_relu":
        return LeakyRelu(float(config["slope"]))
    if kind == "dropout":
        return Dropout(float(config["keep_prob"]))
    if kind == "dense":
        return Dense(int(config["units"]))
    if kind == "flatten":
        return Flatten()
    if kind == "conv1d_upsample":
        return Conv1dUpsample(int(config["kernel"]), int(config["filters"]), int(config["stride"]))
    if kind == "split_fibers":
        return SplitFibers(int(config["fibers"]), int(config["length"]), int(config["channels"]))
    return MergeFibers(int(config["fibers"]))


class Network:
    """An ordered layer stack with shape checking and seeded initialization."""

    def __init__(self, input_shape: Tuple[int, ...], layers: Sequence, dtype=np.float32):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        # Shape algebra runs at construction so geometry errors surface
        # before any data is touched.
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            self.shapes.append(shape)
        self.output_dim = int(np.prod(shape))
        self.initialized = False

    def initialize(self, rng: Rng) -> "Network":
        children = rng.split(len(self.layers))
        for layer, child in zip(self.layers, children):
            layer.init_params(child.generator, self.dtype)
        self.initialized = True
        return self

    # ------------------------------------------------------------------
    def forward(self, x: np.ndarray, train: bool, gen: Optional[np.random.Generator] = None):
        """Run the stack; returns (output, caches) for a later backward pass."""
        if x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"batch shape {x.shape[1:]} does not match input {self.input_shape}"
            )
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train, gen)
            caches.append(cache)
        return x, caches

    def backward(self, dy: np.ndarray, caches) -> List[Dict[str, np.ndarray]]:
        """Backpropagate; returns one gradient dict per layer (same order)."""
        grads: List[Dict[str, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(dy, caches[i])
            grads[i] = g
        return grads

    def infer(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward(x, train=False)
        return out

    # ------------------------------------------------------------------
    def parameters(self) -> List[Tuple[int, str]]:
        """(layer index, tensor name) for every trainable tensor, in order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in layer.params():
                out.append((i, name))
        return out

    def get_state(self) -> Dict[str, np.ndarray]:
        """Copies of all trainable tensors and buffers, keyed layerNN.name."""
        state = {}
        for i, layer in enumerate(self.layers):
            for name, arr in {**layer.params(), **layer.buffers()}.items():
                state[f"layer{i:02d}.{name}"] = arr.copy()
        return state

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            tensors = {**layer.params(), **layer.buffers()}
            for name in tensors:
                key = f"layer{i:02d}.{name}"
                if key not in state:
                    raise ConfigError(f"state is missing tensor {key}")
                src = state[key]
                if tensors[name] is not None and tensors[name].shape != src.shape:
                    raise DimensionError(
                        f"tensor {key} has shape {src.shape}, expected {tensors[name].shape}"
                    )
                setattr(layer, name, src.copy())
            layer.on_params_changed()
        self.initialized = True

    def clone_structure(self) -> "Network":
        return Network(self.input_shape, copy.deepcopy(self.layers), self.dtype)

    def count_parameters(self) -> int:
        return sum(arr.size for i, layer in enumerate(self.layers) for arr in layer.params().values())


class Workspace:
    """Preallocated per-call scratch for the streaming inference path.

    Buffers depend only on the architecture, so one workspace can serve
    many same-shaped networks sequentially; each thread owns its own.
    """

    def __init__(self, net: Network, batch: int = 1):
        self.input = np.empty((batch,) + net.input_shape, dtype=net.dtype)
        self.bufs = []
        b, shape = batch, net.input_shape
        for layer in net.layers:
            self.bufs.append(layer.alloc_infer(shape, b, net.dtype))
            shape = layer.out_shape(shape)
            if isinstance(layer, SplitFibers):
                b *= layer.fibers
            elif isinstance(layer, MergeFibers):
                b //= layer.fibers
        self.signature = (net.input_shape, tuple(net.shapes), str(net.dtype))


def infer_preallocated(net: Network, ws: Workspace) -> np.ndarray:
    """Forward pass writing only into workspace buffers (input already staged)."""
    x = ws.input
    for layer, bufs in zip(net.layers, ws.bufs):
        x = layer.infer(x, bufs)
    return x


# ---------------------------------------------------------------------------
# reference architectures
# ---------------------------------------------------------------------------

def build_cnn_small(
    n_channels: int = 43,
    input_shape: Tuple[int, int, int] = (5, 5, 1),
    filters: int = 16,
    dense_units: Tuple[int, int] = (512, 256),
    keep_prob: float = 0.7,
    slope: float = 0.2,
    dtype=np.float32,
) -> Network:
    """Compact net for small regions: two 2x2 convolutions."""
    layers = [
        Conv2d((2, 2), filters), BatchNorm(), LeakyRelu(slope),
        Conv2d((2, 2), filters), BatchNorm(), LeakyRelu(slope),
        Flatten(),
        Dense(dense_units[0]), LeakyRelu(slope), Dropout(keep_prob),
        Dense(dense_units[1]), LeakyRelu(slope), Dropout(keep_prob),
        Dense(n_channels),
    ]
    return Network(input_shape, layers, dtype)


def build_cnn_large(
    n_channels: int = 43,
    input_shape: Tuple[int, int, int] = (20, 20, 1),
    filters: Tuple[int, int, int] = (16, 32, 32),
    dense_units: Tuple[int, int] = (512, 256),
    keep_prob: float = 0.7,
    slope: float = 0.2,
    dtype=np.float32,
) -> Network:
    """Deeper net for large regions: three 3x3 convolutions, no pooling."""
    layers = []
    for f in filters:
        layers += [Conv2d((3, 3), f), BatchNorm(), LeakyRelu(slope)]
    layers += [
        Flatten(),
        Dense(dense_units[0]), LeakyRelu(slope), Dropout(keep_prob),
        Dense(dense_units[1]), LeakyRelu(slope), Dropout(keep_prob),
        Dense(n_channels),
    ]
    return Network(input_shape, layers, dtype)


def build_multifiber(
    n_fibers: int,
    roi_shape: Tuple[int, int] = (5, 5),
    n_channels: int = 43,
    trunk_filters: int = 32,
    dense_units: int = 512,
    head_length: int = 11,
    head_channels: int = 8,
    head_kernel: int = 3,
    head_stride: int = 2,
    head_filters: Tuple[int, int] = (8, 8),
    keep_prob: float = 0.7,
    slope: float = 0.2,
    dtype=np.float32,
) -> Network:
    """Shared-trunk network reconstructing ``n_fibers`` spectra at once.

    Input is ``(h, w, n_fibers)``; output is ``n_fibers * n_channels``.
    The 1-D upsampling head expands a compressed per-fiber feature
    sequence up to at least ``n_channels`` before a linear projection, so
    ``head_length`` must satisfy the stride/kernel arithmetic.
    """
    if n_fibers < 1:
        raise ConfigError(f"n_fibers must be >= 1, got {n_fibers}")
    h, w = roi_shape
    small = min(h, w) < 8
    kernel = (2, 2) if small else (3, 3)
    depth = 2 if small else 3
    length = head_length
    for _ in head_filters:
        length = (length - 1) * head_stride + head_kernel
    if length < n_channels:
        raise ConfigError(
            f"upsampling head reaches length {length} < {n_channels}; increase head_length"
        )
    layers = []
    for _ in range(depth):
        layers += [Conv2d(kernel, trunk_filters), BatchNorm(), LeakyRelu(slope)]
    layers += [
        Flatten(),
        Dense(dense_units), LeakyRelu(slope), Dropout(keep_prob),
        Dense(n_fibers * head_length * head_channels),
        SplitFibers(n_fibers, head_length, head_channels),
    ]
    for f in head_filters:
        layers += [Conv1dUpsample(head_kernel, f, head_stride), LeakyRelu(slope)]
    layers += [Flatten(), Dense(n_channels), MergeFibers(n_fibers)]
    return Network((h, w, n_fibers), layers, dtype)
