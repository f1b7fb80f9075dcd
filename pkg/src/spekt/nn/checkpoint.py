"""Network checkpoints.

A checkpoint is a single file: the architecture as a canonical text block
(one line per layer) followed by every weight tensor, batchnorm running
statistic, and the training history, each stored with its own dtype so
float32 and float64 networks both round-trip bit-exactly.  Loading
rebuilds the network from the text block and re-attaches tensors by name.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from ..errors import DataError
from .network import Network, layer_from_config
from .train import TrainedNetwork

__all__ = ["save_checkpoint", "load_checkpoint", "spec_text"]


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def spec_text(trained: TrainedNetwork) -> str:
    """Canonical text block describing architecture and provenance."""
    net = trained.network
    lines = [
        "format=spekt-network",
        f"input_shape={','.join(str(d) for d in net.input_shape)}",
        f"precision={'f32' if net.dtype == np.float32 else 'f64'}",
        f"n_layers={len(net.layers)}",
        f"best_epoch={trained.best_epoch}",
    ]
    for i, layer in enumerate(net.layers):
        cfg = " ".join(f"{k}={_format_value(v)}" for k, v in sorted(layer.config().items()))
        lines.append(f"layer{i:02d}={layer.kind}{(' ' + cfg) if cfg else ''}")
    for key in sorted(trained.provenance):
        lines.append(f"provenance.{key}={trained.provenance[key]}")
    return "\n".join(lines) + "\n"


def save_checkpoint(trained: TrainedNetwork, path) -> None:
    from ..iofmt import write_tensor_container

    net = trained.network
    tensors: List[Tuple[str, np.ndarray]] = []
    for i, layer in enumerate(net.layers):
        for name, arr in {**layer.params(), **layer.buffers()}.items():
            tensors.append((f"layer{i:02d}.{name}", arr))
    for key in sorted(trained.history):
        tensors.append((f"history.{key}", np.asarray(trained.history[key], dtype=np.float64)))
    write_tensor_container(path, spec_text(trained), tensors)


def _parse_spec(text: str) -> Tuple[dict, List[Tuple[str, dict]], dict]:
    meta: Dict[str, str] = {}
    layers: List[Tuple[str, dict]] = []
    provenance: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"malformed checkpoint spec line: {line!r}")
        key, value = line.split("=", 1)
        if key.startswith("provenance."):
            provenance[key[len("provenance."):]] = value
        elif key.startswith("layer"):
            parts = value.split()
            kind, cfg = parts[0], {}
            for part in parts[1:]:
                k, v = part.split("=", 1)
                cfg[k] = v
            layers.append((kind, cfg))
        else:
            meta[key] = value
    if meta.get("format") != "spekt-network":
        raise DataError(f"not a network checkpoint: format={meta.get('format')!r}")
    return meta, layers, provenance


def load_checkpoint(path) -> TrainedNetwork:
    from ..iofmt import read_tensor_container

    text, tensors = read_tensor_container(path)
    meta, layer_cfgs, provenance = _parse_spec(text)
    input_shape = tuple(int(d) for d in meta["input_shape"].split(","))
    dtype = np.float32 if meta.get("precision", "f32") == "f32" else np.float64
    layers = [layer_from_config(kind, cfg) for kind, cfg in layer_cfgs]
    net = Network(input_shape, layers, dtype)

    by_name = dict(tensors)
    state = {k: v for k, v in by_name.items() if k.startswith("layer")}
    net.set_state(state)
    history = {
        k[len("history."):]: v for k, v in by_name.items() if k.startswith("history.")
    }
    return TrainedNetwork(
        network=net,
        history=history,
        provenance=provenance,
        best_epoch=int(meta.get("best_epoch", -1)),
    )
