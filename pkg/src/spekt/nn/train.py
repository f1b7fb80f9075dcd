"""Training loop, Adam optimizer, and the finite-difference gradient oracle.

Training minimizes mean-squared error over shuffled mini-batches and
keeps the weights of the epoch with the lowest validation loss.  All
randomness (shuffling, dropout masks) derives from one seed, so a run is
bit-reproducible given the same data, dtype and thread configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from ..errors import ConfigError, TrainingDivergedError
from ..rng import Rng
from .layers import Dropout
from .network import Network

__all__ = ["TrainOptions", "TrainedNetwork", "Adam", "train", "mse_loss", "gradient_check"]


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_batch: int = 512
    verbose: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


class Adam:
    """Adaptive moment estimation over a flat list of parameter tensors."""

    def __init__(self, params: List[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over every output element, with its gradient."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


@dataclass
class TrainedNetwork:
    """A trained network plus its per-epoch loss history and provenance."""

    network: Network
    history: Dict[str, np.ndarray]
    provenance: Dict[str, object] = field(default_factory=dict)
    best_epoch: int = -1

    def predict(self, X: np.ndarray, batch: int = 512) -> np.ndarray:
        """Inference with negatives clamped to zero (spectra are intensities)."""
        out = np.empty((X.shape[0], self.network.output_dim), dtype=self.network.dtype)
        for lo in range(0, X.shape[0], batch):
            out[lo : lo + batch] = self.network.infer(X[lo : lo + batch])
        np.maximum(out, 0.0, out=out)
        return out


def _eval_loss(net: Network, X: np.ndarray, y: np.ndarray, batch: int) -> float:
    total = 0.0
    for lo in range(0, X.shape[0], batch):
        pred = net.infer(X[lo : lo + batch])
        diff = pred - y[lo : lo + batch]
        total += float(np.sum(diff * diff))
    return total / (X.shape[0] * y.shape[1])


def train(
    net: Network,
    train_data: Tuple[np.ndarray, np.ndarray],
    val_data: Tuple[np.ndarray, np.ndarray],
    opts: TrainOptions = TrainOptions(),
) -> TrainedNetwork:
    """Adam/MSE training; returns the weights of the best validation epoch."""
    X, y = train_data
    Xv, yv = val_data
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ConfigError("empty train or validation split")
    if X.shape[0] != y.shape[0] or Xv.shape[0] != yv.shape[0]:
        raise ConfigError("images and spectra counts differ")
    if y.shape[1] != net.output_dim:
        raise ConfigError(f"labels have {y.shape[1]} outputs, network {net.output_dim}")

    rng = Rng(opts.seed)
    init_rng, shuffle_rng, dropout_rng = rng.split(3)
    if not net.initialized:
        net.initialize(init_rng)
    shuffle_gen = shuffle_rng.generator
    dropout_gen = dropout_rng.generator

    param_refs = [net.layers[i].params()[name] for i, name in net.parameters()]
    adam = Adam(param_refs, opts.learning_rate, opts.beta1, opts.beta2, opts.eps)

    n = X.shape[0]
    train_hist = np.empty(opts.epochs)
    val_hist = np.empty(opts.epochs)
    best_val = np.inf
    best_state = None
    best_epoch = -1
    t0 = time.perf_counter()

    for epoch in range(opts.epochs):
        order = shuffle_gen.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, opts.batch_size):
            idx = order[lo : lo + opts.batch_size]
            pred, caches = net.forward(X[idx], train=True, gen=dropout_gen)
            loss, dpred = mse_loss(pred, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads = net.backward(dpred.astype(net.dtype, copy=False), caches)
            flat = [grads[i][name] for i, name in net.parameters()]
            adam.step(flat)
            epoch_loss += loss
            n_batches += 1
        train_hist[epoch] = epoch_loss / n_batches
        val_hist[epoch] = _eval_loss(net, Xv, yv, opts.eval_batch)
        if not np.isfinite(val_hist[epoch]):
            raise TrainingDivergedError(epoch)
        if val_hist[epoch] < best_val:
            best_val = val_hist[epoch]
            best_state = net.get_state()
            best_epoch = epoch
        if opts.verbose:
            print(
                f"epoch {epoch:3d}  train {train_hist[epoch]:.3e}  "
                f"val {val_hist[epoch]:.3e}  ({time.perf_counter() - t0:.1f}s)"
            )

    net.set_state(best_state)
    return TrainedNetwork(
        network=net,
        history={"train_loss": train_hist, "val_loss": val_hist},
        provenance={
            "seed": opts.seed,
            "epochs": opts.epochs,
            "batch_size": opts.batch_size,
            "learning_rate": opts.learning_rate,
            "n_train": n,
            "n_val": Xv.shape[0],
        },
        best_epoch=best_epoch,
    )


def gradient_check(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
    samples_per_tensor: int = 200,
    seed: int = 7,
) -> float:
    """Max relative error of analytic gradients vs. central differences.

    Dropout layers are forced to keep probability 1 for the duration so
    repeated loss evaluations are deterministic; batchnorm runs in train
    mode, so its batch-statistics gradients are part of the check.  The
    network must use float64 for the 1e-4 tolerance to be meaningful.
    """
    if net.dtype != np.float64:
        raise ConfigError("gradient_check requires a float64 network")
    saved_keep = [(l, l.keep_prob) for l in net.layers if isinstance(l, Dropout)]
    for layer, _ in saved_keep:
        layer.keep_prob = 1.0
    try:
        def loss_only() -> float:
            gen = Rng(seed).generator
            pred, _ = net.forward(x, train=True, gen=gen)
            return mse_loss(pred, y)[0]

        gen0 = Rng(seed).generator
        pred, caches = net.forward(x, train=True, gen=gen0)
        loss, dpred = mse_loss(pred, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(0, "non-finite loss in gradient check")
        grads = net.backward(dpred, caches)

        pick_gen = Rng(seed + 1).generator
        max_rel = 0.0
        for i, name in net.parameters():
            tensor = net.layers[i].params()[name]
            analytic = grads[i][name]
            if not np.all(np.isfinite(analytic)):
                raise TrainingDivergedError(0, f"non-finite gradient in layer{i:02d}.{name}")
            k = min(samples_per_tensor, tensor.size)
            idx = pick_gen.choice(tensor.size, size=k, replace=False)
            flat = tensor.reshape(-1)
            for j in idx:
                orig = flat[j]
                flat[j] = orig + epsilon
                f_plus = loss_only()
                flat[j] = orig - epsilon
                f_minus = loss_only()
                flat[j] = orig
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                a = float(analytic.reshape(-1)[j])
                # The 1e-6 floor keeps exactly-zero gradients (e.g. a conv
                # bias feeding batchnorm) from amplifying the O(eps_mach/
                # epsilon) rounding noise of the central difference.
                rel = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
                if rel > max_rel:
                    max_rel = rel
        return max_rel
    finally:
        for layer, keep in saved_keep:
            layer.keep_prob = keep
