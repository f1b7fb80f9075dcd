"""Scikit-learn style estimators around the from-scratch networks.

Inputs are raw speckle images; the estimator owns the scale-invariant
preprocessing (``x / mean(x) - 1`` per sample, per fiber channel) so a
checkpointed model and its preprocessing can never drift apart.  Labels
are the peak-normalized spectra the dataset builder produces.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import ConfigError, DimensionError
from ..rng import Rng
from ..validation import check_image_stack, check_spectra
from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    Network,
    Workspace,
    build_cnn_large,
    build_cnn_small,
    build_multifiber,
    infer_preallocated,
)
from .train import TrainOptions, train

__all__ = ["CnnReconstructor", "MultiFiberCnnReconstructor"]


def _dtype_of(precision: str):
    if precision not in ("f32", "f64"):
        raise ConfigError(f"precision must be 'f32' or 'f64', got {precision!r}")
    return np.float32 if precision == "f32" else np.float64


def _normalize_stack(X: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-sample, per-channel x/mean - 1 over the spatial axes."""
    if out is None:
        out = np.empty_like(X)
    means = X.mean(axis=(1, 2), keepdims=True)
    np.divide(X, np.where(means > 0, means, 1.0), out=out)
    out -= 1.0
    out[np.broadcast_to(means <= 0, out.shape)] = 0.0
    return out


class CnnReconstructor(BaseEstimator, RegressorMixin):
    """Single-fiber CNN spectrum reconstruction.

    Parameters
    ----------
    n_channels : int
        Output spectrum length.
    arch : "auto", "small", or "large"
        "small" is the two-conv 2x2-kernel net (5x5-class inputs),
        "large" the three-conv 3x3-kernel net (20x20-class inputs);
        "auto" picks by ROI size.
    filters : int, tuple, or None
        Conv filter counts; None keeps the architecture defaults.
    epochs, batch_size, learning_rate, seed
        Training options (Adam, MSE loss, best-validation-epoch weights).
    keep_prob, leaky_slope
        Dropout keep probability and LeakyReLU slope.
    precision : "f32" or "f64"
        Weight and activation dtype.  f32 is the fast default; f64 is the
        bit-reproducibility / gradient-check configuration.
    val_fraction : float
        Trailing fraction of fit data used for validation when no
        explicit validation pair is supplied.
    """

    def __init__(self, n_channels: int = 43, arch: str = "auto", filters=None,
                 epochs: int = 30, batch_size: int = 64, learning_rate: float = 1e-3,
                 keep_prob: float = 0.7, leaky_slope: float = 0.2, seed: int = 0,
                 precision: str = "f32", val_fraction: float = 0.1, verbose: bool = False):
        self.n_channels = n_channels
        self.arch = arch
        self.filters = filters
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.keep_prob = keep_prob
        self.leaky_slope = leaky_slope
        self.seed = seed
        self.precision = precision
        self.val_fraction = val_fraction
        self.verbose = verbose

    # ------------------------------------------------------------------
    def _build(self, roi_shape: Tuple[int, int]) -> Network:
        dtype = _dtype_of(self.precision)
        h, w = roi_shape
        arch = self.arch
        if arch == "auto":
            arch = "large" if min(h, w) >= 12 else "small"
        if arch == "small":
            filters = self.filters if self.filters is not None else 16
            return build_cnn_small(self.n_channels, (h, w, 1), int(filters),
                                   keep_prob=self.keep_prob, slope=self.leaky_slope, dtype=dtype)
        if arch == "large":
            filters = tuple(self.filters) if self.filters is not None else (16, 32, 32)
            return build_cnn_large(self.n_channels, (h, w, 1), filters,
                                   keep_prob=self.keep_prob, slope=self.leaky_slope, dtype=dtype)
        raise ConfigError(f"unknown arch {self.arch!r}")

    def _prepare(self, X: np.ndarray, dtype) -> np.ndarray:
        prepared = _normalize_stack(np.asarray(X, dtype=np.float64))
        return prepared.astype(dtype)[..., None]

    def fit(self, X, y, validation_data: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        """Train on image/spectrum pairs.

        ``validation_data=(X_val, y_val)`` follows the dataset split when
        given; otherwise the trailing ``val_fraction`` of the fit data is
        held out.
        """
        roi_shape = np.asarray(X).shape[1:3]
        images = check_image_stack(X, roi_shape)
        spectra = check_spectra(y, self.n_channels)
        net = self._build(roi_shape)
        dtype = net.dtype
        Xp = self._prepare(images, dtype)
        yp = spectra.astype(dtype)
        if validation_data is not None:
            Xv = self._prepare(check_image_stack(validation_data[0], roi_shape), dtype)
            yv = check_spectra(validation_data[1], self.n_channels).astype(dtype)
        else:
            n_val = max(1, int(round(self.val_fraction * Xp.shape[0])))
            if n_val >= Xp.shape[0]:
                raise ConfigError(f"cannot hold out {n_val} of {Xp.shape[0]} samples")
            Xp, Xv = Xp[:-n_val], Xp[-n_val:]
            yp, yv = yp[:-n_val], yp[-n_val:]
        opts = TrainOptions(epochs=self.epochs, batch_size=self.batch_size,
                            learning_rate=self.learning_rate, seed=self.seed,
                            verbose=self.verbose)
        net.initialize(Rng(opts.seed).spawn())
        self.trained_ = train(net, (Xp, yp), (Xv, yv), opts)
        self.network_ = self.trained_.network
        self.roi_shape_ = tuple(int(d) for d in roi_shape)
        self._workspace = None
        return self

    # ------------------------------------------------------------------
    def predict(self, X) -> np.ndarray:
        """Reconstruct spectra; negatives clamp to zero."""
        images = check_image_stack(X, self.roi_shape_)
        Xp = self._prepare(images, self.network_.dtype)
        return self.trained_.predict(Xp).astype(np.float64)

    def make_workspace(self) -> Workspace:
        """Per-thread scratch for the allocation-free single-image path."""
        return Workspace(self.network_, batch=1)

    def predict_one(self, pixels: np.ndarray, workspace: Optional[Workspace] = None,
                    out: Optional[np.ndarray] = None) -> np.ndarray:
        """Reconstruct one image without allocating (after warm-up)."""
        if workspace is None:
            if self._workspace is None:
                self._workspace = self.make_workspace()
            workspace = self._workspace
        view = workspace.input.reshape(self.roi_shape_)
        np.copyto(view, pixels)
        mean = view.mean()
        if mean > 0:
            np.divide(view, mean, out=view)
            view -= 1.0
        else:
            view[...] = 0.0
        result = infer_preallocated(self.network_, workspace)
        flat = result.reshape(-1)
        np.maximum(flat, 0.0, out=flat)
        if out is None:
            return flat.astype(np.float64)
        np.copyto(out, flat)
        return out

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(self.trained_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "CnnReconstructor":
        trained = load_checkpoint(path)
        net = trained.network
        est = cls(n_channels=net.output_dim,
                  precision="f32" if net.dtype == np.float32 else "f64")
        est.trained_ = trained
        est.network_ = net
        est.roi_shape_ = net.input_shape[:2]
        est._workspace = None
        return est

    @classmethod
    def with_random_weights(cls, roi_shape: Tuple[int, int], n_channels: int = 43,
                            arch: str = "auto", seed: int = 0, **kwargs) -> "CnnReconstructor":
        """Untrained estimator with freshly initialized weights.

        Inference cost does not depend on the weight values, so this is
        the cheap way to stand up timing benchmarks and smoke tests at
        production architecture sizes.
        """
        from .train import TrainedNetwork

        est = cls(n_channels=n_channels, arch=arch, seed=seed, **kwargs)
        net = est._build(tuple(roi_shape))
        net.initialize(Rng(seed))
        est.trained_ = TrainedNetwork(network=net, history={},
                                      provenance={"random_init": True})
        est.network_ = net
        est.roi_shape_ = tuple(int(d) for d in roi_shape)
        est._workspace = None
        return est


class MultiFiberCnnReconstructor(BaseEstimator, RegressorMixin):
    """Joint reconstruction of several fibers through one shared network.

    ``fit`` expects images shaped ``(n, h, w, n_fibers)`` (one channel per
    fiber) and labels ``(n, n_fibers * n_channels)``.  Timing per fiber
    drops nearly linearly with the group size because the trunk and the
    dense bottleneck are shared.
    """

    def __init__(self, n_fibers: int, n_channels: int = 43, trunk_filters: int = 32,
                 head_length: int = 11, head_channels: int = 8,
                 epochs: int = 30, batch_size: int = 64, learning_rate: float = 1e-3,
                 keep_prob: float = 0.7, leaky_slope: float = 0.2, seed: int = 0,
                 precision: str = "f32", verbose: bool = False):
        self.n_fibers = n_fibers
        self.n_channels = n_channels
        self.trunk_filters = trunk_filters
        self.head_length = head_length
        self.head_channels = head_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.keep_prob = keep_prob
        self.leaky_slope = leaky_slope
        self.seed = seed
        self.precision = precision
        self.verbose = verbose

    def _prepare(self, X: np.ndarray, dtype) -> np.ndarray:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[3] != self.n_fibers:
            raise DimensionError(
                f"multi-fiber input must be (n, h, w, {self.n_fibers}), got {arr.shape}"
            )
        return _normalize_stack(arr).astype(dtype)

    def fit(self, X, y, validation_data: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        arr = np.asarray(X)
        roi_shape = arr.shape[1:3]
        dtype = _dtype_of(self.precision)
        net = build_multifiber(
            self.n_fibers, roi_shape, self.n_channels,
            trunk_filters=self.trunk_filters, head_length=self.head_length,
            head_channels=self.head_channels, keep_prob=self.keep_prob,
            slope=self.leaky_slope, dtype=dtype,
        )
        Xp = self._prepare(arr, dtype)
        yp = check_spectra(y, self.n_fibers * self.n_channels).astype(dtype)
        if validation_data is not None:
            Xv = self._prepare(np.asarray(validation_data[0]), dtype)
            yv = check_spectra(validation_data[1], self.n_fibers * self.n_channels).astype(dtype)
        else:
            n_val = max(1, Xp.shape[0] // 10)
            Xp, Xv = Xp[:-n_val], Xp[-n_val:]
            yp, yv = yp[:-n_val], yp[-n_val:]
        opts = TrainOptions(epochs=self.epochs, batch_size=self.batch_size,
                            learning_rate=self.learning_rate, seed=self.seed,
                            verbose=self.verbose)
        net.initialize(Rng(opts.seed).spawn())
        self.trained_ = train(net, (Xp, yp), (Xv, yv), opts)
        self.network_ = self.trained_.network
        self.roi_shape_ = tuple(int(d) for d in roi_shape)
        self._workspace = None
        return self

    def predict(self, X) -> np.ndarray:
        Xp = self._prepare(np.asarray(X), self.network_.dtype)
        return self.trained_.predict(Xp).astype(np.float64)

    def predict_spectra(self, X) -> np.ndarray:
        """Predictions reshaped to (n, n_fibers, n_channels)."""
        flat = self.predict(X)
        return flat.reshape(flat.shape[0], self.n_fibers, self.n_channels)

    def make_workspace(self) -> Workspace:
        return Workspace(self.network_, batch=1)

    def predict_one(self, group_pixels: np.ndarray, workspace: Optional[Workspace] = None,
                    out: Optional[np.ndarray] = None) -> np.ndarray:
        """One (h, w, n_fibers) group without allocation (after warm-up)."""
        if workspace is None:
            if self._workspace is None:
                self._workspace = self.make_workspace()
            workspace = self._workspace
        view = workspace.input[0]
        np.copyto(view, group_pixels)
        for c in range(view.shape[2]):
            plane = view[:, :, c]
            mean = plane.mean()
            if mean > 0:
                np.divide(plane, mean, out=plane)
                plane -= 1.0
            else:
                plane[...] = 0.0
        result = infer_preallocated(self.network_, workspace)
        flat = result.reshape(-1)
        np.maximum(flat, 0.0, out=flat)
        if out is None:
            return flat.astype(np.float64)
        np.copyto(out, flat)
        return out

    def save(self, path) -> None:
        save_checkpoint(self.trained_, path)

    @classmethod
    def with_random_weights(cls, n_fibers: int, roi_shape: Tuple[int, int],
                            n_channels: int = 43, seed: int = 0,
                            **kwargs) -> "MultiFiberCnnReconstructor":
        """Untrained grouped estimator for timing benchmarks."""
        from .train import TrainedNetwork

        est = cls(n_fibers, n_channels=n_channels, seed=seed, **kwargs)
        net = build_multifiber(
            n_fibers, tuple(roi_shape), n_channels,
            trunk_filters=est.trunk_filters, head_length=est.head_length,
            head_channels=est.head_channels, keep_prob=est.keep_prob,
            slope=est.leaky_slope, dtype=_dtype_of(est.precision),
        )
        net.initialize(Rng(seed))
        est.trained_ = TrainedNetwork(network=net, history={},
                                      provenance={"random_init": True})
        est.network_ = net
        est.roi_shape_ = tuple(int(d) for d in roi_shape)
        est._workspace = None
        return est
