"""Input validation helpers used by the estimators and core operations."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_spectrum",
    "as_image",
    "check_image_stack",
    "check_spectra",
    "check_nonnegative",
]


def as_spectrum(s, n_channels: Optional[int] = None, name: str = "spectrum") -> np.ndarray:
    """Coerce ``s`` (Spectrum or array-like) to a 1-D float64 vector."""
    values = getattr(s, "values", s)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if n_channels is not None and arr.shape[0] != n_channels:
        raise DimensionError(
            f"{name} has {arr.shape[0]} channels, expected {n_channels}"
        )
    return arr


def as_image(m, roi_shape: Optional[Tuple[int, int]] = None, name: str = "image") -> np.ndarray:
    """Coerce ``m`` (SpeckleImage or array-like) to a 2-D float array."""
    pixels = getattr(m, "pixels", m)
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if roi_shape is not None and tuple(arr.shape) != tuple(roi_shape):
        raise DimensionError(
            f"{name} has shape {arr.shape}, expected {tuple(roi_shape)}"
        )
    return arr


def check_image_stack(X, roi_shape: Tuple[int, int], dtype=None) -> np.ndarray:
    """Validate a batch of images.

    Accepts ``(n, h, w)`` stacks or flattened ``(n, h*w)`` matrices and
    returns a contiguous ``(n, h, w)`` array.  A single ``(h, w)`` image is
    promoted to a batch of one.
    """
    h, w = roi_shape
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 2 and arr.shape == (h, w):
        arr = arr[None, :, :]
    elif arr.ndim == 2 and arr.shape[1] == h * w:
        arr = arr.reshape(arr.shape[0], h, w)
    elif arr.ndim != 3 or arr.shape[1:] != (h, w):
        raise DimensionError(
            f"image batch has shape {arr.shape}, expected (n, {h}, {w}) or (n, {h * w})"
        )
    return np.ascontiguousarray(arr)


def check_spectra(y, n_channels: int, dtype=None) -> np.ndarray:
    """Validate a batch of spectra as an ``(n, n_channels)`` array."""
    arr = np.asarray(y, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != n_channels:
        raise DimensionError(
            f"spectra batch has shape {arr.shape}, expected (n, {n_channels})"
        )
    return np.ascontiguousarray(arr)


def check_nonnegative(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
