"""Domain types and the linear forward model.

A fiber core's calibration is a transmission matrix ``A`` of shape
``(X, Y)``: column ``j`` is the vectorized speckle pattern the camera
records when only wavelength channel ``j`` is lit.  A spectrum ``s``
(length ``Y``, non-negative) then produces the intensity image
``reshape(A @ s)`` because the camera adds the per-wavelength speckle
intensities.  Everything downstream (Tikhonov, compressive sensing, the
CNNs) inverts that map.

Sampling ratio convention
-------------------------
The ratio is defined here as ``X_pixels / Y_wavelengths``: 25/43 = 0.58
for a 5x5 region of interest with 43 channels, 400/43 = 9.30 for 20x20.
Values below 1 are the undersampled (compressive) regime, above 1
oversampled.  Note the *numeric* convention: prose sometimes writes the
same quantity as "wavelengths to pixels", but 0.58 and 9.30 only come
out of pixels/wavelengths, so that is what we use everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import DimensionError
from .validation import as_image, as_spectrum, check_nonnegative

__all__ = [
    "Spectrum",
    "SpeckleImage",
    "TransmissionMatrix",
    "SamplingRatio",
    "render_speckle",
    "crop_roi",
    "crop_matrix",
    "normalize_image",
]

DEFAULT_N_CHANNELS = 43


@dataclass(frozen=True)
class Spectrum:
    """Non-negative intensity per wavelength channel.

    ``values`` is typically peak-normalized to 1.  The number of non-zero
    channels is the sparsity level of the spectrum (dense = all channels).
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionError(f"spectrum must be 1-D, got {arr.shape}")
        check_nonnegative(arr, "spectrum")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.values))

    def peak_normalized(self) -> "Spectrum":
        peak = self.values.max()
        return self if peak in (0.0, 1.0) else Spectrum(self.values / peak)


@dataclass(frozen=True)
class SpeckleImage:
    """Monochrome ROI pixel intensities plus the crop offset into the parent frame."""

    pixels: np.ndarray
    roi_origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"image must be 2-D, got {arr.shape}")
        check_nonnegative(arr, "image")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)
        object.__setattr__(self, "roi_origin", (int(self.roi_origin[0]), int(self.roi_origin[1])))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    @property
    def n_pixels(self) -> int:
        return self.pixels.size


@dataclass(frozen=True)
class SamplingRatio:
    """Pixels-per-wavelength-channel ratio X/Y (see module docstring)."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"sampling ratio must be positive, got {self.value}")

    @classmethod
    def from_counts(cls, n_pixels: int, n_channels: int) -> "SamplingRatio":
        return cls(n_pixels / n_channels)

    @property
    def oversampled(self) -> bool:
        return self.value > 1.0


@dataclass(frozen=True)
class TransmissionMatrix:
    """Per-fiber map from wavelength channels to ROI pixels.

    ``matrix`` has shape ``(X, Y)`` with X = h*w pixels; column ``j`` is
    the vectorized (row-major) speckle pattern of channel ``j``.  All
    entries are non-negative intensities.
    """

    matrix: np.ndarray
    roi_shape: Tuple[int, int]
    wavelength_labels: Optional[List[str]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        h, w = self.roi_shape
        if arr.ndim != 2:
            raise DimensionError(f"matrix must be 2-D, got {arr.shape}")
        if arr.shape[0] != h * w:
            raise DimensionError(
                f"matrix has {arr.shape[0]} rows but roi_shape {self.roi_shape} implies {h * w}"
            )
        check_nonnegative(arr, "transmission matrix")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "matrix", arr)
        object.__setattr__(self, "roi_shape", (int(h), int(w)))
        labels = self.wavelength_labels
        if labels is not None:
            labels = [str(x) for x in labels]
            if len(labels) != arr.shape[1]:
                raise DimensionError(
                    f"{len(labels)} wavelength labels for {arr.shape[1]} channels"
                )
        object.__setattr__(self, "wavelength_labels", labels)

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[1]

    @property
    def sampling_ratio(self) -> SamplingRatio:
        return SamplingRatio.from_counts(self.n_pixels, self.n_channels)

    def labels(self) -> List[str]:
        if self.wavelength_labels is not None:
            return list(self.wavelength_labels)
        return [str(j) for j in range(self.n_channels)]

    def column_image(self, j: int) -> SpeckleImage:
        """Speckle pattern of a single wavelength channel."""
        return SpeckleImage(self.matrix[:, j].reshape(self.roi_shape))

    def content_hash(self) -> str:
        """Stable provenance hash over shape and payload."""
        digest = hashlib.sha256()
        digest.update(np.asarray(self.matrix.shape, dtype=np.int64).tobytes())
        digest.update(np.asarray(self.roi_shape, dtype=np.int64).tobytes())
        digest.update(self.matrix.tobytes())
        return digest.hexdigest()[:16]


def render_speckle(A: TransmissionMatrix, s) -> SpeckleImage:
    """Render the speckle image of a spectrum: ``reshape(A @ s)``.

    Linear in ``s``; a delta spectrum reproduces the corresponding matrix
    column.  Raises :class:`DimensionError` when the channel counts differ.
    """
    vec = as_spectrum(s)
    if vec.shape[0] != A.n_channels:
        raise DimensionError(
            f"spectrum has {vec.shape[0]} channels, matrix expects {A.n_channels}"
        )
    pixels = A.matrix @ vec
    return SpeckleImage(pixels.reshape(A.roi_shape))


def crop_roi(frame, origin: Tuple[int, int], shape: Tuple[int, int]) -> SpeckleImage:
    """Crop a window out of a larger frame, recording the offset.

    The window must lie fully inside the frame; out-of-bounds requests
    raise :class:`DimensionError` naming the offending coordinates.
    """
    pixels = as_image(frame, name="frame")
    r0, c0 = int(origin[0]), int(origin[1])
    h, w = int(shape[0]), int(shape[1])
    H, W = pixels.shape
    if r0 < 0 or c0 < 0 or r0 + h > H or c0 + w > W:
        raise DimensionError(
            f"crop window origin=({r0},{c0}) shape=({h},{w}) exceeds frame bounds ({H},{W})"
        )
    parent_origin = getattr(frame, "roi_origin", (0, 0))
    return SpeckleImage(
        pixels[r0 : r0 + h, c0 : c0 + w],
        roi_origin=(parent_origin[0] + r0, parent_origin[1] + c0),
    )


def crop_matrix(A: TransmissionMatrix, origin: Tuple[int, int], shape: Tuple[int, int]) -> TransmissionMatrix:
    """Restrict a transmission matrix to a sub-window of its ROI.

    Equivalent to cropping every rendered image: ``render(crop_matrix(A)) ==
    crop(render(A))`` holds exactly.
    """
    r0, c0 = int(origin[0]), int(origin[1])
    h, w = int(shape[0]), int(shape[1])
    H, W = A.roi_shape
    if r0 < 0 or c0 < 0 or r0 + h > H or c0 + w > W:
        raise DimensionError(
            f"crop window origin=({r0},{c0}) shape=({h},{w}) exceeds ROI bounds ({H},{W})"
        )
    cols = A.matrix.reshape(H, W, A.n_channels)[r0 : r0 + h, c0 : c0 + w, :]
    return TransmissionMatrix(
        cols.reshape(h * w, A.n_channels),
        roi_shape=(h, w),
        wavelength_labels=A.wavelength_labels,
        seed=A.seed,
    )


def center_origin(parent_shape: Tuple[int, int], roi_shape: Tuple[int, int]) -> Tuple[int, int]:
    """Origin that centers ``roi_shape`` inside ``parent_shape``."""
    return ((parent_shape[0] - roi_shape[0]) // 2, (parent_shape[1] - roi_shape[1]) // 2)


def normalize_image(pixels: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Scale-invariant preprocessing used by the CNN backends: x/mean(x) - 1.

    A zero image maps to zeros.  Writes into ``out`` when given (hot path).
    """
    mean = pixels.mean()
    if out is None:
        out = np.empty_like(pixels, dtype=pixels.dtype)
    if mean > 0:
        np.divide(pixels, mean, out=out)
        np.subtract(out, 1.0, out=out)
    else:
        out[...] = 0.0
    return out
