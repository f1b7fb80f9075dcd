"""Synthetic per-fiber transmission matrices.

Measured calibration data is not always at hand, so this module builds
matrices from a random-mode-superposition model that reproduces the two
properties the reconstruction backends actually rely on:

* wavelength decorrelation — the speckle pattern changes with channel
  index, with a tunable correlation length, and
* per-fiber individuality — independently seeded fibers produce
  statistically unrelated speckles.

Channel ``j`` of a fiber is rendered as the intensity of a coherent mode
sum::

    I_j(r) = | sum_k  a_k * phi_k(r) * exp(i * beta_k * j) |^2

where ``phi_k`` are products of low-order 2-D harmonics under a soft
circular core aperture, the complex amplitudes ``a_k`` are circular
normal with power decreasing in mode order (low-order structure carries
most of the light, as in a real fiber near its launch condition), and
the per-mode dephasing rates ``beta_k`` are drawn from
``N(0, 1/decorrelation_length)``.  With many modes the mean intensity
correlation between channels ``j`` and ``j + d`` is approximately
``exp(-(d / decorrelation_length)^2)``, i.e. it falls below 1/e at a
channel separation of one decorrelation length.

Harmonic orders are capped at ``max_order`` per axis (extra modes reuse
orders with fresh random phases), fixing the speckle grain at roughly
``roi_extent / max_order`` pixels.  The grain is what separates the
sampling regimes: a crop a few grains across supports sparse recovery
but carries too few effective degrees of freedom for dense analytical
inversion — the same geometry the reconstruction comparisons probe.

Each pattern is flat-fielded by the incoherent mode envelope (the
channel-averaged illumination, a pure diagonal rescale of the matrix
rows) and every column is normalized to unit mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .core import TransmissionMatrix
from .errors import ConfigError
from .rng import Rng

__all__ = [
    "FiberModel",
    "FiberArrayModel",
    "generate_fiber",
    "generate_array",
    "spectral_correlation",
]


@dataclass(frozen=True)
class FiberModel:
    """Generation parameters for one fiber core.

    ``core_radius_px = None`` picks a radius that keeps the whole ROI
    inside the illuminated core (no dead pixels in the crop window).
    ``max_order`` caps the harmonic order per axis and thereby sets the
    speckle grain size; ``mode_power`` is the exponent of the power
    roll-off toward higher orders.
    """

    n_modes: int = 64
    core_radius_px: Optional[float] = None
    decorrelation_length: float = 1.0
    seed: int = 0
    max_order: int = 4
    mode_power: float = 0.75

    def __post_init__(self):
        # n_modes == 1 is the documented single-mode limiting case.
        if self.n_modes < 1:
            raise ConfigError(f"n_modes must be >= 1, got {self.n_modes}")
        if not self.decorrelation_length > 0:
            raise ConfigError(
                f"decorrelation_length must be positive, got {self.decorrelation_length}"
            )
        if self.max_order < 1:
            raise ConfigError(f"max_order must be >= 1, got {self.max_order}")

    def with_seed(self, seed: int) -> "FiberModel":
        return FiberModel(self.n_modes, self.core_radius_px, self.decorrelation_length,
                          seed, self.max_order, self.mode_power)


@dataclass(frozen=True)
class FiberArrayModel:
    """An ordered set of per-fiber matrices arranged on a grid."""

    fibers: Tuple[TransmissionMatrix, ...]
    grid_layout: Tuple[int, int]
    spacing_px: int = 1

    def __post_init__(self):
        fibers = tuple(self.fibers)
        if not fibers:
            raise ConfigError("fiber array needs at least one fiber")
        shape = fibers[0].roi_shape
        channels = fibers[0].n_channels
        for i, f in enumerate(fibers):
            if f.roi_shape != shape or f.n_channels != channels:
                raise ConfigError(
                    f"fiber {i} has roi={f.roi_shape} channels={f.n_channels}, "
                    f"expected roi={shape} channels={channels}"
                )
        rows, cols = self.grid_layout
        if rows * cols < len(fibers):
            raise ConfigError(
                f"grid {rows}x{cols} cannot hold {len(fibers)} fibers"
            )
        object.__setattr__(self, "fibers", fibers)
        object.__setattr__(self, "grid_layout", (int(rows), int(cols)))

    @property
    def n_fibers(self) -> int:
        return len(self.fibers)

    @property
    def roi_shape(self) -> Tuple[int, int]:
        return self.fibers[0].roi_shape

    @property
    def n_channels(self) -> int:
        return self.fibers[0].n_channels

    def fiber_origin(self, i: int) -> Tuple[int, int]:
        """Top-left pixel of fiber ``i``'s cell in the assembled frame."""
        rows, cols = self.grid_layout
        h, w = self.roi_shape
        s = self.spacing_px
        r, c = divmod(i, cols)
        return (s + r * (h + s), s + c * (w + s))

    @property
    def frame_shape(self) -> Tuple[int, int]:
        rows, cols = self.grid_layout
        h, w = self.roi_shape
        s = self.spacing_px
        return (s + rows * (h + s), s + cols * (w + s))


def _mode_orders(n_modes: int, max_order: int) -> np.ndarray:
    """``n_modes`` harmonic order pairs, lowest spatial frequency first.

    Orders are capped at ``max_order`` per axis; when more modes are
    requested than distinct pairs exist, orders repeat (each repeat gets
    independent random phases, so the profiles stay distinct).
    """
    pairs = [
        (nx, ny)
        for nx in range(max_order + 1)
        for ny in range(max_order + 1)
        if nx + ny > 0
    ]
    pairs.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))
    return np.asarray([pairs[k % len(pairs)] for k in range(n_modes)], dtype=np.int64)


def _mode_profiles(model: FiberModel, roi_shape: Tuple[int, int], gen: np.random.Generator) -> np.ndarray:
    """Stack of real mode profiles, shape (h*w, n_modes)."""
    h, w = roi_shape
    orders = _mode_orders(model.n_modes, model.max_order)
    # Pixel-center coordinates relative to the ROI center.
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cy, cx = h / 2.0, w / 2.0
    radius = model.core_radius_px
    if radius is None:
        radius = 0.62 * math.hypot(h, w)
    r = np.hypot(yy - cy, xx - cx)
    # Soft super-Gaussian aperture: flat in the core, fast roll-off at the edge.
    mask = np.exp(-((r / radius) ** 8))
    phase_x = gen.uniform(0.0, 2.0 * np.pi, size=model.n_modes)
    phase_y = gen.uniform(0.0, 2.0 * np.pi, size=model.n_modes)
    profiles = np.empty((h * w, model.n_modes))
    for k, (nx, ny) in enumerate(orders):
        mode = (
            np.cos(np.pi * nx * xx / w + phase_x[k])
            * np.cos(np.pi * ny * yy / h + phase_y[k])
            * mask
        )
        profiles[:, k] = mode.ravel()
    return profiles


def generate_fiber(
    model: FiberModel,
    roi_shape: Tuple[int, int] = (20, 20),
    n_channels: int = 43,
) -> TransmissionMatrix:
    """Generate one fiber's transmission matrix.

    Deterministic in ``model.seed``.  Raises :class:`ConfigError` when the
    mode basis exceeds the pixel count (underdetermined mode basis).
    """
    h, w = int(roi_shape[0]), int(roi_shape[1])
    if h < 1 or w < 1:
        raise ConfigError(f"roi_shape must be positive, got {roi_shape}")
    if n_channels < 2:
        raise ConfigError(f"n_channels must be >= 2, got {n_channels}")
    if model.n_modes > h * w:
        raise ConfigError(
            f"n_modes={model.n_modes} exceeds pixel count {h * w}: mode basis underdetermined"
        )
    gen = Rng(model.seed).generator
    profiles = _mode_profiles(model, (h, w), gen)
    amplitudes = (
        gen.normal(size=model.n_modes) + 1j * gen.normal(size=model.n_modes)
    ) / math.sqrt(2.0)
    if model.mode_power > 0:
        orders = _mode_orders(model.n_modes, model.max_order)
        weights = (orders[:, 0] ** 2 + orders[:, 1] ** 2).astype(np.float64)
        amplitudes = amplitudes * weights ** (-model.mode_power / 2.0)
    betas = gen.normal(0.0, 1.0 / model.decorrelation_length, size=model.n_modes)
    # field[:, j] = sum_k profiles[:, k] * a_k * exp(i * beta_k * j)
    phases = np.exp(1j * np.outer(betas, np.arange(n_channels)))
    field = (profiles * amplitudes[None, :]) @ phases
    intensity = np.abs(field) ** 2
    # Flat-field by the incoherent mode envelope (the channel-averaged
    # illumination).  This removes the spatial structure every channel
    # shares, so inter-channel Pearson correlation reflects the coherent
    # dephasing alone; for the inverse problem it is only a diagonal
    # rescale of the matrix rows.
    envelope = (profiles**2) @ np.abs(amplitudes) ** 2
    envelope = np.maximum(envelope, 1e-6 * envelope.max())
    intensity /= envelope[:, None]
    intensity /= intensity.mean(axis=0, keepdims=True)
    return TransmissionMatrix(
        intensity,
        roi_shape=(h, w),
        seed=model.seed,
    )


def generate_array(
    rng: Rng,
    n_fibers: int,
    model_template: FiberModel = FiberModel(),
    roi_shape: Tuple[int, int] = (20, 20),
    n_channels: int = 43,
    grid_layout: Optional[Tuple[int, int]] = None,
    spacing_px: int = 1,
) -> FiberArrayModel:
    """Generate ``n_fibers`` independently seeded fibers on a grid.

    Per-fiber seeds are split from ``rng``, so the array is deterministic
    under its root seed and fibers stay independent however generation is
    parallelized.
    """
    if n_fibers < 1:
        raise ConfigError(f"n_fibers must be >= 1, got {n_fibers}")
    if grid_layout is None:
        rows = int(math.floor(math.sqrt(n_fibers))) or 1
        cols = int(math.ceil(n_fibers / rows))
        grid_layout = (rows, cols)
    children = rng.split(n_fibers)
    fibers = []
    for child in children:
        child_seed = child.generator.integers(0, 2**63 - 1)
        fibers.append(
            generate_fiber(model_template.with_seed(int(child_seed)), roi_shape, n_channels)
        )
    return FiberArrayModel(tuple(fibers), grid_layout, spacing_px)


def spectral_correlation(A: TransmissionMatrix) -> np.ndarray:
    """Mean Pearson correlation between channel pairs vs. channel separation.

    Entry ``d`` averages the correlation of columns ``j`` and ``j + d``
    over all valid ``j``; entry 0 is exactly 1.
    """
    mat = A.matrix
    X, Y = mat.shape
    centered = mat - mat.mean(axis=0, keepdims=True)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    norms[norms == 0] = 1.0  # constant column: correlation contribution 0
    z = centered / norms
    corr = z.T @ z
    out = np.empty(Y)
    out[0] = 1.0
    for d in range(1, Y):
        out[d] = np.mean(np.diagonal(corr, offset=d))
    return out
