"""Labeled dataset synthesis.

Datasets pair rendered speckle images with the spectra that produced
them.  Spectra come from one of two samplers:

* :class:`SparseSampler` — a fixed number (or range) of non-zero
  channels at uniform random positions with uniform amplitudes;
* :class:`DenseSampler` — a clamped random walk across channels, giving
  smooth spectra with energy everywhere.

Both peak-normalize to 1 by default, and the networks are trained
against the normalized labels.  Optional perturbations model camera
noise (Gaussian, sigma referenced to the clean image mean) and spatial
drift (the crop window moves by one pixel in a random direction).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .core import SpeckleImage, Spectrum, TransmissionMatrix, crop_roi, render_speckle
from .errors import ConfigError, DataError, DimensionError
from .iofmt import read_image_stack, read_manifest, write_image_stack, write_manifest
from .rng import Rng
from .specklegen import FiberArrayModel
from .validation import as_image

__all__ = [
    "SparseSampler",
    "DenseSampler",
    "Perturbation",
    "Dataset",
    "sample_sparse_spectrum",
    "sample_dense_spectrum",
    "add_noise",
    "shift_roi",
    "build_dataset",
    "default_split",
    "encode_rgb_images",
    "save_dataset",
    "load_dataset",
]

# The 8 unit displacements of a one-pixel shift (diagonals included).
SHIFT_DIRECTIONS: Tuple[Tuple[int, int], ...] = (
    (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1),
)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, Rng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return Rng(rng).generator


@dataclass(frozen=True)
class SparseSampler:
    """Spectra with ``n_lambda`` non-zero channels (int or inclusive range)."""

    n_lambda: Union[int, Tuple[int, int]] = 10
    normalize_peak: bool = True

    def bounds(self, n_channels: int) -> Tuple[int, int]:
        if isinstance(self.n_lambda, tuple):
            lo, hi = self.n_lambda
        else:
            lo = hi = self.n_lambda
        if not (1 <= lo <= hi <= n_channels):
            raise ConfigError(
                f"n_lambda range ({lo},{hi}) outside [1, {n_channels}]"
            )
        return int(lo), int(hi)

    def sample(self, gen: np.random.Generator, n_channels: int) -> np.ndarray:
        lo, hi = self.bounds(n_channels)
        n = int(gen.integers(lo, hi + 1)) if hi > lo else lo
        values = np.zeros(n_channels)
        support = gen.choice(n_channels, size=n, replace=False)
        # Amplitudes uniform on (0, 1]: 1 - U[0, 1) excludes exact zeros.
        values[support] = 1.0 - gen.random(n)
        if self.normalize_peak:
            values /= values.max()
        return values

    def describe(self) -> str:
        if isinstance(self.n_lambda, tuple):
            return f"sparse:{self.n_lambda[0]}..{self.n_lambda[1]}"
        return f"sparse:{self.n_lambda}"


@dataclass(frozen=True)
class DenseSampler:
    """Clamped-random-walk spectra: smooth, all channels populated."""

    walk_step: float = 0.2
    normalize_peak: bool = True

    def __post_init__(self):
        if not 0.0 < self.walk_step <= 1.0:
            raise ConfigError(f"walk_step must be in (0, 1], got {self.walk_step}")

    def sample(self, gen: np.random.Generator, n_channels: int) -> np.ndarray:
        values = np.empty(n_channels)
        level = gen.random()
        values[0] = level
        steps = self.walk_step * gen.uniform(-1.0, 1.0, size=n_channels - 1)
        for j in range(1, n_channels):
            level = min(max(level + steps[j - 1], 0.0), 1.0)
            values[j] = level
        if self.normalize_peak:
            peak = values.max()
            if peak > 0:
                values /= peak
        return values

    def describe(self) -> str:
        return f"dense:{self.walk_step}"


def sample_sparse_spectrum(rng, n_channels: int, n_lambda: int) -> Spectrum:
    """One sparse spectrum: ``n_lambda`` non-zero channels, peak 1."""
    values = SparseSampler(n_lambda).sample(_as_generator(rng), n_channels)
    return Spectrum(values)


def sample_dense_spectrum(rng, n_channels: int, walk_step: float = 0.2) -> Spectrum:
    """One dense random-walk spectrum, peak-normalized."""
    values = DenseSampler(walk_step).sample(_as_generator(rng), n_channels)
    return Spectrum(values)


@dataclass(frozen=True)
class Perturbation:
    """Measurement imperfections applied when building a dataset."""

    noise_level: float = 0.0
    shift_one_pixel: bool = False

    def __post_init__(self):
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError(f"noise_level must be in [0, 1], got {self.noise_level}")

    @property
    def active(self) -> bool:
        return self.noise_level > 0 or self.shift_one_pixel

    def describe(self) -> str:
        return f"noise={self.noise_level},shift={self.shift_one_pixel}"


def add_noise(image, p: float, rng) -> SpeckleImage:
    """Add Gaussian intensity noise with sigma = p * mean(clean), clamped at 0."""
    if p < 0:
        raise ConfigError(f"noise level must be >= 0, got {p}")
    pixels = as_image(image)
    origin = getattr(image, "roi_origin", (0, 0))
    if p == 0:
        return SpeckleImage(pixels, roi_origin=origin)
    gen = _as_generator(rng)
    sigma = p * pixels.mean()
    noisy = pixels + gen.normal(0.0, sigma, size=pixels.shape)
    return SpeckleImage(np.maximum(noisy, 0.0), roi_origin=origin)


def shift_roi(parent_frame, roi_origin: Tuple[int, int], roi_shape: Tuple[int, int], rng) -> SpeckleImage:
    """Crop at ``roi_origin`` displaced by one pixel in a random direction.

    The parent frame must leave at least one pixel of margin on every side
    of the ROI so all 8 displacements stay in bounds.
    """
    pixels = as_image(parent_frame, name="parent frame")
    H, W = pixels.shape
    r0, c0 = int(roi_origin[0]), int(roi_origin[1])
    h, w = int(roi_shape[0]), int(roi_shape[1])
    if r0 < 1 or c0 < 1 or r0 + h + 1 > H or c0 + w + 1 > W:
        raise DimensionError(
            f"ROI origin=({r0},{c0}) shape=({h},{w}) needs a 1-pixel margin "
            f"inside frame ({H},{W})"
        )
    gen = _as_generator(rng)
    dr, dc = SHIFT_DIRECTIONS[int(gen.integers(len(SHIFT_DIRECTIONS)))]
    return crop_roi(parent_frame, (r0 + dr, c0 + dc), (h, w))


@dataclass
class Dataset:
    """Paired (image, spectrum) samples with a train/val/test split."""

    images: np.ndarray  # (n, h, w)
    spectra: np.ndarray  # (n, Y)
    split: Tuple[int, int, int]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.shape[0] != self.spectra.shape[0]:
            raise DimensionError(
                f"{self.images.shape[0]} images vs {self.spectra.shape[0]} spectra"
            )
        if sum(self.split) != self.images.shape[0]:
            raise ConfigError(
                f"split {self.split} does not sum to sample count {self.images.shape[0]}"
            )
        self.split = tuple(int(x) for x in self.split)

    @property
    def n_samples(self) -> int:
        return self.images.shape[0]

    @property
    def roi_shape(self) -> Tuple[int, int]:
        return self.images.shape[1:]

    @property
    def n_channels(self) -> int:
        return self.spectra.shape[1]

    def _bounds(self, part: str) -> Tuple[int, int]:
        n_train, n_val, n_test = self.split
        return {
            "train": (0, n_train),
            "val": (n_train, n_train + n_val),
            "test": (n_train + n_val, n_train + n_val + n_test),
        }[part]

    def part(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self._bounds(name)
        return self.images[lo:hi], self.spectra[lo:hi]

    @property
    def train(self):
        return self.part("train")

    @property
    def val(self):
        return self.part("val")

    @property
    def test(self):
        return self.part("test")


def default_split(n_samples: int) -> Tuple[int, int, int]:
    """Validation and test capped at 1000 samples each, rest trains.

    Reproduces both reference points: 31000 -> (29000, 1000, 1000) and the
    desk-scale 11000 -> (9000, 1000, 1000).
    """
    held = min(1000, max(1, n_samples // 11))
    if n_samples < 3:
        raise ConfigError(f"need at least 3 samples to split, got {n_samples}")
    return (n_samples - 2 * held, held, held)


def build_dataset(
    A: TransmissionMatrix,
    sampler,
    n_samples: int,
    split: Optional[Tuple[int, int, int]] = None,
    perturbation: Optional[Perturbation] = None,
    rng: Optional[Rng] = None,
    roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None,
) -> Dataset:
    """Render ``n_samples`` labeled speckles from transmission matrix ``A``.

    ``roi = (origin, shape)`` crops each rendered frame; it is required
    when the perturbation shifts the window (``A`` must then describe the
    parent frame with at least one pixel of margin).  Per-sample random
    streams are split from ``rng``, so results are reproducible and
    independent of evaluation order.
    """
    if rng is None:
        raise ConfigError("build_dataset requires a seeded Rng")
    if split is None:
        split = default_split(n_samples)
    if sum(split) != n_samples:
        raise ConfigError(f"split {split} does not sum to {n_samples}")
    perturbation = perturbation or Perturbation()
    if perturbation.shift_one_pixel and roi is None:
        raise ConfigError("shift perturbation requires an explicit roi window")

    out_shape = tuple(roi[1]) if roi is not None else A.roi_shape
    images = np.empty((n_samples,) + out_shape)
    spectra = np.empty((n_samples, A.n_channels))
    children = rng.split(n_samples)
    for i, child in enumerate(children):
        gen = child.generator
        s = sampler.sample(gen, A.n_channels)
        frame = render_speckle(A, s)
        if perturbation.shift_one_pixel:
            image = shift_roi(frame, roi[0], roi[1], gen)
        elif roi is not None:
            image = crop_roi(frame, roi[0], roi[1])
        else:
            image = frame
        pixels = image.pixels
        if perturbation.noise_level > 0:
            pixels = add_noise(image, perturbation.noise_level, gen).pixels
        images[i] = pixels
        spectra[i] = s

    provenance = {
        "seed": rng.seed,
        "n_samples": n_samples,
        "split": ",".join(str(x) for x in split),
        "sampler": sampler.describe(),
        "perturbation": perturbation.describe(),
        "matrix_hash": A.content_hash(),
        "roi": "full" if roi is None else f"{roi[0][0]},{roi[0][1]}+{roi[1][0]}x{roi[1][1]}",
    }
    return Dataset(images, spectra, split, provenance)


def build_multifiber_dataset(
    fibers: Sequence[TransmissionMatrix],
    sampler,
    n_samples: int,
    split: Optional[Tuple[int, int, int]] = None,
    rng: Optional[Rng] = None,
    perturbation: Optional[Perturbation] = None,
    roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None,
) -> Dataset:
    """Grouped dataset for the multi-fiber networks.

    Each sample stacks one independent spectrum-and-speckle per fiber:
    images are ``(n, h, w, n_fibers)`` and labels are the concatenated
    spectra ``(n, n_fibers * Y)``.
    """
    if rng is None:
        raise ConfigError("build_multifiber_dataset requires a seeded Rng")
    parts = [
        build_dataset(A, sampler, n_samples, split=split, perturbation=perturbation,
                      rng=rng.spawn(), roi=roi)
        for A in fibers
    ]
    images = np.stack([p.images for p in parts], axis=-1)
    spectra = np.concatenate([p.spectra for p in parts], axis=1)
    provenance = dict(parts[0].provenance)
    provenance.update({
        "seed": rng.seed,
        "n_fibers": len(fibers),
        "matrix_hash": ",".join(p.provenance["matrix_hash"] for p in parts),
    })
    return Dataset(images, spectra, parts[0].split, provenance)


def encode_rgb_images(
    images: Sequence[np.ndarray],
    array: FiberArrayModel,
    n_channels: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Encode RGB rasters into per-position spectra and render their speckles.

    Image ``k``'s red, green, blue planes land in channels ``3k``,
    ``3k+1``, ``3k+2``; the last channel stays blank as a cross-talk
    control.  Every raster position corresponds to one fiber of ``array``
    and gets a single speckle image carrying all encoded images at once.

    Returns ``(speckles, spectra)`` with shapes ``(n_pos, h, w)`` and
    ``(n_pos, Y)``.
    """
    Y = n_channels or array.n_channels
    if Y < 43:
        raise ConfigError(f"RGB encoding needs at least 43 channels, got {Y}")
    if array.n_channels != Y:
        raise ConfigError(f"array has {array.n_channels} channels, expected {Y}")
    if 3 * len(images) + 1 > Y:
        raise ConfigError(f"{len(images)} RGB images exceed {Y - 1} usable channels")
    rows, cols = array.grid_layout
    rasters = []
    for k, img in enumerate(images):
        arr = np.asarray(img, dtype=np.float64)
        if arr.shape != (rows, cols, 3):
            raise DimensionError(
                f"image {k} has shape {arr.shape}, expected {(rows, cols, 3)} to match the array grid"
            )
        if arr.min() < 0:
            raise ValueError(f"image {k} has negative intensities")
        rasters.append(arr)
    n_positions = rows * cols
    if n_positions > array.n_fibers:
        raise ConfigError(f"grid {rows}x{cols} exceeds {array.n_fibers} fibers")

    h, w = array.roi_shape
    spectra = np.zeros((n_positions, Y))
    speckles = np.empty((n_positions, h, w))
    for p in range(n_positions):
        r, c = divmod(p, cols)
        for k, raster in enumerate(rasters):
            spectra[p, 3 * k : 3 * k + 3] = raster[r, c]
        speckles[p] = render_speckle(array.fibers[p], spectra[p]).pixels
    return speckles, spectra


# ---------------------------------------------------------------------------
# on-disk layout: manifest + labels CSV + packed image binary
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    images = dataset.images
    fibers_per_sample = 1
    if images.ndim == 4:
        # Multi-fiber stacks flatten to (n * fibers, h, w) on disk.
        fibers_per_sample = images.shape[3]
        images = np.ascontiguousarray(np.moveaxis(images, 3, 1)).reshape(
            -1, images.shape[1], images.shape[2]
        )
    write_image_stack(os.path.join(directory, "images.spkd"), images)
    with open(os.path.join(directory, "labels.csv"), "w", encoding="utf-8") as fh:
        for row in dataset.spectra:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    manifest = dict(dataset.provenance)
    manifest.update(
        {
            "split": ",".join(str(x) for x in dataset.split),
            "n_samples": dataset.n_samples,
            "roi_shape": f"{dataset.roi_shape[0]}x{dataset.roi_shape[1]}",
            "n_channels": dataset.n_channels,
            "fibers_per_sample": fibers_per_sample,
        }
    )
    write_manifest(os.path.join(directory, "manifest.txt"), manifest)


def load_dataset(directory) -> Dataset:
    manifest = read_manifest(os.path.join(directory, "manifest.txt"))
    images = read_image_stack(os.path.join(directory, "images.spkd"))
    fibers_per_sample = int(manifest.get("fibers_per_sample", 1))
    if fibers_per_sample > 1:
        n = images.shape[0] // fibers_per_sample
        images = np.ascontiguousarray(np.moveaxis(
            images.reshape(n, fibers_per_sample, images.shape[1], images.shape[2]), 1, 3
        ))
    spectra = []
    with open(os.path.join(directory, "labels.csv"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                spectra.append([float(x) for x in line.split(",")])
    spectra = np.asarray(spectra)
    if spectra.shape[0] != images.shape[0]:
        raise DataError(
            f"{images.shape[0]} images but {spectra.shape[0]} label rows"
        )
    split = tuple(int(x) for x in manifest["split"].split(","))
    return Dataset(images, spectra, split, provenance=dict(manifest))
