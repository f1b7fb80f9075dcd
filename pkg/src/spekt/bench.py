"""Reconstruction-quality metrics and benchmark drivers.

The quality metric throughout is the Pearson cross-correlation between a
reconstructed spectrum and its ground truth; 0.5 is the threshold below
which a reconstruction counts as failed.  Drivers produce plain rows
(lists of dicts) that the CLI writes as CSV; no plotting here.

Deep-learning cells retrain a network per condition, which is the
expensive part of any sweep — the :class:`DlBudget` bundles the desk
scale knobs (samples, epochs) so full-scale runs are one flag away.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import TransmissionMatrix, center_origin, crop_matrix
from .cs import CompressiveSensingReconstructor
from .errors import ConfigError, DimensionError
from .linear import TikhonovReconstructor
from .nn import CnnReconstructor
from .rng import Rng
from .synth import (
    DenseSampler,
    Perturbation,
    SparseSampler,
    build_dataset,
    encode_rgb_images,
)

__all__ = [
    "cross_correlation",
    "mean_correlation",
    "EvalReport",
    "DlBudget",
    "make_eval_set",
    "fit_method",
    "sweep_sampling",
    "compare_methods",
    "robustness_noise",
    "robustness_shift",
    "rgb_scenario",
    "write_rows_csv",
]

FAILURE_THRESHOLD = 0.5


def cross_correlation(s, t) -> float:
    """Pearson correlation of two spectra.

    Conventions for degenerate inputs: two equal constant vectors
    correlate perfectly (1.0); if exactly one side is constant there is
    nothing to correlate against (0.0).
    """
    a = np.asarray(getattr(s, "values", s), dtype=np.float64)
    b = np.asarray(getattr(t, "values", t), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise DimensionError(f"need equal-length vectors (>= 2), got {a.shape} and {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(da @ da)
    nb = np.sqrt(db @ db)
    if na == 0.0 and nb == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def mean_correlation(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean([cross_correlation(p, t) for p, t in zip(pred, truth)]))


@dataclass
class EvalReport:
    """Per-sample correlations with their summary statistics."""

    correlations: np.ndarray
    settings: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, pred: np.ndarray, truth: np.ndarray,
                         settings: Optional[Dict[str, object]] = None) -> "EvalReport":
        corr = np.asarray([cross_correlation(p, t) for p, t in zip(pred, truth)])
        return cls(corr, dict(settings or {}))

    @property
    def mean(self) -> float:
        return float(self.correlations.mean())

    @property
    def std(self) -> float:
        return float(self.correlations.std())

    @property
    def n(self) -> int:
        return int(self.correlations.size)

    @property
    def failure_fraction(self) -> float:
        return float(np.mean(self.correlations < FAILURE_THRESHOLD))

    def row(self) -> Dict[str, object]:
        out = dict(self.settings)
        out.update(mean=self.mean, std=self.std, n=self.n,
                   failure_fraction=self.failure_fraction)
        return out


@dataclass(frozen=True)
class DlBudget:
    """Training budget for benchmark cells (desk-scale defaults)."""

    n_samples: int = 4400
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    precision: str = "f32"
    verbose: bool = False


def make_eval_set(A: TransmissionMatrix, sampler, n: int, rng: Rng,
                  perturbation: Optional[Perturbation] = None,
                  roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None):
    """Held-out evaluation pairs rendered independently of any training set."""
    ds = build_dataset(A, sampler, n, split=(0, 0, n), perturbation=perturbation,
                       rng=rng, roi=roi)
    return ds.test


def fit_method(method: str, A: TransmissionMatrix, rng: Rng,
               sampler=None, budget: DlBudget = DlBudget(),
               perturbation: Optional[Perturbation] = None,
               roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None,
               seed: int = 0):
    """Build a fitted reconstructor for ``A``.

    ``tr`` and ``cs`` fit analytically from the matrix alone (their
    defaults are the out-of-the-box configuration).  ``dl`` synthesizes a
    training dataset from ``sampler`` (with ``perturbation`` baked in for
    the robustness-trained variants) and trains a CNN under ``budget``.
    """
    target = A if roi is None else crop_matrix(A, roi[0], roi[1])
    if method == "tr":
        return TikhonovReconstructor(target).fit()
    if method == "cs":
        return CompressiveSensingReconstructor(target).fit()
    if method == "dl":
        if sampler is None:
            raise ConfigError("dl method needs a spectrum sampler for training data")
        ds = build_dataset(A, sampler, budget.n_samples, perturbation=perturbation,
                           rng=rng.spawn(), roi=roi)
        est = CnnReconstructor(
            n_channels=A.n_channels, epochs=budget.epochs,
            batch_size=budget.batch_size, learning_rate=budget.learning_rate,
            precision=budget.precision, seed=seed, verbose=budget.verbose,
        )
        est.fit(*ds.train, validation_data=ds.val)
        return est
    raise ConfigError(f"unknown method {method!r} (expected tr, cs, or dl)")


def _eval_method(est, images, spectra, settings) -> EvalReport:
    pred = est.predict(images)
    return EvalReport.from_predictions(pred, spectra, settings)


def sweep_sampling(
    matrices: Sequence[TransmissionMatrix],
    method: str,
    roi_sizes: Sequence[int],
    n_lambda_list: Sequence[int],
    n_spectra: int,
    rng: Rng,
    budget: DlBudget = DlBudget(),
) -> List[Dict[str, object]]:
    """Reconstruction quality vs. sampling ratio and spectral density.

    Square ROI crops of the stored matrices realize each ratio; the
    method is refit (or retrained) per crop.  Rows report mean/std over
    ``n_spectra`` spectra per fiber, pooled across the supplied fibers.
    """
    rows = []
    for roi_size in roi_sizes:
        for n_lambda in n_lambda_list:
            corrs = []
            for A in matrices:
                h, w = A.roi_shape
                if roi_size > h or roi_size > w:
                    raise ConfigError(
                        f"roi size {roi_size} not realizable from stored {A.roi_shape}"
                    )
                roi = (center_origin((h, w), (roi_size, roi_size)), (roi_size, roi_size))
                sampler = SparseSampler(n_lambda)
                est = fit_method(method, A, rng, sampler=sampler, budget=budget, roi=roi)
                images, spectra = make_eval_set(A, sampler, n_spectra, rng.spawn(), roi=roi)
                pred = est.predict(images)
                corrs.extend(cross_correlation(p, t) for p, t in zip(pred, spectra))
            corrs = np.asarray(corrs)
            ratio = roi_size * roi_size / matrices[0].n_channels
            rows.append({
                "ratio": round(ratio, 4), "roi": roi_size, "n_lambda": n_lambda,
                "method": method, "mean": corrs.mean(), "std": corrs.std(),
                "n": corrs.size,
            })
    return rows


def compare_methods(
    A: TransmissionMatrix,
    methods: Sequence[str],
    n_spectra: int,
    rng: Rng,
    budget: DlBudget = DlBudget(),
    roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None,
    max_sparse_fraction: float = 0.5,
) -> List[Dict[str, object]]:
    """Histogram comparison on sparse (< 50% occupancy) and dense spectra."""
    target = A if roi is None else crop_matrix(A, roi[0], roi[1])
    sparse = SparseSampler((1, int(max_sparse_fraction * A.n_channels)))
    dense = DenseSampler()
    rows = []
    for cls_name, sampler in (("sparse", sparse), ("dense", dense)):
        images, spectra = make_eval_set(A, sampler, n_spectra, rng.spawn(), roi=roi)
        for method in methods:
            est = fit_method(method, A, rng.spawn(), sampler=sampler, budget=budget, roi=roi)
            report = _eval_method(est, images, spectra, {
                "method": method, "class": cls_name,
                "ratio": round(target.sampling_ratio.value, 4),
            })
            rows.append(report.row())
    return rows


def robustness_noise(
    A: TransmissionMatrix,
    noise_levels: Sequence[float],
    samplers: Dict[str, object],
    n_spectra: int,
    rng: Rng,
    budget: DlBudget = DlBudget(),
    train_noise: float = 0.25,
    roi: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None,
) -> List[Dict[str, object]]:
    """DL vs. DL+N vs. CS vs. TR across noise levels and spectral classes.

    DL trains on clean data, DL+N on data perturbed with ``train_noise``;
    both are evaluated on every noise level, so the table exposes both the
    robustness gain and the clean-data regression of noise training.
    """
    rows = []
    for cls_name, sampler in samplers.items():
        ests = {
            "tr": fit_method("tr", A, rng.spawn(), roi=roi),
            "cs": fit_method("cs", A, rng.spawn(), roi=roi),
            "dl": fit_method("dl", A, rng.spawn(), sampler=sampler, budget=budget, roi=roi),
            "dl+n": fit_method("dl", A, rng.spawn(), sampler=sampler, budget=budget,
                               perturbation=Perturbation(noise_level=train_noise), roi=roi),
        }
        for p in noise_levels:
            perturbation = Perturbation(noise_level=p) if p > 0 else None
            images, spectra = make_eval_set(A, sampler, n_spectra, rng.spawn(),
                                            perturbation=perturbation, roi=roi)
            for name, est in ests.items():
                report = EvalReport.from_predictions(est.predict(images), spectra, {
                    "method": name, "class": cls_name, "noise": p,
                    "train_noise": train_noise if name == "dl+n" else 0.0,
                })
                rows.append(report.row())
    return rows


def robustness_shift(
    A_parent: TransmissionMatrix,
    roi: Tuple[Tuple[int, int], Tuple[int, int]],
    sampler,
    n_spectra: int,
    rng: Rng,
    budget: DlBudget = DlBudget(),
) -> List[Dict[str, object]]:
    """One-pixel-shift robustness: DL+S vs. DL, TR, CS on shifted crops."""
    ests = {
        "tr": fit_method("tr", A_parent, rng.spawn(), roi=roi),
        "cs": fit_method("cs", A_parent, rng.spawn(), roi=roi),
        "dl": fit_method("dl", A_parent, rng.spawn(), sampler=sampler, budget=budget, roi=roi),
        "dl+s": fit_method("dl", A_parent, rng.spawn(), sampler=sampler, budget=budget,
                           perturbation=Perturbation(shift_one_pixel=True), roi=roi),
    }
    rows = []
    for shifted in (False, True):
        perturbation = Perturbation(shift_one_pixel=True) if shifted else None
        images, spectra = make_eval_set(A_parent, sampler, n_spectra, rng.spawn(),
                                        perturbation=perturbation, roi=roi)
        for name, est in ests.items():
            report = EvalReport.from_predictions(est.predict(images), spectra, {
                "method": name, "shifted": shifted,
            })
            rows.append(report.row())
    return rows


@dataclass
class RgbResult:
    """Reconstructed RGB rasters plus the cross-talk diagnostic."""

    method: str
    rasters: np.ndarray          # (n_images, rows, cols, 3)
    source_correlation: float    # signal channels vs. encoded ground truth
    crosstalk: float             # blank-channel energy / mean signal energy
    per_image_correlation: np.ndarray


def rgb_scenario(
    array,
    methods: Sequence[str],
    images: Sequence[np.ndarray],
    rng: Rng,
    budget: DlBudget = DlBudget(),
) -> List[RgbResult]:
    """Encode RGB rasters into spectra, reconstruct, and reassemble.

    Every raster position is one fiber; image ``k`` occupies channels
    ``3k..3k+2`` and the final channel stays blank so its reconstructed
    energy measures pure cross-talk.
    """
    speckles, truth = encode_rgb_images(images, array)
    rows, cols = array.grid_layout
    n_images = len(images)
    Y = array.n_channels
    results = []
    for method in methods:
        recon = np.empty_like(truth)
        for p in range(truth.shape[0]):
            A = array.fibers[p]
            # The DL training distribution covers arbitrary supports.
            est = fit_method(method, A, rng.spawn(),
                             sampler=SparseSampler((1, Y)), budget=budget,
                             seed=p)
            recon[p] = est.predict(speckles[p][None])[0]
        rasters = np.zeros((n_images, rows, cols, 3))
        for p in range(truth.shape[0]):
            r, c = divmod(p, cols)
            for k in range(n_images):
                rasters[k, r, c] = recon[p, 3 * k : 3 * k + 3]
        signal = recon[:, : 3 * n_images]
        blank = recon[:, Y - 1]
        signal_energy = float(np.mean(signal**2))
        crosstalk = float(np.mean(blank**2) / signal_energy) if signal_energy > 0 else 0.0
        per_image = np.asarray([
            cross_correlation(rasters[k].ravel(), np.asarray(images[k], dtype=np.float64).ravel())
            for k in range(n_images)
        ])
        results.append(RgbResult(
            method=method,
            rasters=rasters,
            source_correlation=cross_correlation(
                signal.ravel(), truth[:, : 3 * n_images].ravel()
            ),
            crosstalk=crosstalk,
            per_image_correlation=per_image,
        ))
    return results


def write_rows_csv(path, rows: List[Dict[str, object]]) -> None:
    if not rows:
        raise ConfigError("no rows to write")
    keys = list(rows[0].keys())
    for row in rows[1:]:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
