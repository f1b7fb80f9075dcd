"""Tikhonov-regularized analytical inversion.

The ridge normal equations give a precomputable inverse operator::

    pinv = (A^T A + lambda I)^-1 A^T        (shape Y x X)

so reconstruction is a single matrix-vector product followed by clamping
negatives to zero.  Clamping is deliberately post-hoc: the analytical
solution knows nothing about non-negativity, which is part of why this
baseline collapses in the undersampled regime.  The solve uses a
symmetric-positive-definite factorization plus one step of iterative
refinement; no explicit matrix inverse is formed.
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin

from .core import TransmissionMatrix
from .errors import ConfigError, DataError, SingularMatrixError
from .iofmt import read_pinv_cache, write_pinv_cache
from .validation import check_image_stack, check_spectra

__all__ = [
    "TikhonovReconstructor",
    "solve_ridge_pinv",
    "default_alpha",
    "alpha_grid",
    "select_lambda",
]


def default_alpha(A: TransmissionMatrix) -> float:
    """Scale-aware default regularization: 1e-3 * trace(A^T A) / Y."""
    mat = A.matrix
    return 1e-3 * float(np.einsum("ij,ij->", mat, mat)) / A.n_channels


def alpha_grid(A: TransmissionMatrix, n_decades: int = 9) -> np.ndarray:
    """Logarithmic grid of ``n_decades`` values centered on the default."""
    center = default_alpha(A)
    half = (n_decades - 1) // 2
    return center * np.power(10.0, np.arange(-half, n_decades - half))


def solve_ridge_pinv(A: TransmissionMatrix, alpha: float) -> np.ndarray:
    """Solve (A^T A + alpha I) pinv = A^T for the reconstruction operator.

    Raises :class:`SingularMatrixError` when ``alpha`` is 0 and the normal
    equations are singular (undersampled or rank-deficient matrix).
    """
    if alpha < 0:
        raise ConfigError(f"regularization weight must be >= 0, got {alpha}")
    mat = A.matrix
    gram = mat.T @ mat
    gram[np.diag_indices_from(gram)] += alpha
    rhs = mat.T
    try:
        factor = cho_factor(gram, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "normal equations are singular at lambda=0; use lambda > 0"
        ) from exc
    pinv = cho_solve(factor, rhs, check_finite=False)
    # One refinement step keeps the relative residual at working precision.
    residual = gram @ pinv - rhs
    pinv -= cho_solve(factor, residual, check_finite=False)
    return pinv


class TikhonovReconstructor(BaseEstimator, RegressorMixin):
    """Analytical spectrum reconstruction from speckle images.

    Parameters
    ----------
    matrix : TransmissionMatrix
        Calibration data of the fiber this reconstructor inverts.
    alpha : float, "auto", or None
        Regularization weight.  ``None`` uses the scale-aware default;
        ``"auto"`` selects from ``alpha_grid`` on the validation pairs
        passed to :meth:`fit`.
    alpha_grid : sequence of float, optional
        Candidate grid for ``alpha="auto"``.

    Attributes
    ----------
    pinv_ : ndarray of shape (Y, X)
        Precomputed inverse operator.
    alpha_ : float
        The regularization weight actually used.
    source_hash_ : str
        Provenance hash of the calibration matrix.
    """

    def __init__(self, matrix: TransmissionMatrix, alpha=None, alpha_grid=None):
        self.matrix = matrix
        self.alpha = alpha
        self.alpha_grid = alpha_grid

    def fit(self, X=None, y=None):
        """Precompute the inverse operator (and select alpha if requested)."""
        A = self.matrix
        if self.alpha == "auto":
            if X is None or y is None:
                raise ConfigError("alpha='auto' needs validation images X and spectra y")
            grid = self.alpha_grid if self.alpha_grid is not None else alpha_grid(A)
            self.alpha_ = select_lambda(A, X, y, grid)
        elif self.alpha is None:
            self.alpha_ = default_alpha(A)
        else:
            self.alpha_ = float(self.alpha)
        self.pinv_ = solve_ridge_pinv(A, self.alpha_)
        self.source_hash_ = A.content_hash()
        return self

    def predict(self, X) -> np.ndarray:
        """Reconstruct spectra for a batch of images, clamping negatives."""
        images = check_image_stack(X, self.matrix.roi_shape, dtype=np.float64)
        flat = images.reshape(images.shape[0], -1)
        out = flat @ self.pinv_.T
        np.maximum(out, 0.0, out=out)
        return out

    def predict_one(self, pixels: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        """Single-image hot path used by the streaming pipeline."""
        if out is None:
            out = np.empty(self.matrix.n_channels)
        np.dot(self.pinv_, pixels.reshape(-1), out=out)
        np.maximum(out, 0.0, out=out)
        return out

    def save_cache(self, path) -> None:
        write_pinv_cache(path, self.pinv_, self.alpha_, self.source_hash_)

    @classmethod
    def from_cache(cls, path, matrix: TransmissionMatrix) -> "TikhonovReconstructor":
        pinv, alpha, source_hash = read_pinv_cache(path)
        expected = matrix.content_hash()
        if source_hash != expected:
            raise DataError(
                f"cache was built from matrix {source_hash}, current matrix is {expected}"
            )
        if pinv.shape != (matrix.n_channels, matrix.n_pixels):
            raise DataError(
                f"cached pinv shape {pinv.shape} does not match matrix "
                f"({matrix.n_channels}, {matrix.n_pixels})"
            )
        est = cls(matrix, alpha=alpha)
        est.alpha_ = alpha
        est.pinv_ = pinv
        est.source_hash_ = source_hash
        return est


def _mean_correlation(pred: np.ndarray, truth: np.ndarray) -> float:
    from .bench import cross_correlation

    return float(np.mean([cross_correlation(p, t) for p, t in zip(pred, truth)]))


def select_lambda(A: TransmissionMatrix, images, spectra, grid: Iterable[float]) -> float:
    """Pick the grid value maximizing mean reconstruction correlation.

    Ties break toward the larger (more regularized) candidate.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ConfigError("empty candidate grid")
    X = check_image_stack(images, A.roi_shape, dtype=np.float64)
    y = check_spectra(spectra, A.n_channels, dtype=np.float64)
    if X.shape[0] == 0:
        raise ConfigError("empty validation set")
    best_alpha, best_score = None, -np.inf
    for alpha in grid:
        est = TikhonovReconstructor(A, alpha=alpha).fit()
        score = _mean_correlation(est.predict(X), y)
        if score >= best_score:  # ascending grid: ties go to larger alpha
            best_alpha, best_score = alpha, score
    return best_alpha
