import numpy as np
import pytest

from spekt import (
    FiberArrayModel,
    FiberModel,
    Rng,
    generate_array,
    generate_fiber,
    spectral_correlation,
)
from spekt.errors import ConfigError


class TestGenerateFiber:
    def test_same_seed_bit_identical(self):
        model = FiberModel(seed=77)
        a = generate_fiber(model, (10, 10), 20)
        b = generate_fiber(model, (10, 10), 20)
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_columns_nonnegative_unit_mean(self):
        A = generate_fiber(FiberModel(seed=3), (12, 12), 16)
        assert A.matrix.min() >= 0
        np.testing.assert_allclose(A.matrix.mean(axis=0), 1.0, rtol=1e-9)

    def test_channels_differ(self):
        A = generate_fiber(FiberModel(seed=3), (12, 12), 16)
        corr = spectral_correlation(A)
        assert corr[1] < 0.999

    def test_single_mode_columns_identical_up_to_scale(self):
        A = generate_fiber(FiberModel(n_modes=1, seed=5), (8, 8), 6)
        base = A.matrix[:, 0]
        for j in range(1, 6):
            np.testing.assert_allclose(A.matrix[:, j], base, rtol=1e-9)

    def test_decorrelation_length_sets_crossing(self):
        # Mean channel correlation should fall below 1/e at a separation
        # of one decorrelation length, +- 50%.
        dl = 4.0
        crossings = []
        for seed in range(6):
            A = generate_fiber(
                FiberModel(decorrelation_length=dl, seed=seed), (22, 22), 43
            )
            corr = spectral_correlation(A)
            crossings.append(int(np.argmax(corr < 1 / np.e)))
        for c in crossings:
            assert 0.5 * dl <= c <= 1.5 * dl, crossings

    def test_short_decorrelation_far_separation_uncorrelated(self):
        A = generate_fiber(FiberModel(decorrelation_length=2.0, seed=9), (20, 20), 43)
        corr = spectral_correlation(A)
        assert abs(corr[10]) < 0.2

    def test_too_many_modes_rejected(self):
        with pytest.raises(ConfigError, match="underdetermined"):
            generate_fiber(FiberModel(n_modes=30, seed=0), (5, 5), 8)

    def test_gram_condition_finite_on_defaults(self):
        # Oversampled defaults must leave the normal equations invertible.
        A = generate_fiber(FiberModel(seed=1), (20, 20), 43)
        cond = np.linalg.cond(A.matrix.T @ A.matrix)
        assert np.isfinite(cond)
        assert cond < 1e8


class TestSpectralCorrelation:
    def test_zero_separation_is_one(self):
        A = generate_fiber(FiberModel(seed=2), (8, 8), 10)
        assert spectral_correlation(A)[0] == 1.0

    def test_identical_columns_all_one(self):
        from spekt import TransmissionMatrix

        col = Rng(1).generator.random(16)
        A = TransmissionMatrix(np.tile(col[:, None], (1, 5)), roi_shape=(4, 4))
        np.testing.assert_allclose(spectral_correlation(A), 1.0, atol=1e-12)


class TestGenerateArray:
    def test_singleton(self):
        array = generate_array(Rng(1), 1, roi_shape=(8, 8), n_channels=10)
        assert array.n_fibers == 1
        assert array.grid_layout[0] * array.grid_layout[1] >= 1

    def test_deterministic_under_seed(self):
        a = generate_array(Rng(5), 4, roi_shape=(8, 8), n_channels=10)
        b = generate_array(Rng(5), 4, roi_shape=(8, 8), n_channels=10)
        for fa, fb in zip(a.fibers, b.fibers):
            np.testing.assert_array_equal(fa.matrix, fb.matrix)

    def test_fibers_mutually_unrelated(self):
        # Same-channel correlations across two fibers should be
        # statistically indistinguishable from mismatched-channel ones.
        array = generate_array(Rng(8), 2, roi_shape=(16, 16), n_channels=30)
        a, b = array.fibers[0].matrix, array.fibers[1].matrix

        def pearson(x, y):
            dx, dy = x - x.mean(), y - y.mean()
            return float(dx @ dy / np.sqrt((dx @ dx) * (dy @ dy)))

        matched = np.asarray([pearson(a[:, j], b[:, j]) for j in range(30)])
        mismatched = np.asarray(
            [pearson(a[:, j], b[:, (j + k) % 30]) for k in range(1, 6) for j in range(30)]
        )
        pooled = np.sqrt(matched.var() / matched.size + mismatched.var() / mismatched.size)
        assert abs(matched.mean() - mismatched.mean()) < 3.5 * pooled

    def test_layout_geometry(self):
        array = generate_array(Rng(2), 4, FiberModel(n_modes=32), roi_shape=(6, 6),
                               n_channels=8, grid_layout=(2, 2), spacing_px=1)
        assert array.frame_shape == (15, 15)
        assert array.fiber_origin(0) == (1, 1)
        assert array.fiber_origin(3) == (8, 8)

    def test_mixed_shapes_rejected(self):
        f1 = generate_fiber(FiberModel(n_modes=24, seed=1), (6, 6), 8)
        f2 = generate_fiber(FiberModel(n_modes=24, seed=2), (5, 5), 8)
        with pytest.raises(ConfigError):
            FiberArrayModel((f1, f2), (1, 2))
