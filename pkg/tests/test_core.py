import numpy as np
import pytest

from spekt import (
    Rng,
    SamplingRatio,
    SpeckleImage,
    Spectrum,
    TransmissionMatrix,
    crop_matrix,
    crop_roi,
    render_speckle,
)
from spekt.core import center_origin, normalize_image
from spekt.errors import DimensionError


def random_matrix(seed=0, roi=(3, 3), channels=4):
    gen = Rng(seed).generator
    return TransmissionMatrix(gen.random((roi[0] * roi[1], channels)), roi_shape=roi)


class TestTypes:
    def test_spectrum_rejects_negative(self):
        with pytest.raises(ValueError):
            Spectrum(np.array([0.1, -0.2, 0.3]))

    def test_spectrum_counts(self):
        s = Spectrum(np.array([0.0, 0.5, 1.0, 0.0]))
        assert s.n_channels == 4
        assert s.n_nonzero == 2

    def test_peak_normalized(self):
        s = Spectrum(np.array([0.0, 2.0, 4.0])).peak_normalized()
        assert s.values.max() == 1.0

    def test_image_shape_validation(self):
        with pytest.raises(DimensionError):
            SpeckleImage(np.zeros(5))

    def test_matrix_row_count_must_match_roi(self):
        with pytest.raises(DimensionError):
            TransmissionMatrix(np.ones((10, 4)), roi_shape=(3, 3))

    def test_matrix_is_immutable(self):
        A = random_matrix()
        with pytest.raises(ValueError):
            A.matrix[0, 0] = 5.0

    def test_sampling_ratio_examples(self):
        assert SamplingRatio.from_counts(25, 43).value == pytest.approx(0.5814, abs=1e-4)
        assert SamplingRatio.from_counts(400, 43).value == pytest.approx(9.302, abs=1e-3)
        assert not SamplingRatio.from_counts(25, 43).oversampled
        assert SamplingRatio.from_counts(400, 43).oversampled

    def test_content_hash_changes_with_payload(self):
        a = random_matrix(seed=1)
        b = random_matrix(seed=2)
        assert a.content_hash() != b.content_hash()
        assert a.content_hash() == random_matrix(seed=1).content_hash()


class TestRenderSpeckle:
    def test_delta_spectrum_selects_column(self):
        A = random_matrix()
        for j in range(A.n_channels):
            e = np.zeros(A.n_channels)
            e[j] = 1.0
            img = render_speckle(A, e)
            np.testing.assert_array_equal(img.pixels, A.column_image(j).pixels)

    def test_two_channel_sum(self):
        A = random_matrix()
        e = np.zeros(A.n_channels)
        e[0] = 1.0
        e[2] = 1.0
        img = render_speckle(A, e)
        expected = A.column_image(0).pixels + A.column_image(2).pixels
        np.testing.assert_allclose(img.pixels, expected, rtol=1e-15)

    def test_matches_bruteforce_product(self):
        # Independent oracle: element-by-element dot products.
        A = random_matrix(seed=3, roi=(3, 3), channels=4)
        s = Rng(9).generator.random(4)
        img = render_speckle(A, s)
        for r in range(3):
            for c in range(3):
                expected = sum(A.matrix[r * 3 + c, j] * s[j] for j in range(4))
                assert img.pixels[r, c] == pytest.approx(expected, rel=1e-12)

    def test_linearity(self):
        A = random_matrix(seed=4, roi=(4, 4), channels=6)
        gen = Rng(10).generator
        s1, s2 = gen.random(6), gen.random(6)
        a, b = 0.7, 1.9
        combined = render_speckle(A, a * s1 + b * s2).pixels
        parts = a * render_speckle(A, s1).pixels + b * render_speckle(A, s2).pixels
        np.testing.assert_allclose(combined, parts, rtol=1e-10)

    def test_dimension_mismatch_names_lengths(self):
        A = random_matrix()
        with pytest.raises(DimensionError, match="5.*4|4.*5"):
            render_speckle(A, np.ones(5))


class TestCropRoi:
    def test_full_frame_identity(self):
        frame = SpeckleImage(Rng(0).generator.random((6, 7)))
        out = crop_roi(frame, (0, 0), (6, 7))
        np.testing.assert_array_equal(out.pixels, frame.pixels)

    def test_crop_offset_pixel(self):
        frame = SpeckleImage(Rng(1).generator.random((20, 20)))
        out = crop_roi(frame, (7, 7), (5, 5))
        assert out.pixels[0, 0] == frame.pixels[7, 7]
        assert out.roi_origin == (7, 7)

    def test_overlapping_crops_agree(self):
        frame = SpeckleImage(Rng(2).generator.random((12, 12)))
        a = crop_roi(frame, (2, 2), (6, 6))
        b = crop_roi(frame, (4, 4), (6, 6))
        # Intersection of the two windows in frame coordinates: rows/cols 4..7.
        np.testing.assert_array_equal(a.pixels[2:6, 2:6], b.pixels[0:4, 0:4])

    def test_out_of_bounds_reports_coordinates(self):
        frame = SpeckleImage(np.ones((5, 5)))
        with pytest.raises(DimensionError, match=r"\(4,4\)"):
            crop_roi(frame, (4, 4), (3, 3))


class TestCropMatrix:
    def test_commutes_with_render(self):
        A = random_matrix(seed=7, roi=(6, 6), channels=5)
        sub = crop_matrix(A, (1, 2), (3, 3))
        s = Rng(3).generator.random(5)
        direct = render_speckle(sub, s).pixels
        cropped = crop_roi(render_speckle(A, s), (1, 2), (3, 3)).pixels
        np.testing.assert_array_equal(direct, cropped)

    def test_bounds_check(self):
        A = random_matrix(seed=7, roi=(4, 4), channels=3)
        with pytest.raises(DimensionError):
            crop_matrix(A, (2, 2), (3, 3))

    def test_center_origin(self):
        assert center_origin((22, 22), (20, 20)) == (1, 1)
        assert center_origin((22, 22), (5, 5)) == (8, 8)


def test_normalize_image_zero_mean_unit_scale():
    gen = Rng(5).generator
    x = gen.random((8, 8)) + 0.5
    out = normalize_image(x)
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(out, x / x.mean() - 1.0)
    np.testing.assert_array_equal(normalize_image(np.zeros((4, 4))), np.zeros((4, 4)))
