import numpy as np
import pytest

from spekt import Rng, Spectrum, TransmissionMatrix
from spekt.errors import BadMagicError, CrcMismatchError, DataError, FormatVersionError
from spekt.iofmt import (
    read_image_stack,
    read_manifest,
    read_matrix,
    read_pinv_cache,
    read_spectrum_csv,
    read_tensor_container,
    spkt_file_size,
    write_image_stack,
    write_manifest,
    write_matrix,
    write_pgm,
    write_pinv_cache,
    write_spectrum_csv,
    write_tensor_container,
)


@pytest.fixture
def matrix():
    gen = Rng(3).generator
    return TransmissionMatrix(gen.random((20, 5)), roi_shape=(4, 5))


class TestSpkt:
    def test_roundtrip_f64_bit_exact(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        back = read_matrix(path)
        np.testing.assert_array_equal(back.matrix, matrix.matrix)
        assert back.roi_shape == matrix.roi_shape

    def test_f32_widens_exactly(self, tmp_path, matrix):
        path = tmp_path / "m32.spkt"
        write_matrix(path, matrix, dtype=np.float32)
        back = read_matrix(path)
        np.testing.assert_array_equal(
            back.matrix, matrix.matrix.astype(np.float32).astype(np.float64)
        )

    def test_truncated_file_is_crc_error(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises((CrcMismatchError, DataError)):
            read_matrix(path)

    def test_flipped_byte_is_crc_error(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        data = bytearray(path.read_bytes())
        data[30] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CrcMismatchError):
            read_matrix(path)

    def test_bad_magic(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            read_matrix(path)

    def test_future_version_rejected(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        data = bytearray(path.read_bytes())
        data[4:6] = (99).to_bytes(2, "little")
        # keep CRC valid for the modified header
        import struct
        import zlib

        body = bytes(data[:-4])
        data[-4:] = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatVersionError):
            read_matrix(path)

    def test_dimension_overflow_detected(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix)
        data = bytearray(path.read_bytes())
        import struct
        import zlib

        # Header dims inconsistent with the payload length.
        struct.pack_into("<I", data, 6, 2**30)
        body = bytes(data[:-4])
        data[-4:] = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        path.write_bytes(bytes(data))
        with pytest.raises(DataError):
            read_matrix(path)

    def test_file_size_formula(self, tmp_path, matrix):
        path = tmp_path / "m.spkt"
        write_matrix(path, matrix, dtype=np.float32)
        assert path.stat().st_size == spkt_file_size(20, 5, np.float32)

    def test_array_storage_arithmetic(self):
        # 2700 fibers of 400x43 float32 land at roughly 186 MB on disk.
        total = 2700 * spkt_file_size(400, 43, np.float32)
        assert total == pytest.approx(186e6, rel=0.01)


class TestSpkd:
    def test_roundtrip(self, tmp_path):
        stack = Rng(1).generator.random((7, 4, 5))
        path = tmp_path / "d.spkd"
        write_image_stack(path, stack)
        np.testing.assert_array_equal(read_image_stack(path), stack)

    def test_f32_roundtrip(self, tmp_path):
        stack = Rng(1).generator.random((3, 2, 2)).astype(np.float32)
        path = tmp_path / "d.spkd"
        write_image_stack(path, stack)
        back = read_image_stack(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, stack)


class TestSpkr:
    def test_roundtrip(self, tmp_path):
        pinv = Rng(2).generator.standard_normal((5, 20))
        path = tmp_path / "r.spkr"
        write_pinv_cache(path, pinv, 0.125, "abcdef0123456789")
        back, lam, src = read_pinv_cache(path)
        np.testing.assert_array_equal(back, pinv)
        assert lam == 0.125
        assert src == "abcdef0123456789"


class TestTensorContainer:
    def test_roundtrip_mixed_dtypes(self, tmp_path):
        gen = Rng(4).generator
        tensors = [
            ("w", gen.standard_normal((3, 4)).astype(np.float32)),
            ("b", gen.standard_normal(4)),
            ("scalarish", np.asarray(2.5)),
        ]
        path = tmp_path / "c.spkn"
        write_tensor_container(path, "format=spekt-network\n", tensors)
        text, back = read_tensor_container(path)
        assert text == "format=spekt-network\n"
        assert [n for n, _ in back] == ["w", "b", "scalarish"]
        for (_, a), (_, b) in zip(tensors, back):
            assert a.dtype == b.dtype
            np.testing.assert_array_equal(a, b)

    def test_corruption_detected(self, tmp_path):
        path = tmp_path / "c.spkn"
        write_tensor_container(path, "spec", [("w", np.ones(3))])
        data = bytearray(path.read_bytes())
        data[12] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(CrcMismatchError):
            read_tensor_container(path)


class TestTextFormats:
    def test_pgm_header_and_scaling(self, tmp_path):
        img = np.array([[0.0, 1.0], [2.0, 4.0]])
        path = tmp_path / "i.pgm"
        write_pgm(path, img)
        data = path.read_bytes()
        assert data.startswith(b"P5\n2 2\n65535\n")
        pixels = np.frombuffer(data.split(b"65535\n", 1)[1], dtype=">u2").reshape(2, 2)
        assert pixels[1, 1] == 65535
        assert pixels[0, 1] == round(65535 / 4)

    def test_spectrum_csv_roundtrip(self, tmp_path):
        s = Spectrum(Rng(5).generator.random(7))
        path = tmp_path / "s.csv"
        write_spectrum_csv(path, s)
        back = read_spectrum_csv(path)
        np.testing.assert_array_equal(back.values, s.values)
        header = path.read_text().splitlines()[0]
        assert header == "index,wavelength_label,intensity"

    def test_manifest_roundtrip(self, tmp_path):
        path = tmp_path / "manifest.txt"
        write_manifest(path, {"b": 2, "a": "x=y"})
        assert read_manifest(path) == {"a": "x=y", "b": "2"}
