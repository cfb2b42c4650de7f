import io
import struct

import numpy as np
import pytest

from wickwave.snapshot import MAGIC, SnapshotFormatError, decode, encode, read_fields, write_fields
from wickwave.torus import LatticeSpec, SpectralField

from conftest import random_coeffs


class TestSnapshot:
    def test_header_layout(self):
        lat = LatticeSpec(2, 8)
        blob = encode(lat, [np.zeros(lat.shape)] * 3)
        assert blob[:4] == MAGIC
        assert struct.unpack("<III", blob[4:16]) == (2, 8, 3)
        assert len(blob) == 16 + 3 * 25 * 8

    def test_row_major_order(self):
        lat = LatticeSpec(1)
        a = np.arange(9).reshape(3, 3).astype(complex)
        raw = np.frombuffer(encode(lat, [a])[16:], dtype="<c8")
        np.testing.assert_array_equal(raw.real, np.arange(9))

    def test_roundtrip_file(self, tmp_path, rng):
        lat = LatticeSpec(4)
        fields = [SpectralField(lat, random_coeffs(rng, 4)) for _ in range(2)]
        path = tmp_path / "f.wwf"
        write_fields(path, fields)
        back = read_fields(path)
        for a, b in zip(fields, back):
            np.testing.assert_allclose(b.coeffs, a.coeffs, atol=1e-7)

    def test_rewrite_is_byte_identical(self, rng):
        lat = LatticeSpec(3)
        buf = io.BytesIO()
        write_fields(buf, [SpectralField(lat, random_coeffs(rng, 3))])
        first = buf.getvalue()
        again = io.BytesIO()
        write_fields(again, read_fields(io.BytesIO(first)))
        assert again.getvalue() == first

    def test_decode_errors(self):
        lat = LatticeSpec(1)
        blob = encode(lat, [np.zeros(lat.shape)])
        with pytest.raises(SnapshotFormatError, match="magic"):
            decode(b"XXXX" + blob[4:])
        with pytest.raises(SnapshotFormatError, match="size"):
            decode(blob[:-1])
        with pytest.raises(SnapshotFormatError, match="truncated"):
            decode(blob[:10])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            encode(LatticeSpec(2), [np.zeros((3, 3))])

    def test_empty_write(self, tmp_path):
        with pytest.raises(ValueError):
            write_fields(tmp_path / "x.wwf", [])
