"""Weight-bundle format tests, including corrupted-file negative cases."""

import struct

import numpy as np
import pytest

from warrantscore.bundle import MAGIC, BundleError, read_bundle, write_bundle


def sample_arrays(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "layer.w": rng.normal(size=(3, 5)),
        "layer.b": rng.normal(size=(5,)),
        "meta.flag": np.array([1.0]),
    }


class TestRoundTrip:
    def test_values_preserved_at_32_bit(self, tmp_path):
        arrays = sample_arrays()
        path = tmp_path / "w.swb"
        write_bundle(path, arrays)
        back = read_bundle(path)
        assert list(back) == list(arrays)
        for name, arr in arrays.items():
            assert back[name].dtype == np.float32
            np.testing.assert_array_equal(back[name], arr.astype(np.float32))

    def test_write_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.swb", tmp_path / "b.swb"
        write_bundle(a, sample_arrays())
        write_bundle(b, sample_arrays())
        assert a.read_bytes() == b.read_bytes()

    def test_second_round_trip_is_identity(self, tmp_path):
        # once at 32 bits, further round trips are bit-exact
        p1, p2 = tmp_path / "1.swb", tmp_path / "2.swb"
        write_bundle(p1, sample_arrays())
        write_bundle(p2, read_bundle(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_name_with_space_rejected(self, tmp_path):
        with pytest.raises(BundleError, match="name"):
            write_bundle(tmp_path / "w.swb", {"bad name": np.zeros(2)})


class TestCorruption:
    def write(self, tmp_path):
        path = tmp_path / "w.swb"
        write_bundle(path, sample_arrays())
        return path, bytearray(path.read_bytes())

    def test_bad_magic(self, tmp_path):
        path, raw = self.write(tmp_path)
        raw[:4] = b"XXXX"
        path.write_bytes(raw)
        with pytest.raises(BundleError, match="bad magic"):
            read_bundle(path)

    def test_version_mismatch(self, tmp_path):
        path, raw = self.write(tmp_path)
        raw[3:4] = b"2"
        path.write_bytes(raw)
        with pytest.raises(BundleError, match="version mismatch"):
            read_bundle(path)

    def test_truncated_payload(self, tmp_path):
        path, raw = self.write(tmp_path)
        path.write_bytes(raw[:-7])
        with pytest.raises(BundleError, match="truncated payload"):
            read_bundle(path)

    def test_truncated_header(self, tmp_path):
        path, raw = self.write(tmp_path)
        header_len = struct.unpack("<I", raw[4:8])[0]
        path.write_bytes(raw[: 8 + header_len - 3])
        with pytest.raises(BundleError, match="truncated"):
            read_bundle(path)

    def test_trailing_garbage(self, tmp_path):
        path, raw = self.write(tmp_path)
        path.write_bytes(bytes(raw) + b"\x00\x00\x00\x00")
        with pytest.raises(BundleError, match="trailing"):
            read_bundle(path)

    def test_header_shape_beyond_payload(self, tmp_path):
        # header declares a bigger array than the payload carries
        path = tmp_path / "w.swb"
        header = b"only.array 10,10 f32\n"
        payload = np.zeros(4, dtype="<f4").tobytes()
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
        with pytest.raises(BundleError, match="truncated payload"):
            read_bundle(path)

    def test_unsupported_element_type(self, tmp_path):
        path = tmp_path / "w.swb"
        header = b"a 1 f64\n"
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header
                         + b"\x00" * 8)
        with pytest.raises(BundleError, match="element type"):
            read_bundle(path)
