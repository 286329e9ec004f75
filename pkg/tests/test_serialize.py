import numpy as np
import pytest

from aukit import serialize
from aukit.errors import FormatError, IoError


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestTensorContainer:
    @pytest.mark.parametrize("shape", [(), (5,), (3, 4), (2, 3, 4, 5)])
    def test_round_trip_bitwise(self, tmp_path, shape):
        path = tmp_path / "t.stnt"
        original = rand(shape)
        serialize.save_tensor(path, original)
        restored = serialize.load_tensor(path)
        assert restored.shape == original.shape
        assert restored.tobytes() == original.tobytes()

    def test_header_bytes(self, tmp_path):
        path = tmp_path / "t.stnt"
        serialize.save_tensor(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"STNT"
        assert raw[4] == 0x01  # version
        assert raw[5] == 0x01  # dtype f64
        assert raw[6:10] == (2).to_bytes(4, "little")  # ndim
        assert raw[10:14] == (2).to_bytes(4, "little")
        assert raw[14:18] == (3).to_bytes(4, "little")
        assert len(raw) == 18 + 6 * 8

    def test_bad_magic_reports_offset(self, tmp_path):
        path = tmp_path / "t.stnt"
        serialize.save_tensor(path, np.zeros(3))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as err:
            serialize.load_tensor(path)
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.stnt"
        serialize.save_tensor(path, np.zeros(4))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="end of file"):
            serialize.load_tensor(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.stnt"
        serialize.save_tensor(path, np.zeros(2))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            serialize.load_tensor(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(IoError):
            serialize.load_tensor(tmp_path / "absent.stnt")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "model.stck"
        entries = {
            "backbone.input.kernels": rand((4, 3, 3, 3), seed=1),
            "branch.1.att.bias": rand((1,), seed=2),
            "head.2.fc.weight": rand((1, 16), seed=3),
        }
        serialize.save_checkpoint(path, entries)
        restored = serialize.load_checkpoint(path)
        assert list(restored) == list(entries)
        for name in entries:
            assert restored[name].tobytes() == entries[name].tobytes()

    def test_same_entries_same_bytes(self, tmp_path):
        entries = {"a": rand((3,)), "b": rand((2, 2), seed=7)}
        p1, p2 = tmp_path / "one.stck", tmp_path / "two.stck"
        serialize.save_checkpoint(p1, entries)
        serialize.save_checkpoint(p2, dict(entries))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.stck"
        serialize.save_checkpoint(path, {"w": np.ones(2)})
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as err:
            serialize.load_checkpoint(path)
        assert err.value.offset == 0

    def test_truncated_entry(self, tmp_path):
        path = tmp_path / "model.stck"
        serialize.save_checkpoint(path, {"w": np.ones(8)})
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(FormatError, match="end of file"):
            serialize.load_checkpoint(path)

    def test_empty_checkpoint(self, tmp_path):
        path = tmp_path / "model.stck"
        serialize.save_checkpoint(path, {})
        assert serialize.load_checkpoint(path) == {}


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        path = tmp_path / "map.pgm"
        serialize.save_pgm(path, np.array([[0.0, 1.0], [0.5, 0.25]]))
        raw = path.read_bytes()
        header_end = raw.index(b"255\n") + 4
        assert raw[:header_end] == b"P5\n2 2\n255\n"
        assert list(raw[header_end:]) == [0, 255, 128, 64]

    def test_values_clipped(self, tmp_path):
        path = tmp_path / "map.pgm"
        serialize.save_pgm(path, np.array([[-0.5, 1.5]]))
        assert list(path.read_bytes()[-2:]) == [0, 255]
