"""Tensor container, checkpoints, netpbm images and manifest CSV."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from depthseed.errors import DataError, FormatError
from depthseed.data.formats import (
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    load_depth,
    load_image,
    load_manifest,
    load_tensor,
    read_ppm,
    save_checkpoint,
    save_tensor,
    write_manifest,
    write_pgm16,
    write_ppm,
)


# =============================================================================
# Tensor container
# =============================================================================


class TestTensorContainer:
    def test_round_trip_random(self, tmp_path, rng):
        a = rng.normal(size=(2, 3, 4)).astype(np.float32)
        save_tensor(tmp_path / "a.dtns", a)
        assert load_tensor(tmp_path / "a.dtns").tobytes() == a.tobytes()

    def test_scalar_round_trip(self, tmp_path):
        save_tensor(tmp_path / "s.dtns", np.float32(3.25))
        back = load_tensor(tmp_path / "s.dtns")
        assert back.shape == () and back == np.float32(3.25)

    def test_layout(self):
        buf = encode_tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
        assert buf[:4] == b"DTNS"
        assert buf[4:7] == bytes([1, 0, 2])
        assert struct.unpack("<2I", buf[7:15]) == (1, 3)
        assert np.frombuffer(buf[15:], dtype="<f4").tolist() == [1.0, 2.0, 3.0]

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                      elements=st.floats(width=32, allow_nan=False)))
    def test_round_trip_property(self, array):
        back, end = decode_tensor(encode_tensor(array))
        assert back.shape == array.shape and back.tobytes() == array.tobytes()
        assert end == len(encode_tensor(array))

    @pytest.mark.parametrize("mutate, offset", [
        (lambda b: b"XTNS" + b[4:], 0),
        (lambda b: b[:4] + bytes([9]) + b[5:], 4),
        (lambda b: b[:5] + bytes([3]) + b[6:], 5),
        (lambda b: b[:-1], 15),
        (lambda b: b[:5], 0),
        (lambda b: b[:6] + bytes([200]) + b[7:], 7),
    ])
    def test_malformed_reports_offset(self, mutate, offset):
        buf = mutate(encode_tensor(np.zeros((2, 2), dtype=np.float32)))
        with pytest.raises(FormatError) as info:
            decode_tensor(buf)
        assert info.value.offset == offset

    def test_dimension_overflow(self):
        buf = b"DTNS" + bytes([1, 0, 2]) + struct.pack("<2I", 2**31, 2**31)
        with pytest.raises(FormatError, match="exceeds"):
            decode_tensor(buf)

    def test_trailing_bytes(self, tmp_path):
        (tmp_path / "t.dtns").write_bytes(encode_tensor(np.zeros(2)) + b"\0")
        with pytest.raises(FormatError):
            load_tensor(tmp_path / "t.dtns")

    def test_failed_save_leaves_no_file(self, tmp_path):
        with pytest.raises(OSError):
            save_tensor(tmp_path / "missing_dir" / "x.dtns", np.zeros(2))
        assert not (tmp_path / "missing_dir").exists()


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"conv1.weight": rng.normal(size=(4, 3, 5, 5)).astype(np.float32),
                   "conv1.bias": np.zeros(4, dtype=np.float32), "rgb/fc8.bias": np.ones(3, dtype=np.float32)}
        save_checkpoint(tmp_path / "c.dtns", tensors)
        back = load_checkpoint(tmp_path / "c.dtns")
        assert list(back) == list(tensors)
        assert all(back[k].tobytes() == v.tobytes() for k, v in tensors.items())

    def test_empty(self, tmp_path):
        save_checkpoint(tmp_path / "c.dtns", {})
        assert load_checkpoint(tmp_path / "c.dtns") == {}

    @pytest.mark.parametrize("cut", [2, 5, 10, -3])
    def test_truncated(self, tmp_path, cut):
        save_checkpoint(tmp_path / "c.dtns", {"a": np.zeros(3, dtype=np.float32)})
        raw = (tmp_path / "c.dtns").read_bytes()
        (tmp_path / "c.dtns").write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "c.dtns")

    def test_duplicate_names(self, tmp_path):
        entry = struct.pack("<H", 1) + b"a" + encode_tensor(np.zeros(1))
        (tmp_path / "c.dtns").write_bytes(struct.pack("<I", 2) + entry + entry)
        with pytest.raises(FormatError, match="duplicate"):
            load_checkpoint(tmp_path / "c.dtns")


# =============================================================================
# Netpbm images
# =============================================================================


class TestNetpbm:
    def test_depth_value_2000_is_two_metres(self, tmp_path):
        write_pgm16(tmp_path / "d.pgm", np.full((2, 3), 2000, dtype=np.uint16))
        depth = load_depth(tmp_path / "d.pgm")
        assert depth.dtype == np.float32 and np.all(depth == 2.0)

    def test_pgm_round_trip_keeps_millimetres(self, tmp_path, rng):
        mm = rng.integers(0, 65535, size=(5, 7)).astype(np.uint16)
        write_pgm16(tmp_path / "d.pgm", mm)
        np.testing.assert_array_equal(np.rint(load_depth(tmp_path / "d.pgm") * 1000), mm)

    def test_ppm_round_trip(self, tmp_path, rng):
        rgb = rng.integers(0, 256, size=(3, 4, 5)).astype(np.float32)
        write_ppm(tmp_path / "i.ppm", rgb)
        back = read_ppm(tmp_path / "i.ppm")
        assert back.shape == (3, 4, 5) and np.array_equal(back, rgb)

    def test_header_comments(self, tmp_path):
        (tmp_path / "i.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3]))
        np.testing.assert_array_equal(read_ppm(tmp_path / "i.ppm")[:, 0, 0], [1, 2, 3])

    @pytest.mark.parametrize("name, payload", [
        ("bad_magic.ppm", b"P3\n1 1\n255\n\x00\x00\x00"),
        ("short.ppm", b"P6\n2 2\n255\n\x00\x00\x00"),
        ("sixteen.ppm", b"P6\n1 1\n65535\n" + b"\x00" * 6),
        ("garbage.ppm", b"P6\nxx 1\n255\n\x00\x00\x00"),
        ("eight_bit.pgm", b"P5\n1 1\n255\n\x00"),
        ("short.pgm", b"P5\n2 1\n65535\n\x00\x00"),
        ("zero.pgm", b"P5\n0 1\n65535\n"),
    ])
    def test_malformed_images(self, tmp_path, name, payload):
        (tmp_path / name).write_bytes(payload)
        with pytest.raises(FormatError):
            load_image(tmp_path / name)

    def test_missing_image(self, tmp_path):
        with pytest.raises(DataError):
            load_image(tmp_path / "nothing.ppm")

    def test_unknown_extension(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"")
        with pytest.raises(DataError):
            load_image(tmp_path / "x.png")


# =============================================================================
# Manifest
# =============================================================================


@pytest.fixture
def image_dir(tmp_path):
    for i in range(4):
        write_ppm(tmp_path / f"{i}.ppm", np.zeros((3, 2, 2)))
        write_pgm16(tmp_path / f"{i}.pgm", np.full((2, 2), 1000, dtype=np.uint16))
    return tmp_path


class TestManifest:
    def test_partitions_train_and_test(self, image_dir):
        rows = [(f"{i}.ppm", f"{i}.pgm", i % 2, s) for i, s in enumerate(["train", "train", "test", "test"])]
        write_manifest(image_dir / "m.csv", rows)
        m = load_manifest(image_dir / "m.csv")
        assert len(m.split("train")) == 2 and len(m.split("test")) == 2
        assert m.num_classes == 2
        assert m.records[0].rgb_path == image_dir / "0.ppm"

    def test_non_dense_labels(self, image_dir):
        write_manifest(image_dir / "m.csv", [("0.ppm", "0.pgm", 0, "train"), ("1.ppm", "1.pgm", 2, "train")])
        with pytest.raises(DataError, match="non-dense labels") as info:
            load_manifest(image_dir / "m.csv")
        assert info.value.rows == [2]

    @pytest.mark.parametrize("row, message", [
        (("0.ppm", "0.pgm", 0, "val"), "unknown split"),
        (("0.ppm", "0.pgm", "x", "train"), "non-integer label"),
        (("0.ppm", "0.pgm", -1, "train"), "negative label"),
        (("9.ppm", "0.pgm", 0, "train"), "missing file"),
        (("", "", 0, "train"), "neither"),
    ])
    def test_bad_rows_listed(self, image_dir, row, message):
        write_manifest(image_dir / "m.csv", [("1.ppm", "1.pgm", 0, "train"), row])
        with pytest.raises(DataError, match=message) as info:
            load_manifest(image_dir / "m.csv")
        assert info.value.rows == [2]

    def test_wrong_column_count(self, image_dir):
        (image_dir / "m.csv").write_text("rgb_path,depth_path,label,split\n0.ppm,0.pgm,0\n")
        with pytest.raises(DataError, match="column count"):
            load_manifest(image_dir / "m.csv")

    def test_header_required(self, image_dir):
        (image_dir / "m.csv").write_text("0.ppm,0.pgm,0,train\n")
        with pytest.raises(DataError, match="header"):
            load_manifest(image_dir / "m.csv")

    def test_empty(self, image_dir):
        (image_dir / "m.csv").write_text("rgb_path,depth_path,label,split\n")
        with pytest.raises(DataError):
            load_manifest(image_dir / "m.csv")

    def test_class_names_file(self, image_dir):
        write_manifest(image_dir / "m.csv", [("0.ppm", "0.pgm", 0, "train"), ("1.ppm", "1.pgm", 1, "test")])
        (image_dir / "classes.txt").write_text("wall\ncorridor\n")
        assert load_manifest(image_dir / "m.csv").classes == ["wall", "corridor"]

    def test_depth_only_rows(self, image_dir):
        write_manifest(image_dir / "m.csv", [("", "0.pgm", 0, "train"), ("", "1.pgm", 1, "train")])
        m = load_manifest(image_dir / "m.csv")
        assert m.records[0].rgb_path is None
