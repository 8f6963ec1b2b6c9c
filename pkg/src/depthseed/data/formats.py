"""Binary and text codecs: tensor container, checkpoints, PGM/PPM, manifest CSV.

Tensor container layout (little endian)::

    b"DTNS" | version u8 = 1 | dtype u8 = 0 (f32) | ndim u8 | ndim x u32 dims | f32 payload

A checkpoint is ``u32 count`` followed by ``count`` entries of
``u16 name length | UTF-8 name | tensor container``.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError, FormatError

MAGIC = b"DTNS"
VERSION = 1
DTYPE_F32 = 0
MANIFEST_COLUMNS = ("rgb_path", "depth_path", "label", "split")
SPLITS = ("train", "test")


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# -- tensor container --------------------------------------------------------


def encode_tensor(array) -> bytes:
    array = np.asarray(array, dtype="<f4")
    if array.ndim > 255:
        raise FormatError(f"cannot store {array.ndim} dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple:
    """Parse one container starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < 7:
        raise FormatError("truncated tensor header", offset)
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected {MAGIC!r}", offset)
    version, dtype, ndim = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset + 4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset + 5)
    pos = offset + 7
    if len(buf) - pos < 4 * ndim:
        raise FormatError(f"truncated dimension list ({ndim} dims)", pos)
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    nbytes = 4 * count
    if nbytes > len(buf) - pos:
        raise FormatError(f"payload of {nbytes} bytes for dims {list(dims)} exceeds the {len(buf) - pos} "
                          "bytes available", pos)
    array = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
    return array, pos + nbytes


def save_tensor(path, array) -> None:
    _atomic_write(path, encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return array


def save_checkpoint(path, tensors: dict) -> None:
    out = [struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)) + raw + encode_tensor(array))
    _atomic_write(path, b"".join(out))


def load_checkpoint(path) -> dict:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise FormatError("truncated checkpoint header", 0)
    (count,) = struct.unpack_from("<I", buf, 0)
    pos, tensors = 4, {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise FormatError("truncated entry name length", pos)
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) - pos < n:
            raise FormatError("truncated entry name", pos)
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not valid UTF-8", pos) from exc
        pos += n
        if name in tensors:
            raise FormatError(f"duplicate entry {name!r}", pos)
        tensors[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after {count} entries", pos)
    return tensors


# -- netpbm ---------------------------------------------------------------


def _read_netpbm(path, magic: bytes) -> tuple:
    buf = Path(path).read_bytes()
    if buf[:2] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} netpbm, found {buf[:2]!r}", 0)
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header", pos)
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: header must end with a single whitespace", pos)
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive size {width}x{height}", pos)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} out of range", pos)
    return buf, pos, width, height, maxval


def write_pgm16(path, depth_mm) -> None:
    """16-bit binary PGM (P5), big endian per the netpbm convention."""
    depth_mm = np.asarray(depth_mm)
    h, w = depth_mm.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    _atomic_write(path, header + depth_mm.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    buf, pos, w, h, maxval = _read_netpbm(path, b"P5")
    if maxval < 256:
        raise FormatError(f"{path}: depth PGM must be 16-bit (maxval >= 256), got maxval {maxval}", pos)
    need = 2 * w * h
    if len(buf) - pos != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(buf) - pos}", pos)
    return np.frombuffer(buf, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.uint16)


def write_ppm(path, rgb) -> None:
    """8-bit binary PPM (P6) from an H x W x 3 or 3 x H x W array in [0, 255]."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 3 and rgb.shape[0] == 3 and rgb.shape[-1] != 3:
        rgb = rgb.transpose(1, 2, 0)
    h, w, _ = rgb.shape
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    _atomic_write(path, f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns a 3 x H x W float32 array in [0, 255]."""
    buf, pos, w, h, maxval = _read_netpbm(path, b"P6")
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported, got maxval {maxval}", pos)
    need = 3 * w * h
    if len(buf) - pos != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(buf) - pos}", pos)
    img = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return (img.astype(np.float32) * (255.0 / maxval)).transpose(2, 0, 1).copy()


def load_depth(path) -> np.ndarray:
    """Depth PGM in millimetres -> float32 metres (0 stays 0 = invalid)."""
    return read_pgm16(path).astype(np.float32) / 1000.0


def load_image(path) -> np.ndarray:
    """Load by extension: ``.ppm`` RGB, ``.pgm`` depth in metres, ``.dtns`` tensor."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    ext = path.suffix.lower()
    if ext == ".ppm":
        return read_ppm(path)
    if ext == ".pgm":
        return load_depth(path)
    if ext == ".dtns":
        return load_tensor(path)
    raise DataError(f"unsupported image extension {ext!r} for {path}")


# -- manifest ---------------------------------------------------------------


@dataclass
class Record:
    rgb_path: Optional[Path]
    depth_path: Optional[Path]
    label: int
    split: str
    row: int


@dataclass
class DatasetManifest:
    records: list
    classes: list = field(default_factory=list)
    root: Path = Path(".")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def labels(self, split: Optional[str] = None) -> np.ndarray:
        recs = self.records if split is None else self.split(split)
        return np.array([r.label for r in recs], dtype=np.int64)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a ``rgb_path,depth_path,label,split`` CSV.

    Relative paths resolve against the manifest's directory. Class names are
    read from ``classes.txt`` next to the manifest when present.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing manifest {path}")
    root = path.parent
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
        raise DataError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {header}")

    records, problems = [], {}
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            problems.setdefault("wrong column count", []).append(row_no)
            continue
        rgb, depth, label, split = (c.strip() for c in row)
        try:
            label = int(label)
        except ValueError:
            problems.setdefault("non-integer label", []).append(row_no)
            continue
        if label < 0:
            problems.setdefault("negative label", []).append(row_no)
            continue
        if split not in SPLITS:
            problems.setdefault(f"unknown split token (expected {'/'.join(SPLITS)})", []).append(row_no)
            continue
        if not rgb and not depth:
            problems.setdefault("row has neither rgb_path nor depth_path", []).append(row_no)
            continue
        rgb_p = root / rgb if rgb else None
        depth_p = root / depth if depth else None
        if check_files and any(p is not None and not p.exists() for p in (rgb_p, depth_p)):
            problems.setdefault("missing file", []).append(row_no)
            continue
        records.append(Record(rgb_p, depth_p, label, split, row_no))
    if problems:
        detail = "; ".join(f"{msg}: rows {rows}" for msg, rows in problems.items())
        raise DataError(f"{path}: {detail}", rows=sorted(r for rows in problems.values() for r in rows))
    if not records:
        raise DataError(f"{path}: manifest has no records")

    present = sorted({r.label for r in records})
    if present != list(range(len(present))):
        bad = [r.row for r in records if r.label >= len(present)]
        raise DataError(f"{path}: non-dense labels {present}; ids must cover 0..K-1", rows=bad)
    classes_file = root / "classes.txt"
    if classes_file.exists():
        classes = [c.strip() for c in classes_file.read_text().splitlines() if c.strip()]
        if len(classes) < len(present):
            raise DataError(f"{classes_file}: {len(classes)} names for {len(present)} labels")
        classes = classes[: len(present)]
    else:
        classes = [str(i) for i in present]
    return DatasetManifest(records, classes, root)


def write_manifest(path, rows) -> None:
    """``rows`` are (rgb_path, depth_path, label, split) tuples with paths as written."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue().encode("utf-8"))
