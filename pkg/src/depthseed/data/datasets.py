"""In-memory datasets, patch grids and manifest loading."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, ParameterError
from .formats import DatasetManifest, load_image
from .hha import DepthMap, default_focal, encode_hha
from .synth import generate_synthetic_scene


def scale_input(images: np.ndarray) -> np.ndarray:
    """Map [0, 255] pixel values to roughly [-1, 1] network inputs."""
    return ((np.asarray(images, dtype=np.float32) - 127.5) / 127.5).astype(np.float32)


def grid_offsets(length: int, grid: int, patch: int) -> list:
    """Top-left offsets of ``grid`` patches of size ``patch`` along one axis."""
    if grid < 1:
        raise ParameterError(f"grid must be >= 1, got {grid}")
    if patch < 1 or patch > length:
        raise ParameterError(f"patch size {patch} does not fit length {length}")
    if grid == 1:
        return [(length - patch) // 2]
    return [int(round(i * (length - patch) / (grid - 1))) for i in range(grid)]


@dataclass
class Patch:
    crop: np.ndarray
    label: int
    source: int
    position: tuple


def sample_patch_grid(image, grid: int, patch: int, weak_label: int, source: int = 0) -> list:
    """Cut a ``grid`` x ``grid`` set of square patches, all tagged with the image label."""
    image = np.asarray(image)
    _, h, w = image.shape
    if patch > min(h, w):
        raise ParameterError(f"patch size {patch} exceeds image size {h}x{w}")
    rows, cols = grid_offsets(h, grid, patch), grid_offsets(w, grid, patch)
    return [
        Patch(image[:, y:y + patch, x:x + patch].copy(), int(weak_label), source, (i, j))
        for i, y in enumerate(rows) for j, x in enumerate(cols)
    ]


class ImageDataset:
    """Images (N x C x H x W, [0, 255]) with integer labels."""

    def __init__(self, images, labels):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, index) -> tuple:
        return (scale_input(self.images[index]),), self.labels[index]

    @property
    def sample_shape(self) -> tuple:
        return self.images.shape[1:]


class PatchDataset:
    """Every grid patch of every image, labelled with its image's (weak) label.

    Patches are cropped lazily; item ``i`` is patch ``i % grid**2`` of image
    ``i // grid**2``.
    """

    def __init__(self, images, labels, grid: int, patch: int):
        self.images = np.asarray(images, dtype=np.float32)
        self.image_labels = np.asarray(labels, dtype=np.int64)
        _, _, h, w = self.images.shape
        if patch > min(h, w):
            raise ParameterError(f"patch size {patch} exceeds image size {h}x{w}")
        self.grid, self.patch = grid, patch
        self.rows, self.cols = grid_offsets(h, grid, patch), grid_offsets(w, grid, patch)
        per = grid * grid
        self.labels = np.repeat(self.image_labels, per)
        self.sources = np.repeat(np.arange(len(self.images)), per)

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, index) -> tuple:
        index = np.asarray(index)
        per = self.grid * self.grid
        crops = np.empty((len(index), self.images.shape[1], self.patch, self.patch), dtype=np.float32)
        for n, i in enumerate(index):
            img, cell = divmod(int(i), per)
            y, x = self.rows[cell // self.grid], self.cols[cell % self.grid]
            crops[n] = self.images[img, :, y:y + self.patch, x:x + self.patch]
        return (scale_input(crops),), self.labels[index]

    @property
    def sample_shape(self) -> tuple:
        return (self.images.shape[1], self.patch, self.patch)


class PairedDataset:
    """Aligned RGB and depth-encoding images sharing one label vector."""

    def __init__(self, rgb, depth, labels):
        self.rgb = np.asarray(rgb, dtype=np.float32)
        self.depth = np.asarray(depth, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if not len(self.rgb) == len(self.depth) == len(self.labels):
            raise DataError(f"unpaired data: {len(self.rgb)} rgb, {len(self.depth)} depth, "
                            f"{len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, index) -> tuple:
        return (scale_input(self.rgb[index]), scale_input(self.depth[index])), self.labels[index]

    def modality(self, name: str) -> ImageDataset:
        if name not in ("rgb", "depth"):
            raise ParameterError(f"unknown modality {name!r}")
        return ImageDataset(self.rgb if name == "rgb" else self.depth, self.labels)


@dataclass
class SyntheticSplit:
    train: PairedDataset
    test: PairedDataset


def synthetic_dataset(categories: int, train_per_class: int, test_per_class: int, seed: int = 0,
                      size: int = 64) -> SyntheticSplit:
    """Render paired RGB / HHA datasets in memory.

    Scene seeds are disjoint between splits and between dataset seeds.
    """
    def render(count, offset):
        rgb, hha, labels = [], [], []
        for k in range(categories):
            for i in range(count):
                image, depth, label = generate_synthetic_scene(k, seed * 100_000 + offset + i, size, categories)
                rgb.append(image)
                hha.append(encode_hha(depth))
                labels.append(label)
        if not labels:
            empty = np.zeros((0, 3, size, size), dtype=np.float32)
            return PairedDataset(empty, empty, [])
        return PairedDataset(np.stack(rgb), np.stack(hha), labels)

    return SyntheticSplit(render(train_per_class, 0), render(test_per_class, 50_000))


def read_camera(root: Path, width: int, height: int) -> tuple:
    """(focal, cx, cy) from ``camera.json`` next to the manifest, else a 60 degree FOV default."""
    path = Path(root) / "camera.json"
    if path.exists():
        cam = json.loads(path.read_text())
        return float(cam["focal"]), float(cam["cx"]), float(cam["cy"])
    return default_focal(width), (width - 1) / 2.0, (height - 1) / 2.0


def load_depth_encoding(path, root: Path) -> np.ndarray:
    """HHA image for a depth column entry: ``.dtns`` is used as is, ``.pgm`` is encoded."""
    data = load_image(path)
    if data.ndim == 2:
        focal, cx, cy = read_camera(root, data.shape[1], data.shape[0])
        return encode_hha(DepthMap(data, focal, cx, cy))
    if data.ndim != 3 or data.shape[0] != 3:
        raise DataError(f"{path}: expected a 3 x H x W HHA tensor, got shape {data.shape}")
    return data


def load_split(manifest: DatasetManifest, split: str, modality: str = "depth"):
    """Materialise one split as an ImageDataset (``rgb``/``depth``) or PairedDataset (``rgbd``)."""
    records = manifest.split(split)
    if not records:
        raise DataError(f"manifest has no {split!r} records")
    labels = [r.label for r in records]
    need_rgb = modality in ("rgb", "rgbd")
    need_depth = modality in ("depth", "rgbd")
    if modality not in ("rgb", "depth", "rgbd"):
        raise ParameterError(f"unknown modality {modality!r}")
    missing = [r.row for r in records
               if (need_rgb and r.rgb_path is None) or (need_depth and r.depth_path is None)]
    if missing:
        raise DataError(f"rows lack the {modality} inputs", rows=missing)
    rgb = [load_image(r.rgb_path) for r in records] if need_rgb else None
    depth = [load_depth_encoding(r.depth_path, manifest.root) for r in records] if need_depth else None
    shapes = {a.shape for a in (rgb or []) + (depth or [])}
    if len(shapes) > 1:
        raise DataError(f"{split} images have mixed shapes {sorted(shapes)}")
    if modality == "rgbd":
        return PairedDataset(np.stack(rgb), np.stack(depth), labels)
    return ImageDataset(np.stack(rgb if need_rgb else depth), labels)


def subset(dataset, index):
    """Row subset of an ImageDataset or PairedDataset."""
    index = np.asarray(index)
    if isinstance(dataset, PairedDataset):
        return PairedDataset(dataset.rgb[index], dataset.depth[index], dataset.labels[index])
    return ImageDataset(dataset.images[index], dataset.labels[index])

