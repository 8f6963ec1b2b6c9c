"""Filter introspection: activation ratios, filter ordering and conv1 filter grids."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.formats import write_ppm
from .errors import ConfigError, ExportError
from .tensor import no_grad

SORT_KEYS = ("ratio", "mean")
REPORT_COLUMNS = ("layer", "rank", "filter_id", "ratio", "mean")


@dataclass
class ActivationProfile:
    """Per-filter utilisation of one conv layer.

    ``ratio[k]`` is the fraction of post-ReLU responses of filter ``k`` that
    are strictly positive, counted per spatial position and sample.
    ``order`` records the original filter ids (identity until sorted).
    """

    layer: str
    ratio: np.ndarray
    mean: np.ndarray
    samples: int
    order: np.ndarray = None

    def __post_init__(self):
        self.ratio = np.asarray(self.ratio, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.order is None:
            self.order = np.arange(len(self.ratio))
        if self.samples < 1:
            raise ConfigError("an activation profile needs at least one sample")

    def __len__(self) -> int:
        return len(self.ratio)


def activation_ratio(model, layer: str, dataset, batch_size: int = 32) -> ActivationProfile:
    """Fraction of strictly positive post-ReLU responses per filter of a conv layer."""
    spec = model.layer(layer)
    if spec.kind != "conv":
        raise ConfigError(f"activation ratios need a conv layer; {layer!r} is {spec.kind}")
    k = spec.hp["out"]
    positive = np.zeros(k, dtype=np.int64)
    total = np.zeros(k, dtype=np.float64)
    count = 0
    n = len(dataset)
    if n == 0:
        raise ConfigError("activation ratios need at least one sample")
    with no_grad():
        for start in range(0, n, batch_size):
            inputs, _ = dataset.batch(np.arange(start, min(start + batch_size, n)))
            pre = model.forward(inputs[0], until=layer).data
            act = np.maximum(pre, 0.0)
            positive += (act > 0).sum(axis=(0, 2, 3))
            total += act.sum(axis=(0, 2, 3), dtype=np.float64)
            count += act.shape[0] * act.shape[2] * act.shape[3]
    return ActivationProfile(layer, positive / count, total / count, n)


def sort_profile(profile: ActivationProfile, key: str = "ratio") -> ActivationProfile:
    """Descending stable sort; equal values keep ascending filter order."""
    if key not in SORT_KEYS:
        raise ConfigError(f"sort key must be one of {SORT_KEYS}, got {key!r}")
    values = profile.ratio if key == "ratio" else profile.mean
    perm = np.argsort(-values, kind="stable")
    return ActivationProfile(profile.layer, profile.ratio[perm], profile.mean[perm], profile.samples,
                             profile.order[perm])


def grid_layout(count: int) -> tuple:
    """(rows, cols) of a near-square tiling with ``cols = ceil(sqrt(count))``."""
    cols = max(1, math.ceil(math.sqrt(count)))
    return math.ceil(count / cols), cols


def normalize_kernel(kernel: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 255]; a constant kernel becomes mid-gray 127.5."""
    kernel = np.asarray(kernel, dtype=np.float64)
    lo, hi = kernel.min(), kernel.max()
    if hi - lo <= 0:
        return np.full(kernel.shape, 127.5)
    return (kernel - lo) / (hi - lo) * 255.0


def filter_grid(weight: np.ndarray) -> np.ndarray:
    """Tile K x C x k x k kernels (C in {1, 3}) into a 3 x S_h x S_w image.

    Each kernel is normalised independently; tiles are separated by 1-pixel
    black lines, so a side with ``g`` tiles measures ``g * (k + 1) + 1``.
    """
    weight = np.asarray(weight)
    if weight.ndim != 4:
        raise ExportError(f"expected K x C x k x k kernels, got shape {weight.shape}")
    count, channels, kh, kw = weight.shape
    if channels not in (1, 3):
        raise ExportError(f"kernels have {channels} input channels; only 1 or 3 can be shown as colour, "
                          "export channels separately")
    rows, cols = grid_layout(count)
    image = np.zeros((3, rows * (kh + 1) + 1, cols * (kw + 1) + 1))
    for i in range(count):
        r, c = divmod(i, cols)
        y, x = 1 + r * (kh + 1), 1 + c * (kw + 1)
        image[:, y:y + kh, x:x + kw] = normalize_kernel(weight[i])
    return image


def export_filter_grid(model, layer: str = "conv1", path=None) -> np.ndarray:
    """Filter grid image of a conv layer, optionally written as 8-bit PPM."""
    spec = model.layer(layer)
    if spec.kind != "conv":
        raise ExportError(f"{layer!r} is a {spec.kind} layer, not a conv layer")
    image = filter_grid(model.params[f"{layer}.weight"].data)
    if path is not None:
        write_ppm(path, image)
    return image


def profile_rows(profiles: Sequence[ActivationProfile], key: str = "ratio") -> list:
    """Rows ``(layer, rank, filter_id, ratio, mean)``; rank 1 is the most active filter."""
    if not profiles:
        raise ConfigError("profile_report needs at least one profile")
    rows = []
    for prof in profiles:
        ordered = sort_profile(prof, key)
        for rank, (fid, ratio, mean) in enumerate(zip(ordered.order, ordered.ratio, ordered.mean), start=1):
            rows.append((prof.layer, rank, int(fid), float(f"{ratio:.6g}"), float(f"{mean:.6g}")))
    return rows


def profile_report(profiles: Sequence[ActivationProfile], path=None, key: str = "ratio") -> str:
    """CSV with one row per (profile, filter rank); values use 6 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for layer, rank, fid, ratio, mean in profile_rows(profiles, key):
        writer.writerow([layer, rank, fid, f"{ratio:.6g}", f"{mean:.6g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_profile_report(path) -> list:
    """Parse a report back into ``(layer, rank, filter_id, ratio, mean)`` tuples."""
    rows = csv.DictReader(io.StringIO(Path(path).read_text()))
    return [(r["layer"], int(r["rank"]), int(r["filter_id"]), float(r["ratio"]), float(r["mean"])) for r in rows]
