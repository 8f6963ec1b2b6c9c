"""Simplified HHA encoding of depth maps.

Camera frame: x right, y up, z forward (optical axis). Pixel (u, v) with v
growing downwards back-projects to ``((u - cx) Z / f, -(v - cy) Z / f, Z)``.
Gravity is given, not estimated; the default ``(0, -1, 0)`` points down.

Channels, each in [0, 255]:

* disparity ``1/Z``, with the 1st/99th percentiles of valid pixels mapped to 0/255;
* height above the 5th-percentile point along ``-gravity``, clamped to [0, 2.55] m;
* angle between the surface normal and ``-gravity``, [0, 180] degrees -> [0, 255].

Invalid pixels (depth 0) are 0 in every channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DataError

HEIGHT_RANGE_M = 2.55
DEFAULT_GRAVITY = (0.0, -1.0, 0.0)


@dataclass
class DepthMap:
    values: np.ndarray  # H x W metres, 0 = invalid
    focal: float
    cx: float
    cy: float

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0

    @classmethod
    def with_default_intrinsics(cls, values, fov_deg: float = 60.0) -> "DepthMap":
        values = np.asarray(values, dtype=np.float32)
        h, w = values.shape
        return cls(values, default_focal(w, fov_deg), (w - 1) / 2.0, (h - 1) / 2.0)


def default_focal(width: int, fov_deg: float = 60.0) -> float:
    return width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))


def backproject(depth: DepthMap) -> np.ndarray:
    """H x W x 3 float64 point cloud in the camera frame."""
    if depth.focal <= 0:
        raise ContractError(f"focal length must be positive, got {depth.focal}")
    z = depth.values.astype(np.float64)
    v, u = np.mgrid[0:depth.height, 0:depth.width].astype(np.float64)
    x = (u - depth.cx) * z / depth.focal
    y = -(v - depth.cy) * z / depth.focal
    return np.stack([x, y, z], axis=-1)


def _tangent(points: np.ndarray, valid: np.ndarray, axis: int) -> np.ndarray:
    """Per-pixel derivative along ``axis`` using only valid neighbours.

    Central difference where both neighbours are valid, one-sided where only
    one is, zero where neither is.
    """
    fwd = np.zeros_like(points)
    bwd = np.zeros_like(points)
    has_fwd = np.zeros(valid.shape, dtype=bool)
    has_bwd = np.zeros(valid.shape, dtype=bool)
    lead = [slice(None)] * 2
    lag = [slice(None)] * 2
    lead[axis], lag[axis] = slice(1, None), slice(None, -1)
    lead, lag = tuple(lead), tuple(lag)
    diff = points[lead] - points[lag]
    pair = valid[lead] & valid[lag]
    fwd[lag] = diff
    has_fwd[lag] = pair
    bwd[lead] = diff
    has_bwd[lead] = pair
    both = has_fwd & has_bwd
    out = np.where(has_fwd[..., None], fwd, bwd)
    out[both] = 0.5 * (fwd[both] + bwd[both])
    out[~(has_fwd | has_bwd)] = 0.0
    return out


def surface_normals(points: np.ndarray, valid=None) -> np.ndarray:
    """Unit normals from finite-difference tangents, oriented towards the camera.

    With a ``valid`` mask, differences never reach across invalid pixels;
    pixels without a usable tangent get a zero normal.
    """
    if valid is None:
        valid = np.ones(points.shape[:2], dtype=bool)
    du = _tangent(points, valid, axis=1)
    dv = _tangent(points, valid, axis=0)
    n = np.cross(du, dv)
    facing = np.einsum("hwc,hwc->hw", n, points)
    n[facing > 0] *= -1
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def _percentile_scale(x: np.ndarray, valid: np.ndarray, lo_q: float, hi_q: float) -> np.ndarray:
    lo, hi = np.percentile(x[valid], [lo_q, hi_q])
    if hi - lo <= 1e-12:
        return np.full(x.shape, 127.5)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0) * 255.0


def encode_hha(depth: DepthMap, gravity=DEFAULT_GRAVITY) -> np.ndarray:
    """Encode a depth map as a 3 x H x W float32 HHA image."""
    g = np.asarray(gravity, dtype=np.float64)
    gn = np.linalg.norm(g)
    if gn == 0:
        raise ContractError("gravity must be a non-zero vector")
    up = -g / gn
    valid = depth.valid
    if not valid.any():
        raise DataError("depth map has no valid pixels")

    points = backproject(depth)
    z = points[..., 2]
    disparity = np.where(valid, 1.0 / np.where(valid, z, 1.0), 0.0)
    disp_ch = _percentile_scale(disparity, valid, 1, 99)

    h = points @ up
    ref = np.percentile(h[valid], 5)
    height_ch = np.clip(h - ref, 0.0, HEIGHT_RANGE_M) / HEIGHT_RANGE_M * 255.0

    normals = surface_normals(points, valid)
    cosang = np.clip(normals @ up, -1.0, 1.0)
    angle_ch = np.degrees(np.arccos(cosang)) / 180.0 * 255.0

    hha = np.stack([disp_ch, height_ch, angle_ch])
    hha[:, ~valid] = 0.0
    return hha.astype(np.float32)
