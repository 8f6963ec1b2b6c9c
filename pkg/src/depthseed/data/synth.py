"""Deterministic synthetic RGB-D indoor scenes.

Each category is a parametric room layout rendered by ray casting planes and
axis-aligned boxes from a pinhole camera (camera frame as in :mod:`.hha`,
floor below the camera, gravity ``(0, -1, 0)``). RGB is Lambertian shading
of the true surface normals times a category-tinted albedo plus pixel noise.

Tints come in four families shared by categories ``k`` and ``k + 4``, whose
layouts are easy to tell apart, while the layouts most easily confused
(``floor_box``/``floor_two_boxes``, ``flat_wall``/``alcove``) sit in
different tint families. Neither modality alone is therefore sufficient,
which is what the fusion experiments need.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError
from .hha import DepthMap, default_focal

LAYOUTS = (
    "flat_wall",
    "corridor",
    "floor_box",
    "staircase",
    "floor_two_boxes",
    "slanted_ceiling",
    "alcove",
    "cluttered_shelf",
)
MAX_CATEGORIES = len(LAYOUTS)

_FAMILIES = np.array([
    [0.75, 0.35, 0.30],
    [0.35, 0.70, 0.35],
    [0.35, 0.45, 0.80],
    [0.75, 0.70, 0.30],
])
_MEMBER_SHIFT = np.array([0.0, 0.0, 0.06])
TINT_NOISE = 0.07
PIXEL_NOISE = 6.0
DEPTH_NOISE = 0.01
HOLE_RATE = 0.02
MAX_DISTRACTORS = 2
EPS = 1e-9


class _Plane:
    def __init__(self, normal, offset, albedo):
        n = np.asarray(normal, dtype=np.float64)
        self.n = n / np.linalg.norm(n)
        self.d = float(offset) / np.linalg.norm(n)
        self.albedo = albedo

    def intersect(self, rays):
        denom = rays @ self.n
        safe = np.where(np.abs(denom) < EPS, EPS, denom)
        t = self.d / safe
        t = np.where((np.abs(denom) >= EPS) & (t > 1e-6), t, np.inf)
        sign = np.where(denom < 0, 1.0, -1.0)[..., None]
        return t, sign * self.n


class _Box:
    def __init__(self, lo, hi, albedo):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.albedo = albedo

    def intersect(self, rays):
        r = np.where(np.abs(rays) < EPS, EPS, rays)
        t1 = self.lo / r
        t2 = self.hi / r
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        t_near = near.max(axis=-1)
        t_far = far.min(axis=-1)
        hit = (t_far >= t_near) & (t_near > 1e-6)
        t = np.where(hit, t_near, np.inf)
        axis = near.argmax(axis=-1)
        normal = np.zeros(rays.shape)
        comp = np.take_along_axis(rays, axis[..., None], axis=-1)[..., 0]
        np.put_along_axis(normal, axis[..., None], -np.sign(comp)[..., None], axis=-1)
        return t, normal


def _layout(category: int, rng: np.random.Generator, albedo, hc: float) -> list:
    floor = _Plane((0, 1, 0), -hc, albedo())
    name = LAYOUTS[category]
    if name == "flat_wall":
        yaw = math.radians(rng.uniform(-15, 15))
        dist = rng.uniform(1.2, 2.0)
        return [_Plane((math.sin(yaw), 0, -math.cos(yaw)), -dist * math.cos(yaw), albedo())]
    if name == "corridor":
        yaw = math.radians(rng.uniform(-10, 10))
        left, right = rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)
        nx = np.array([math.cos(yaw), 0, math.sin(yaw)])
        return [
            floor,
            _Plane((0, -1, 0), -(2.6 - hc), albedo()),
            _Plane(nx, -left, albedo()),
            _Plane(-nx, -right, albedo()),
            _Plane((0, 0, -1), -rng.uniform(6, 10), albedo()),
        ]
    if name in ("floor_box", "floor_two_boxes"):
        back = rng.uniform(3.0, 5.0)
        prims = [floor, _Plane((0, 0, -1), -back, albedo())]
        centers = [rng.uniform(-0.8, 0.8)] if name == "floor_box" else [rng.uniform(-1.2, -0.4), rng.uniform(0.4, 1.2)]
        for cx in centers:
            w, h, d = rng.uniform(0.4, 1.0), rng.uniform(0.3, 0.9), rng.uniform(0.4, 0.8)
            cz = rng.uniform(1.8, back - 0.6)
            prims.append(_Box((cx - w / 2, -hc, cz - d / 2), (cx + w / 2, -hc + h, cz + d / 2), albedo()))
        return prims
    if name == "staircase":
        steps = int(rng.integers(4, 8))
        rise, run, z0 = rng.uniform(0.15, 0.25), rng.uniform(0.25, 0.4), rng.uniform(1.5, 2.5)
        back = z0 + steps * run + rng.uniform(0.5, 1.5)
        prims = [floor, _Plane((0, 0, -1), -back, albedo())]
        step_albedo = albedo()
        for i in range(steps):
            prims.append(_Box((-4, -hc, z0 + i * run), (4, -hc + (i + 1) * rise, back), step_albedo))
        return prims
    if name == "slanted_ceiling":
        alpha = math.radians(rng.uniform(15, 35))
        yc = rng.uniform(0.5, 0.9)
        return [
            floor,
            _Plane((0, 0, -1), -rng.uniform(4.0, 6.0), albedo()),
            _Plane((0, math.cos(alpha), math.sin(alpha)), yc * math.cos(alpha), albedo()),
        ]
    if name == "alcove":
        dist, recess = rng.uniform(1.6, 2.4), rng.uniform(0.3, 0.8)
        x0, x1 = rng.uniform(-0.7, -0.2), rng.uniform(0.2, 0.7)
        y0, y1 = rng.uniform(-0.6, -0.2), rng.uniform(0.2, 0.6)
        wall = albedo()
        z = (dist, dist + recess)
        return [
            floor,
            _Plane((0, 0, -1), -(dist + recess), albedo()),
            _Box((-6, -hc, z[0]), (x0, 6, z[1]), wall),
            _Box((x1, -hc, z[0]), (6, 6, z[1]), wall),
            _Box((x0, y1, z[0]), (x1, 6, z[1]), wall),
            _Box((x0, -hc, z[0]), (x1, y0, z[1]), wall),
        ]
    # cluttered_shelf
    dist = rng.uniform(1.8, 2.6)
    prims = [floor, _Plane((0, 0, -1), -dist, albedo())]
    for _ in range(int(rng.integers(6, 13))):
        w, h = rng.uniform(0.15, 0.4), rng.uniform(0.15, 0.4)
        x = rng.uniform(-1.0, 1.0)
        y = rng.choice([-0.7, -0.2, 0.3, 0.8])
        depth = rng.uniform(0.1, 0.4)
        prims.append(_Box((x - w / 2, y, dist - depth), (x + w / 2, y + h, dist), albedo()))
    return prims


def _distractors(rng: np.random.Generator, albedo, floor_y: float, far: float) -> list:
    """Up to MAX_DISTRACTORS small floor boxes shared by every layout (clutter)."""
    boxes = []
    for _ in range(int(rng.integers(0, MAX_DISTRACTORS + 1))):
        w, h, d = rng.uniform(0.15, 0.35, 3)
        x, z = rng.uniform(-1.2, 1.2), rng.uniform(1.2, far)
        boxes.append(_Box((x - w / 2, floor_y, z - d / 2), (x + w / 2, floor_y + h, z + d / 2), albedo()))
    return boxes


def category_tint(category: int) -> np.ndarray:
    return _FAMILIES[category % 4] + (category // 4) * _MEMBER_SHIFT


def generate_synthetic_scene(category: int, seed: int, size: int = 64, categories: int = MAX_CATEGORIES):
    """Render one scene; returns ``(rgb 3 x H x W in [0, 255], DepthMap, label)``.

    Depth is quantised to whole millimetres so it survives a 16-bit PGM round
    trip bit for bit.
    """
    if categories > MAX_CATEGORIES:
        raise ParameterError(f"the generator supports at most {MAX_CATEGORIES} layouts, got K={categories}")
    if not 0 <= category < categories:
        raise ParameterError(f"category {category} outside [0, {categories})")
    if size < 8:
        raise ParameterError(f"image size must be at least 8, got {size}")
    rng = np.random.default_rng([int(category), int(seed), 7919])
    tint = np.clip(category_tint(category) + rng.normal(0.0, TINT_NOISE, 3), 0.05, 1.0)

    def albedo():
        return np.clip(tint * rng.uniform(0.7, 1.0), 0.0, 1.0)

    camera_height = rng.uniform(1.2, 1.6)
    prims = _layout(category, rng, albedo, camera_height)
    prims += _distractors(rng, albedo, -camera_height, 3.0)

    focal = default_focal(size)
    c = (size - 1) / 2.0
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    rays = np.stack([(u - c) / focal, -(v - c) / focal, np.ones_like(u)], axis=-1)

    best = np.full((size, size), np.inf)
    normal = np.zeros((size, size, 3))
    colour = np.zeros((size, size, 3))
    for prim in prims:
        t, n = prim.intersect(rays)
        closer = t < best
        best = np.where(closer, t, best)
        normal[closer] = n[closer]
        colour[closer] = prim.albedo
    valid = np.isfinite(best) & (best < 65.0)
    z = np.where(valid, best, 0.0)
    z = z + rng.normal(0.0, 1.0, z.shape) * DEPTH_NOISE * z * z
    valid &= (rng.random(z.shape) >= HOLE_RATE) & (z > 0)
    z = np.where(valid, z, 0.0)
    mm = np.rint(z * 1000.0).astype(np.uint16)
    depth = DepthMap(mm.astype(np.float32) / 1000.0, focal, c, c)

    light = np.array([0.3, 0.8, -0.5]) + rng.normal(0.0, 0.1, 3)
    light /= np.linalg.norm(light)
    shade = 0.35 + 0.65 * np.clip(normal @ light, 0.0, None)
    rgb = colour * shade[..., None] * 255.0 + rng.normal(0.0, PIXEL_NOISE, (size, size, 3))
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.float32).transpose(2, 0, 1).copy()
    return rgb, depth, category
