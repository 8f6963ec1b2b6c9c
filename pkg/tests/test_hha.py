"""HHA encoding of analytic planar scenes."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthseed.errors import ContractError, DataError
from depthseed.data.hha import HEIGHT_RANGE_M, DepthMap, backproject, encode_hha


SIZE = 48


def rays(size=SIZE, fov=60.0):
    depth = DepthMap.with_default_intrinsics(np.ones((size, size)), fov)
    v, u = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.stack([(u - depth.cx) / depth.focal, -(v - depth.cy) / depth.focal, np.ones_like(u)], axis=-1)
    return d, depth


def render_plane(normal, offset, size=SIZE):
    """Depth of the plane ``normal . p = offset``; rays missing it are invalid."""
    d, cam = rays(size)
    denom = d @ np.asarray(normal, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = offset / denom
    z = np.where((t > 0) & np.isfinite(t) & (t < 50), t, 0.0)
    return DepthMap(z.astype(np.float32), cam.focal, cam.cx, cam.cy)


def interior(mask, margin=2):
    out = np.zeros_like(mask)
    out[margin:-margin, margin:-margin] = mask[margin:-margin, margin:-margin]
    return out


class TestPlanarScenes:
    def test_frontal_wall(self):
        hha = encode_hha(DepthMap.with_default_intrinsics(np.full((SIZE, SIZE), 2.0)))
        assert np.ptp(hha[0]) == 0
        np.testing.assert_allclose(hha[2], 127.5, atol=1e-3)

    def test_floor_angle_zero(self):
        depth = render_plane((0, 1, 0), -1.4)
        valid = interior(depth.valid)
        hha = encode_hha(depth)
        assert valid.sum() > 100
        np.testing.assert_allclose(hha[2][valid], 0.0, atol=0.5)

    def test_floor_height_is_constant(self):
        depth = render_plane((0, 1, 0), -1.4)
        hha = encode_hha(depth)
        assert np.ptp(hha[1][depth.valid]) < 1e-3

    def test_ramp_height_grows_linearly_with_distance(self):
        # Floor rising 0.3 m per metre of forward distance.
        depth = render_plane((0, 1, -0.3), -1.4)
        hha = encode_hha(depth)
        pts = backproject(depth)
        valid = depth.valid & (hha[1] > 0) & (hha[1] < 255)
        z, height = pts[..., 2][valid], hha[1][valid] / 255.0 * HEIGHT_RANGE_M
        slope, intercept = np.polyfit(z, height, 1)
        assert slope == pytest.approx(0.3, rel=1e-3)
        np.testing.assert_allclose(height, slope * z + intercept, atol=1e-4)

    @settings(max_examples=25, deadline=None)
    @given(tilt=st.floats(0, 80), yaw=st.floats(-60, 60), dist=st.floats(1.0, 4.0))
    def test_plane_angle_matches_analytic_normal(self, tilt, yaw, dist):
        t, y = math.radians(tilt), math.radians(yaw)
        # Facing the camera (normal towards -z) and tilted upwards by ``tilt``.
        normal = np.array([math.sin(y) * math.cos(t), math.sin(t), -math.cos(y) * math.cos(t)])
        depth = render_plane(-normal, dist)
        valid = interior(depth.valid)
        if valid.sum() < 20:
            return
        expected = math.degrees(math.acos(np.clip(normal @ np.array([0, 1, 0]), -1, 1)))
        angle = encode_hha(depth)[2][valid] / 255.0 * 180.0
        assert np.abs(angle - expected).max() < 1.0

    def test_floor_and_wall_give_two_angle_modes(self):
        d, cam = rays()
        with np.errstate(divide="ignore"):
            t_floor = np.where(d[..., 1] < 0, -1.4 / d[..., 1], np.inf)
        z = np.minimum(t_floor, 3.0)
        hha = encode_hha(DepthMap(z.astype(np.float32), cam.focal, cam.cx, cam.cy))
        hist, edges = np.histogram(hha[2], bins=51, range=(0, 255))
        peaks = [i for i in range(len(hist)) if hist[i] > 0.05 * hist.sum()
                 and hist[i] >= hist[max(i - 1, 0)] and hist[i] >= hist[min(i + 1, len(hist) - 1)]]
        assert len(peaks) == 2
        centres = (edges[:-1] + edges[1:]) / 2
        assert centres[peaks[0]] < 10 and abs(centres[peaks[1]] - 127.5) < 5


class TestChannels:
    def test_ranges_and_invalid_pixels(self, rng):
        values = rng.uniform(0.5, 5.0, size=(SIZE, SIZE)).astype(np.float32)
        values[::7, ::5] = 0
        depth = DepthMap.with_default_intrinsics(values)
        hha = encode_hha(depth)
        assert hha.shape == (3, SIZE, SIZE) and hha.dtype == np.float32
        assert np.isfinite(hha).all() and hha.min() >= 0 and hha.max() <= 255
        assert np.all(hha[:, ~depth.valid] == 0)

    def test_disparity_decreases_with_depth(self):
        values = np.tile(np.linspace(1.0, 5.0, SIZE), (SIZE, 1)).astype(np.float32)
        disp = encode_hha(DepthMap.with_default_intrinsics(values))[0]
        assert np.all(np.diff(disp[SIZE // 2]) <= 0)

    def test_all_invalid(self):
        with pytest.raises(DataError):
            encode_hha(DepthMap.with_default_intrinsics(np.zeros((4, 4))))

    def test_zero_gravity(self):
        with pytest.raises(ContractError):
            encode_hha(DepthMap.with_default_intrinsics(np.ones((4, 4))), gravity=(0, 0, 0))

    def test_non_positive_focal(self):
        with pytest.raises(ContractError):
            encode_hha(DepthMap(np.ones((4, 4), dtype=np.float32), 0.0, 1.5, 1.5))
