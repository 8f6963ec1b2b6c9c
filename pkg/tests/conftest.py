"""Shared fixtures and independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import settings

from depthseed.data.datasets import ImageDataset, PairedDataset
from depthseed.models import ArchPreset, build_preset

# Timing varies a lot on a shared single core; example counts are set per test.
settings.register_profile("depthseed", deadline=None)
settings.load_profile("depthseed")

# Small widths keep every preset cheap enough to train inside unit tests.
SMALL = {
    "alexlike": dict(widths=(4, 6, 6, 6, 4, 16, 16), input_size=67),
    "wsp": dict(widths=(4, 6, 8)),
    "dcnn": dict(widths=(4, 6, 8, 8), hidden=16, input_size=35),
}


def small_preset(name: str, categories: int = 3, seed: int = 0, **overrides):
    kwargs = dict(SMALL[name])
    kwargs.update(overrides)
    return build_preset(ArchPreset(name, categories, **kwargs), seed)


# =============================================================================
# Reference oracles (deliberately naive loops)
# =============================================================================


def conv2d_reference(x, w, b, stride=1, pad=0):
    """Direct cross-correlation by index enumeration."""
    x = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for i, o, r, s in itertools.product(range(n), range(k), range(oh), range(ow)):
        patch = x[i, :, r * stride:r * stride + kh, s * stride:s * stride + kw]
        out[i, o, r, s] = (patch * w[o]).sum() + b[o]
    return out


def maxpool_reference(x, win, stride):
    n, c, h, w = x.shape
    oh, ow = (h - win) // stride + 1, (w - win) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for i, j, r, s in itertools.product(range(n), range(c), range(oh), range(ow)):
        out[i, j, r, s] = x[i, j, r * stride:r * stride + win, s * stride:s * stride + win].max()
    return out


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar numpy function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        keep = x[idx]
        x[idx] = keep + eps
        fp = f(x)
        x[idx] = keep - eps
        fm = f(x)
        x[idx] = keep
        g[idx] = (fp - fm) / (2 * eps)
    return g


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_images():
    """12 random 3x35x35 images over 3 classes (4 per class)."""
    gen = np.random.default_rng(1)
    images = gen.uniform(0, 255, size=(12, 3, 35, 35)).astype(np.float32)
    labels = np.repeat(np.arange(3), 4)
    return ImageDataset(images, labels)


@pytest.fixture
def tiny_pairs():
    gen = np.random.default_rng(2)
    rgb = gen.uniform(0, 255, size=(8, 3, 35, 35)).astype(np.float32)
    depth = gen.uniform(0, 255, size=(8, 3, 35, 35)).astype(np.float32)
    return PairedDataset(rgb, depth, np.tile(np.arange(2), 4))


# =============================================================================
# Acceptance summary
# =============================================================================

# Filled by tests/test_acceptance.py with one "PASS/FAIL criterion N: ..." line each.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
