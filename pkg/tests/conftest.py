import numpy as np
import pytest


def analytic_disk(shape, center, radius):
    """Reference disk mask, built independently of the library."""
    ny, nx = shape
    cx, cy = center
    yy, xx = np.mgrid[:ny, :nx]
    return ((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius).astype(np.uint8)


def overlap_dice(a, b):
    """Reference Dice for phantom checks, independent of snakeseg.metrics."""
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / total


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
