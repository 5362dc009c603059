"""Organ-position priors: probability maps, spatial extents, the fixed
default crop, and contour seeds derived from detections."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .volume_io import CtVolume, Detection, MaskVolume

DEFAULT_CROP_CENTER = (287, 250)
DEFAULT_CROP_SIZE = 224
AIR_HU_THRESHOLD = -800.0


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel organ frequency accumulated over annotated masks."""

    p: np.ndarray
    n_slices_counted: int

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=np.float64)
        if arr.ndim != 2:
            raise ParameterError("probability map must be a 2D grid")
        if arr.min() < 0 or arr.max() > 1:
            raise ParameterError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "p", arr)
        if self.n_slices_counted < 1:
            raise ParameterError("n_slices_counted must be >= 1")

    @property
    def nx(self) -> int:
        return self.p.shape[1]

    @property
    def ny(self) -> int:
        return self.p.shape[0]


def build_probmap(masks: list[MaskVolume], per_volume: bool = False) -> ProbMap:
    """Foreground frequency per pixel over a collection of masks.

    Default: the fraction of all slices (across all volumes) where the
    pixel is foreground. With per_volume=True: the fraction of volumes
    where the pixel is foreground in any slice (then n_slices_counted
    holds the volume count).
    """
    if not masks:
        raise ParameterError("at least one mask volume is required")
    shape = (masks[0].ny, masks[0].nx)
    for m in masks:
        if (m.ny, m.nx) != shape:
            raise ParameterError(
                f"in-plane shape mismatch: {(m.nx, m.ny)} vs {(shape[1], shape[0])}"
            )
    counts = np.zeros(shape, dtype=np.int64)
    if per_volume:
        for m in masks:
            counts += m.binarized().any(axis=0)
        total = len(masks)
    else:
        for m in masks:
            counts += m.binarized().sum(axis=0, dtype=np.int64)
        total = sum(m.nz for m in masks)
    return ProbMap(counts / total, total)


def probmap_extents(pm: ProbMap, threshold: float = 0.0) -> tuple[int, int, int, int] | None:
    """Tight inclusive bounds (x_min, x_max, y_min, y_max) of {p > threshold}.

    Returns None when no pixel exceeds the threshold (empty support).
    """
    if not 0.0 <= threshold < 1.0:
        raise ParameterError("threshold must lie in [0, 1)")
    ys, xs = np.nonzero(pm.p > threshold)
    if xs.size == 0:
        return None
    return (int(xs.min()), int(xs.max()), int(ys.min()), int(ys.max()))


@dataclass(frozen=True)
class CropSpec:
    """A fixed square crop window: center (cx, cy) in pixels and side length."""

    center: tuple[int, int] = DEFAULT_CROP_CENTER
    size: int = DEFAULT_CROP_SIZE

    def __post_init__(self):
        if self.size < 1:
            raise ParameterError("crop size must be >= 1")


def default_crop(image: np.ndarray, spec: CropSpec | None = None) -> tuple[np.ndarray, tuple[int, int]]:
    """Extract the size x size window centered on spec.center.

    The window spans [c - size//2, c + ceil(size/2)) per axis and is kept
    fully inside the image by shifting its origin, never by shrinking it.
    Returns (window, origin) with origin as (x, y).
    """
    spec = spec if spec is not None else CropSpec()
    img = np.asarray(image)
    if img.ndim != 2:
        raise ParameterError("crop expects a 2D slice")
    ny, nx = img.shape
    s = spec.size
    if s > min(nx, ny):
        raise ParameterError(f"crop size {s} exceeds image size {nx}x{ny}")
    ox = min(max(spec.center[0] - s // 2, 0), nx - s)
    oy = min(max(spec.center[1] - s // 2, 0), ny - s)
    return img[oy:oy + s, ox:ox + s].copy(), (ox, oy)


@dataclass(frozen=True)
class Seed:
    """Initialization disk for a contour: center pixel (x, y) and radius."""

    center: tuple[int, int]
    radius: int

    def __post_init__(self):
        if self.radius < 3:
            raise ParameterError("seed radius must be >= 3")


def seed_from_detection(detection: Detection) -> Seed:
    """Disk seed at the detection centroid, radius a quarter of the short
    box side (floored, at least 3 px)."""
    x0, y0, x1, y1 = detection.box_px
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise ParameterError("degenerate detection box")
    cx = int(math.floor((x0 + x1) / 2 + 0.5))
    cy = int(math.floor((y0 + y1) / 2 + 0.5))
    return Seed((cx, cy), max(3, int(math.floor(0.25 * min(w, h)))))


def hu_statistics(volume: CtVolume, mask: MaskVolume) -> tuple[float, float, float]:
    """(mean HU, population std HU, organ fraction) under the mask.

    The organ fraction divides foreground voxels by the voxels above the
    air-exclusion threshold (HU > -800).
    """
    if volume.data.shape != mask.labels.shape:
        raise ParameterError(
            f"volume shape {volume.data.shape} != mask shape {mask.labels.shape}"
        )
    fg = mask.binarized().astype(bool)
    if not fg.any():
        raise ParameterError("mask is empty")
    values = volume.data[fg]
    body = int((volume.data > AIR_HU_THRESHOLD).sum())
    if body == 0:
        raise ParameterError("no voxels above the air threshold")
    return float(values.mean()), float(values.std()), float(fg.sum() / body)
