"""End-to-end per-slice segmentation around detector boxes.

For every detected box the slice is HU-clipped, cropped with padding around
the box centroid, turned into an edge indicator, evolved from a disk seed,
and the resulting level set is pasted back at the recorded origin. Results
within a slice are OR-combined; an optional slice-triplet vote along z
cleans isolated disagreements.
"""
from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError
from .localization import CropSpec, default_crop, seed_from_detection
from .morphsnakes import GacParams, disk_level_set, morph_gac, _check_level_set
from .preprocess import DEFAULT_ALPHA, DEFAULT_SIGMA, DEFAULT_WINDOW, clip_hu, inverse_gaussian_gradient
from .volume_io import CtVolume, Detection, MaskVolume, _detection_from_fields, parse_detections


@dataclass(frozen=True)
class SliceDetections:
    """Detections attached to one slice index."""

    z: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.z < 0:
            raise ParameterError("slice index must be non-negative")


@dataclass(frozen=True)
class PipelineParams:
    """Everything segment_volume needs besides the data.

    ``pad`` scales the detection box around its centroid before cropping;
    ``confidence`` gates detections strictly (kept iff conf > confidence).
    With ``fallback_default_crop`` slices lacking detections are segmented
    from the fixed default crop window instead of staying empty.
    """

    gac: GacParams = field(default_factory=GacParams)
    sigma: float = DEFAULT_SIGMA
    alpha: float = DEFAULT_ALPHA
    pad: float = 1.2
    confidence: float = 0.25
    window: tuple[float, float] = DEFAULT_WINDOW
    postprocess: bool = False
    fallback_default_crop: bool = False

    def __post_init__(self):
        if self.pad < 1.0:
            raise ParameterError("pad factor must be >= 1")
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError("confidence threshold must lie in [0, 1]")
        if self.window[0] >= self.window[1]:
            raise ParameterError("window low must be below high")


def reposition(cropped: np.ndarray, origin: tuple[int, int], frame: tuple[int, int]) -> np.ndarray:
    """Paste a cropped level set into an all-zero (ny, nx) frame at origin (x, y)."""
    u = _check_level_set(cropped)
    nx, ny = frame
    x0, y0 = origin
    h, w = u.shape
    if x0 < 0 or y0 < 0 or x0 + w > nx or y0 + h > ny:
        raise ParameterError(
            f"crop window {w}x{h} at origin {(x0, y0)} exceeds frame {nx}x{ny}"
        )
    out = np.zeros((ny, nx), dtype=np.uint8)
    out[y0:y0 + h, x0:x0 + w] = u
    return out


def _crop_bounds(det: Detection, pad: float, nx: int, ny: int) -> tuple[int, int, int, int]:
    cx, cy = det.center_px
    w, h = det.size_px
    hw, hh = 0.5 * w * pad, 0.5 * h * pad
    x0 = max(0, int(math.floor(cx - hw)))
    x1 = min(nx, int(math.ceil(cx + hw)))
    y0 = max(0, int(math.floor(cy - hh)))
    y1 = min(ny, int(math.ceil(cy + hh)))
    return x0, y0, x1, y1


def _evolve_window(window: np.ndarray, seed_center: tuple[int, int], seed_radius: int,
                   params: PipelineParams) -> np.ndarray | None:
    init = disk_level_set(window.shape, seed_center, seed_radius)
    if init.sum() == 0:
        return None
    g = inverse_gaussian_gradient(window, params.sigma, params.alpha)
    return morph_gac(g, init, params.gac).u


def segment_volume(volume: CtVolume, dets: list[SliceDetections],
                   params: PipelineParams | None = None,
                   on_slice=None) -> MaskVolume:
    """Segment every detected slice of a volume; undetected slices stay empty.

    Detections at or below the confidence threshold are dropped. Multiple
    detections on a slice evolve independently and are OR-combined, so
    their order never matters. ``on_slice(z, n_detections, seconds)`` is
    called after each processed slice (timing hook for the CLI).
    """
    params = params if params is not None else PipelineParams()
    nx, ny, nz = volume.nx, volume.ny, volume.nz
    out = np.zeros((nz, ny, nx), dtype=np.uint8)

    covered = set()
    for sd in dets:
        if sd.z >= nz:
            raise ParameterError(f"detection slice {sd.z} out of range [0, {nz})")
        kept = [d for d in sd.detections if d.confidence > params.confidence]
        if not kept:
            continue
        start = time.perf_counter()
        clipped = clip_hu(volume.data[sd.z], *params.window)
        for det in kept:
            x0, y0, x1, y1 = _crop_bounds(det, params.pad, nx, ny)
            seed = seed_from_detection(det)
            u = _evolve_window(
                clipped[y0:y1, x0:x1],
                (seed.center[0] - x0, seed.center[1] - y0),
                seed.radius,
                params,
            )
            if u is not None:
                np.maximum(out[sd.z], reposition(u, (x0, y0), (nx, ny)), out=out[sd.z])
        covered.add(sd.z)
        if on_slice is not None:
            on_slice(sd.z, len(kept), time.perf_counter() - start)

    if params.fallback_default_crop:
        size = min(CropSpec().size, nx, ny)
        spec = CropSpec(size=size)
        radius = max(3, size // 4)
        for z in range(nz):
            if z in covered:
                continue
            start = time.perf_counter()
            clipped = clip_hu(volume.data[z], *params.window)
            window, (ox, oy) = default_crop(clipped, spec)
            u = _evolve_window(window, (size // 2, size // 2), radius, params)
            if u is not None:
                np.maximum(out[z], reposition(u, (ox, oy), (nx, ny)), out=out[z])
            if on_slice is not None:
                on_slice(z, 0, time.perf_counter() - start)

    mask = MaskVolume(out, volume.spacing)
    return postprocess(mask) if params.postprocess else mask


def postprocess(mask: MaskVolume) -> MaskVolume:
    """Slice-triplet vote along z.

    A voxel takes its z-neighbors' value when those two agree and differ
    from it. The pass is buffered (reads always hit the input) and never
    touches the first or last slice; volumes with nz < 3 pass through.
    """
    labels = mask.labels
    if labels.shape[0] < 3:
        return MaskVolume(labels.copy(), mask.spacing)
    out = labels.copy()
    before, middle, after = labels[:-2], labels[1:-1], labels[2:]
    fix = (before == after) & (before != middle)
    out[1:-1][fix] = before[fix]
    return MaskVolume(out, mask.spacing)


def parse_slice_detections(text: str, nx: int, ny: int, nz: int,
                           min_conf: float = 0.25) -> list[SliceDetections]:
    """Parse z-prefixed detection lines: ``z class conf cx cy w h``.

    Lines failing the strict confidence gate are dropped; the result is
    grouped per slice and sorted by z.
    """
    groups: dict[int, list[Detection]] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split()
        if len(fields) != 7:
            raise ParseError(
                f"expected 7 fields 'z class conf cx cy w h', got {len(fields)}", line=ln
            )
        try:
            z = int(fields[0])
        except ValueError:
            raise ParseError(f"slice index '{fields[0]}' is not an integer", line=ln) from None
        if not 0 <= z < nz:
            raise ParseError(f"slice index {z} out of range [0, {nz})", line=ln)
        det = _detection_from_fields(fields[1:], nx, ny, ln)
        if det.confidence > min_conf:
            groups.setdefault(z, []).append(det)
    return [SliceDetections(z, tuple(ds)) for z, ds in sorted(groups.items())]


def load_detections(path, nx: int, ny: int, nz: int,
                    min_conf: float = 0.25) -> list[SliceDetections]:
    """Read detections from a z-prefixed file or a directory of per-slice
    files (each ``*.txt`` name must end in its slice index, e.g.
    ``slice_12.txt``)."""
    p = Path(path)
    if p.is_dir():
        groups: dict[int, list[Detection]] = {}
        for f in sorted(p.glob("*.txt")):
            m = re.search(r"(\d+)$", f.stem)
            if m is None:
                raise ParseError(f"{f.name}: cannot infer a slice index from the file name")
            z = int(m.group(1))
            if z >= nz:
                raise ParseError(f"{f.name}: slice index {z} out of range [0, {nz})")
            try:
                detections = parse_detections(f.read_text(), nx, ny, min_conf)
            except ParseError as e:
                raise ParseError(f"{f.name}: {e}") from None
            if detections:
                groups.setdefault(z, []).extend(detections)
        return [SliceDetections(z, tuple(ds)) for z, ds in sorted(groups.items())]
    return parse_slice_detections(p.read_text(), nx, ny, nz, min_conf)
