"""Minimal NIfTI-1 I/O, HU-windowed slice export, and detection/label text formats.

Only the uncompressed single-file ``.nii`` layout is handled, with datatypes
uint8, int16 and float32 and 3D payloads. Both byte orders are accepted on
read (detected from ``dim[0]``) and selectable on write. Gzip streams, header
extensions, NIfTI-2 and 4D time series are rejected with a clear error.

Slices are exported as binary PGM (P5, maxval 255). Detections and label
boxes travel as line-oriented UTF-8 text with LF endings:

* detection line: ``class confidence cx cy w h`` (all but class normalized)
* label line:     ``class cx cy w h``
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NiftiError, ParameterError, ParseError

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

# NIfTI datatype code -> numpy dtype
DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
DTYPE_NAMES = {2: "uint8", 4: "int16", 16: "float32"}


def _check_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or any(not np.isfinite(s) or s <= 0 for s in sp):
        raise ParameterError(f"spacing must be three finite positive values, got {spacing!r}")
    return sp


@dataclass(frozen=True)
class CtVolume:
    """A 3D grid of Hounsfield-unit samples with voxel spacing in mm.

    ``data`` has shape (nz, ny, nx) and is kept as float64 so payloads scaled
    by scl_slope/scl_inter survive a round trip bit-exactly. Instances are
    treated as immutable; never write into ``data``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.size == 0:
            raise ParameterError("volume data must be a non-empty (nz, ny, nx) array")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("volume data must be finite")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def nx(self) -> int:
        return self.data.shape[2]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nz(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class MaskVolume:
    """Per-voxel labels aligned to a CtVolume grid; 0 is background."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 3 or arr.size == 0:
            raise ParameterError("mask labels must be a non-empty (nz, ny, nx) array")
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(arr)
            if not np.all(np.isfinite(arr)) or np.any(rounded != arr):
                raise ParameterError("mask labels must be integers")
            arr = rounded
        arr = arr.astype(np.int64)
        if arr.min() < 0:
            raise ParameterError("mask labels must be non-negative")
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def nx(self) -> int:
        return self.labels.shape[2]

    @property
    def ny(self) -> int:
        return self.labels.shape[1]

    @property
    def nz(self) -> int:
        return self.labels.shape[0]

    def binarized(self) -> np.ndarray:
        """Foreground indicator grid in {0, 1} (idempotent on binary input)."""
        return (self.labels > 0).astype(np.uint8)


def as_mask(volume: CtVolume | MaskVolume) -> MaskVolume:
    """Reinterpret a loaded volume as label data.

    Needed for masks stored with a non-uint8 datatype, which read_nifti
    returns as CtVolume. Values must be non-negative integers.
    """
    if isinstance(volume, MaskVolume):
        return volume
    return MaskVolume(volume.data, volume.spacing)


@dataclass(frozen=True)
class NiftiHeader:
    """The subset of the 348-byte NIfTI-1 header this package understands."""

    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    byteorder: str


def _sniff_byteorder(data: bytes) -> str:
    for bo in ("<", ">"):
        dim0 = struct.unpack_from(bo + "h", data, 40)[0]
        if 1 <= dim0 <= 7:
            return bo
    raise NiftiError("dim[0] invalid in both byte orders; not a NIfTI-1 file")


def read_nifti(data: bytes) -> tuple[CtVolume | MaskVolume, NiftiHeader]:
    """Parse an uncompressed single-file NIfTI-1 payload.

    uint8 payloads come back as MaskVolume, int16/float32 as CtVolume.
    Voxels are scaled with raw*scl_slope + scl_inter when scl_slope != 0.
    """
    if data[:2] == b"\x1f\x8b":
        raise NiftiError("gzip-compressed stream; decompress to a plain .nii first")
    if len(data) < HEADER_SIZE:
        raise NiftiError(
            f"truncated payload: {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header"
        )
    bo = _sniff_byteorder(data)
    sizeof_hdr = struct.unpack_from(bo + "i", data, 0)[0]
    dim = struct.unpack_from(bo + "8h", data, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", data, 70)
    pixdim = struct.unpack_from(bo + "8f", data, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(bo + "3f", data, 108)
    magic = struct.unpack_from("4s", data, 344)[0]
    header = NiftiHeader(
        sizeof_hdr=sizeof_hdr,
        dim=tuple(int(d) for d in dim),
        datatype=int(datatype),
        bitpix=int(bitpix),
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=float(vox_offset),
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        magic=magic,
        byteorder=bo,
    )

    if magic != MAGIC:
        raise NiftiError(
            f"magic mismatch: expected {MAGIC!r}, got {magic!r} (only single-file .nii is supported)"
        )
    if datatype not in DTYPES:
        raise NiftiError(
            f"unsupported datatype code {datatype} (supported: 2=uint8, 4=int16, 16=float32)"
        )
    dt = DTYPES[datatype]
    if bitpix != dt.itemsize * 8:
        raise NiftiError(f"bitpix {bitpix} inconsistent with datatype {DTYPE_NAMES[datatype]}")
    offset = int(vox_offset)
    if not np.isfinite(vox_offset) or offset < HEADER_SIZE:
        raise NiftiError(f"vox_offset {vox_offset} is below the {HEADER_SIZE}-byte header")

    ndim = dim[0]
    nx = int(dim[1])
    ny = int(dim[2]) if ndim >= 2 else 1
    nz = int(dim[3]) if ndim >= 3 else 1
    if nx < 1 or ny < 1 or nz < 1:
        raise NiftiError(f"non-positive grid dims {(nx, ny, nz)}")
    for i in range(4, ndim + 1):
        if dim[i] > 1:
            raise NiftiError("4D+ payloads are not supported")
    spacing = tuple(
        float(pixdim[i]) if ndim >= i else 1.0 for i in (1, 2, 3)
    )
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise NiftiError(f"non-positive pixel spacing {spacing}")

    count = nx * ny * nz
    need = offset + count * dt.itemsize
    if len(data) < need:
        raise NiftiError(f"truncated payload: need {need} bytes, have {len(data)}")
    raw = np.frombuffer(data, dtype=dt.newbyteorder(bo), count=count, offset=offset)
    values = raw.astype(np.float64)
    if scl_slope != 0.0:
        values = values * float(scl_slope) + float(scl_inter)
    grid = values.reshape(nz, ny, nx)

    if datatype == 2:
        rounded = np.rint(grid)
        if np.any(rounded != grid) or grid.min() < 0:
            raise NiftiError("uint8 payload does not scale to non-negative integer labels")
        return MaskVolume(rounded.astype(np.int64), spacing), header
    return CtVolume(grid, spacing), header


def write_nifti(volume: CtVolume | MaskVolume, datatype: int, byteorder: str = "<") -> bytes:
    """Serialize a volume as single-file NIfTI-1.

    read_nifti(write_nifti(v)) reproduces dims, spacing and voxel values
    bit-exactly (spacing is stored as float32, so it must be float32-exact).
    """
    if byteorder not in ("<", ">"):
        raise ParameterError(f"byteorder must be '<' or '>', got {byteorder!r}")
    if datatype not in DTYPES:
        raise NiftiError(
            f"unsupported datatype code {datatype} (supported: 2=uint8, 4=int16, 16=float32)"
        )
    if isinstance(volume, MaskVolume):
        values = volume.labels.astype(np.float64)
    elif isinstance(volume, CtVolume):
        values = volume.data
    else:
        raise ParameterError(f"cannot serialize {type(volume).__name__}")

    dt = DTYPES[datatype]
    name = DTYPE_NAMES[datatype]
    if np.issubdtype(dt, np.integer):
        if np.any(np.rint(values) != values):
            raise NiftiError(f"values not representable as {name}: non-integer values present")
        info = np.iinfo(dt)
        lo, hi = float(values.min()), float(values.max())
        if lo < info.min or hi > info.max:
            raise NiftiError(
                f"value overflow for {name}: range [{lo:g}, {hi:g}] exceeds [{info.min}, {info.max}]"
            )
        payload = np.rint(values).astype(dt.newbyteorder(byteorder))
    else:
        finfo = np.finfo(dt)
        if np.any(np.abs(values) > float(finfo.max)):
            raise NiftiError(f"value overflow for {name}")
        payload = values.astype(dt.newbyteorder(byteorder))

    nz, ny, nx = values.shape
    dx, dy, dz = volume.spacing
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into(byteorder + "i", hdr, 0, HEADER_SIZE)
    struct.pack_into(byteorder + "8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(byteorder + "2h", hdr, 70, datatype, dt.itemsize * 8)
    struct.pack_into(byteorder + "8f", hdr, 76, 1.0, dx, dy, dz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(byteorder + "3f", hdr, 108, float(HEADER_SIZE + 4), 1.0, 0.0)
    struct.pack_into("4s", hdr, 344, MAGIC)
    # 4 zero bytes: no header extensions
    return bytes(hdr) + b"\x00" * 4 + payload.tobytes()


def export_slice(volume: CtVolume, z: int, window: tuple[float, float] = (-200.0, 300.0)) -> np.ndarray:
    """Map one transversal slice to 8-bit gray through an HU window.

    pixel = round((clamp(v, lo, hi) - lo) * 255 / (hi - lo)), rounding half
    away from zero.
    """
    lo, hi = float(window[0]), float(window[1])
    if lo >= hi:
        raise ParameterError(f"window low {lo} must be below high {hi}")
    if not 0 <= z < volume.nz:
        raise ParameterError(f"slice index {z} out of range [0, {volume.nz})")
    clipped = np.clip(volume.data[z], lo, hi)
    scaled = (clipped - lo) * (255.0 / (hi - lo))
    return np.floor(scaled + 0.5).astype(np.uint8)


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255) encoding of an 8-bit grayscale image."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ParameterError("PGM export expects a 2D uint8 image")
    ny, nx = img.shape
    return b"P5\n%d %d\n255\n" % (nx, ny) + img.tobytes()


@dataclass(frozen=True)
class Detection:
    """One predicted box: class id, confidence and a normalized center/size
    anchored to an (nx, ny) pixel frame."""

    class_id: int
    confidence: float
    cx: float
    cy: float
    w: float
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ParameterError("class id must be non-negative")
        for name in ("confidence", "cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} {v} outside [0, 1]")
        if self.nx < 1 or self.ny < 1:
            raise ParameterError("frame dims must be positive")

    @property
    def center_px(self) -> tuple[float, float]:
        return (self.cx * self.nx, self.cy * self.ny)

    @property
    def size_px(self) -> tuple[float, float]:
        return (self.w * self.nx, self.h * self.ny)

    @property
    def box_px(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in pixels, half-open."""
        cx, cy = self.center_px
        w, h = self.size_px
        return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def box_norm(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in normalized units."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class LabelLine:
    """One ground-truth box in normalized units: ``class cx cy w h``."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ParameterError("class id must be non-negative")
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} {v} outside [0, 1]")

    @property
    def box_norm(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


def _float_field(name: str, token: str, line: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"{name} '{token}' is not a number", line=line) from None
    if not 0.0 <= v <= 1.0:
        raise ParseError(f"{name} {token} outside [0, 1]", line=line)
    return v


def _int_field(name: str, token: str, line: int) -> int:
    try:
        v = int(token)
    except ValueError:
        raise ParseError(f"{name} '{token}' is not an integer", line=line) from None
    if v < 0:
        raise ParseError(f"{name} must be non-negative", line=line)
    return v


def _detection_from_fields(fields: list[str], nx: int, ny: int, line: int) -> Detection:
    class_id = _int_field("class id", fields[0], line)
    conf = _float_field("confidence", fields[1], line)
    cx = _float_field("cx", fields[2], line)
    cy = _float_field("cy", fields[3], line)
    w = _float_field("w", fields[4], line)
    h = _float_field("h", fields[5], line)
    return Detection(class_id, conf, cx, cy, w, h, nx, ny)


def parse_detections(text: str, nx: int, ny: int, min_conf: float = 0.25) -> list[Detection]:
    """Parse ``class confidence cx cy w h`` lines.

    Detections with confidence strictly greater than min_conf are kept in
    input order; blank lines are skipped. Malformed lines raise ParseError
    naming the 1-based line number.
    """
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split()
        if len(fields) != 6:
            raise ParseError(
                f"expected 6 fields 'class confidence cx cy w h', got {len(fields)}", line=ln
            )
        det = _detection_from_fields(fields, nx, ny, ln)
        if det.confidence > min_conf:
            out.append(det)
    return out


def serialize_detections(detections: list[Detection]) -> str:
    """Inverse of parse_detections for the kept set (round-trip exact)."""
    lines = [
        f"{d.class_id} {d.confidence!r} {d.cx!r} {d.cy!r} {d.w!r} {d.h!r}"
        for d in detections
    ]
    return "".join(line + "\n" for line in lines)


def parse_labels(text: str) -> list[LabelLine]:
    """Parse ``class cx cy w h`` ground-truth lines (same error discipline
    as parse_detections)."""
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split()
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields 'class cx cy w h', got {len(fields)}", line=ln)
        out.append(
            LabelLine(
                _int_field("class id", fields[0], ln),
                _float_field("cx", fields[1], ln),
                _float_field("cy", fields[2], ln),
                _float_field("w", fields[3], ln),
                _float_field("h", fields[4], ln),
            )
        )
    return out


def serialize_labels(labels: list[LabelLine]) -> str:
    lines = [f"{l.class_id} {l.cx!r} {l.cy!r} {l.w!r} {l.h!r}" for l in labels]
    return "".join(line + "\n" for line in lines)


_CONN8 = np.ones((3, 3), dtype=int)


def mask_to_labels(mask: MaskVolume, z: int, merge_classes: bool = False,
                   min_area: int = 1) -> list[LabelLine]:
    """Tight normalized boxes for the 8-connected components of slice z.

    One LabelLine per component of each label value, or of the binarized
    union when merge_classes is set (then everything is class 0; otherwise
    label value v maps to class v - 1). Components with fewer than min_area
    pixels are dropped. Boxes are ordered top-to-bottom, then left-to-right.
    """
    if not 0 <= z < mask.nz:
        raise ParameterError(f"slice index {z} out of range [0, {mask.nz})")
    sl = mask.labels[z]
    nx, ny = mask.nx, mask.ny
    if merge_classes:
        groups = [(0, sl > 0)]
    else:
        groups = [(int(v) - 1, sl == v) for v in np.unique(sl) if v > 0]

    keyed = []
    for cls, binary in groups:
        comp_map, n = ndimage.label(binary, structure=_CONN8)
        for comp in range(1, n + 1):
            ys, xs = np.nonzero(comp_map == comp)
            if xs.size < min_area:
                continue
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            box = LabelLine(cls, (x0 + x1) / 2 / nx, (y0 + y1) / 2 / ny,
                            (x1 - x0) / nx, (y1 - y0) / ny)
            keyed.append((y0, x0, cls, box))
    keyed.sort(key=lambda t: t[:3])
    return [t[3] for t in keyed]
