"""Binary level-set curve evolution built from morphological operators.

The contour is the 0/1 interface of a binary grid ``u``. Instead of
integrating a PDE, one evolution step applies a short sequence of discrete
operators: region- or edge-driven pixel flips plus a curvature-like
smoothing, the composition of sup-inf and inf-sup operators over four line
orientations. Every step is integer-valued and deterministic, so the
evolution is stable at any iteration count and bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .preprocess import EdgeIndicator

_CROSS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
_SQUARE = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
# discrete line segments of length 3: horizontal, vertical, both diagonals
_LINES = (
    ((0, -1), (0, 0), (0, 1)),
    ((-1, 0), (0, 0), (1, 0)),
    ((-1, -1), (0, 0), (1, 1)),
    ((-1, 1), (0, 0), (1, -1)),
)


def _check_level_set(u) -> np.ndarray:
    arr = np.asarray(u)
    if arr.ndim != 2:
        raise ParameterError("level set must be a 2D grid")
    if not np.isin(arr, (0, 1)).all():
        raise ParameterError("level set values must be 0 or 1")
    return arr.astype(np.uint8)


def _reduce_neighbors(u: np.ndarray, offsets, op, pad: int) -> np.ndarray:
    """op-fold of u over in-bounds offset neighbors (pad value is op-neutral)."""
    ny, nx = u.shape
    padded = np.pad(u, 1, constant_values=pad)
    acc = None
    for dy, dx in offsets:
        view = padded[1 + dy:1 + dy + ny, 1 + dx:1 + dx + nx]
        if acc is None:
            acc = view.copy()
        else:
            op(acc, view, out=acc)
    return acc


def dilate(u) -> np.ndarray:
    """Dilation by the 3x3 cross; cells outside the grid are ignored."""
    return _reduce_neighbors(_check_level_set(u), _CROSS, np.maximum, 0)


def erode(u) -> np.ndarray:
    """Erosion by the 3x3 cross; cells outside the grid are ignored."""
    return _reduce_neighbors(_check_level_set(u), _CROSS, np.minimum, 1)


def sup_inf(u) -> np.ndarray:
    """Max over the four line erosions (removes thin protrusions)."""
    return _sup_inf(_check_level_set(u))


def inf_sup(u) -> np.ndarray:
    """Min over the four line dilations (fills thin intrusions)."""
    return _inf_sup(_check_level_set(u))


def _sup_inf(u: np.ndarray) -> np.ndarray:
    acc = None
    for line in _LINES:
        er = _reduce_neighbors(u, line, np.minimum, 1)
        acc = er if acc is None else np.maximum(acc, er, out=acc)
    return acc


def _inf_sup(u: np.ndarray) -> np.ndarray:
    acc = None
    for line in _LINES:
        di = _reduce_neighbors(u, line, np.maximum, 0)
        acc = di if acc is None else np.minimum(acc, di, out=acc)
    return acc


def _curvature_pass(u: np.ndarray, parity: int) -> np.ndarray:
    if parity % 2 == 0:
        return _sup_inf(_inf_sup(u))
    return _inf_sup(_sup_inf(u))


def curvature_smooth(u, passes: int, phase: int = 0) -> np.ndarray:
    """Mean-curvature-like smoothing of a binary grid.

    Pass ``k`` applies SIoIS when ``phase + k`` is even and ISoSI when odd;
    alternating the composition order cancels the directional bias either
    one has alone. Pass ``phase`` to continue an alternation across calls.
    """
    if passes < 0:
        raise ParameterError("passes must be >= 0")
    out = _check_level_set(u).copy()
    for k in range(passes):
        out = _curvature_pass(out, phase + k)
    return out


def _boundary_mask(u: np.ndarray) -> np.ndarray:
    """Pixels whose 3x3 neighborhood (in-bounds part) holds both 0 and 1."""
    nmin = _reduce_neighbors(u, _SQUARE, np.minimum, 1)
    nmax = _reduce_neighbors(u, _SQUARE, np.maximum, 0)
    return nmin != nmax


def disk_level_set(shape: tuple[int, int], center: tuple[float, float], radius: float) -> np.ndarray:
    """Binary disk over an (ny, nx) grid: pixels within ``radius`` of
    ``center`` given as (x, y)."""
    ny, nx = shape
    cx, cy = center
    yy, xx = np.ogrid[:ny, :nx]
    return ((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius).astype(np.uint8)


@dataclass
class AcweParams:
    """Knobs for region-mean-driven evolution."""

    iterations: int = 50
    smoothing: int = 1
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.smoothing < 0:
            raise ParameterError("smoothing must be >= 0")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ParameterError("lambda1 and lambda2 must be positive")


@dataclass
class GacParams:
    """Knobs for edge-driven evolution.

    ``balloon`` is the inflation direction (-1, 0, +1); ``threshold`` gates
    where the balloon may act (strictly g > threshold).
    """

    iterations: int = 60
    smoothing: int = 1
    balloon: int = 1
    threshold: float = 0.3

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.smoothing < 0:
            raise ParameterError("smoothing must be >= 0")
        if self.balloon not in (-1, 0, 1):
            raise ParameterError("balloon must be -1, 0 or +1")
        if not 0.0 <= self.threshold < 1.0:
            raise ParameterError("threshold must lie in [0, 1)")


@dataclass
class EvolutionResult:
    """Final level set, plus whether evolution halted on a degenerate
    (empty or full) state; ``iterations`` counts completed iterations."""

    u: np.ndarray
    degenerate: bool
    iterations: int


def morph_acwe(image: np.ndarray, init, params: AcweParams | None = None) -> EvolutionResult:
    """Region-driven contour evolution (active contours without edges).

    Works when inside and outside of the target differ in mean intensity;
    no edge preprocessing is needed. Each iteration:

    1. compute the mean intensity c1 inside (u=1) and c2 outside (u=0);
    2. reassign every interface pixel (3x3 neighborhood holds both values):
       inside where lambda1*(I-c1)^2 < lambda2*(I-c2)^2, outside where the
       inequality is strictly reversed; equality leaves the pixel as is;
    3. smooth the region ``smoothing`` times.

    If an iteration would leave the region empty or full, evolution stops
    and the last valid state is returned with ``degenerate=True``.
    """
    params = params if params is not None else AcweParams()
    img = np.asarray(image, dtype=np.float64)
    u = _check_level_set(init).copy()
    if img.shape != u.shape:
        raise ParameterError(f"image shape {img.shape} != level set shape {u.shape}")
    total = u.size
    filled = int(u.sum())
    if filled == 0 or filled == total:
        raise ParameterError("initial level set must be neither empty nor full")

    phase = 0
    for it in range(params.iterations):
        inside = u == 1
        c1 = img[inside].mean()
        c2 = img[~inside].mean()
        f_in = params.lambda1 * (img - c1) ** 2
        f_out = params.lambda2 * (img - c2) ** 2
        boundary = _boundary_mask(u)
        nu = u.copy()
        nu[boundary & (f_in < f_out)] = 1
        nu[boundary & (f_in > f_out)] = 0
        for _ in range(params.smoothing):
            nu = _curvature_pass(nu, phase)
            phase += 1
        filled = int(nu.sum())
        if filled == 0 or filled == total:
            return EvolutionResult(u, True, it)
        u = nu
    return EvolutionResult(u, False, params.iterations)


def morph_gac(g, init, params: GacParams | None = None) -> EvolutionResult:
    """Edge-driven contour evolution (geodesic active contours).

    ``g`` is an EdgeIndicator (or a raw grid in (0, 1]) that gates all
    motion; good results need it to dip sharply at the target contour.
    Each iteration:

    1. balloon: dilate (balloon=+1) or erode (-1) the region, committing
       the change only where g > threshold;
    2. attraction: flip pixels toward the edge where the inner product
       grad(u).grad(g) is strictly positive (set) or negative (clear);
       gradients are central differences, one-sided at borders;
    3. smoothing as in morph_acwe.

    Degenerate (empty/full) states stop evolution early, as in morph_acwe.
    """
    params = params if params is not None else GacParams()
    gv = g.values if isinstance(g, EdgeIndicator) else np.asarray(g, dtype=np.float64)
    if gv.ndim != 2 or not np.all(np.isfinite(gv)) or gv.min() <= 0 or gv.max() > 1:
        raise ParameterError("edge indicator values must lie in (0, 1]")
    u = _check_level_set(init).copy()
    if gv.shape != u.shape:
        raise ParameterError(f"edge indicator shape {gv.shape} != level set shape {u.shape}")
    total = u.size
    if int(u.sum()) == 0:
        raise ParameterError("initial level set must be non-empty")

    dgy, dgx = np.gradient(gv)
    balloon_open = gv > params.threshold
    phase = 0
    for it in range(params.iterations):
        nu = u
        if params.balloon > 0:
            aux = _reduce_neighbors(nu, _CROSS, np.maximum, 0)
            nu = np.where(balloon_open, aux, nu)
        elif params.balloon < 0:
            aux = _reduce_neighbors(nu, _CROSS, np.minimum, 1)
            nu = np.where(balloon_open, aux, nu)
        duy, dux = np.gradient(nu.astype(np.float64))
        dot = dgy * duy + dgx * dux
        nu = nu.copy()
        nu[dot > 0] = 1
        nu[dot < 0] = 0
        for _ in range(params.smoothing):
            nu = _curvature_pass(nu, phase)
            phase += 1
        filled = int(nu.sum())
        if filled == 0 or filled == total:
            return EvolutionResult(u, True, it)
        u = nu
    return EvolutionResult(u, False, params.iterations)
