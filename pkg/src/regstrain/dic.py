"""Subset-based local DIC used as an independent displacement reference.

Integer search uses OpenCV's normalized cross-correlation (``TM_CCOEFF_NORMED``,
which is ZNCC). The 3x3 neighbourhood of the peak is then re-evaluated in
float64 and a quadratic surface fitted to it for the sub-pixel offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy.spatial import cKDTree

from .exceptions import EmptyResultError, ParameterError
from .fields import DisplacementField, StrainField
from .image import GrayImage
from .strain import green_lagrange_from_gradients

ZNCC_CUTOFF = 0.5

# design matrix of c(dx, dy) = a + b dx + c dy + d dx^2 + e dx dy + f dy^2
_DY, _DX = np.mgrid[-1:2, -1:2]
_QUAD = np.column_stack([np.ones(9), _DX.ravel(), _DY.ravel(), _DX.ravel() ** 2,
                         (_DX * _DY).ravel(), _DY.ravel() ** 2])
_QUAD_PINV = np.linalg.pinv(_QUAD)


@dataclass(frozen=True)
class DicParams:
    """Subset radius, seed step, integer search radius and strain window radius (px)."""

    subset_radius: int = 10
    step: int = 4
    search_radius: int = 20
    strain_window: float = 5.0

    def __post_init__(self):
        if int(self.subset_radius) != self.subset_radius or self.subset_radius < 5:
            raise ParameterError(f"subset_radius: must be an integer >= 5, got {self.subset_radius}")
        if int(self.step) != self.step or self.step < 1:
            raise ParameterError(f"step: must be an integer >= 1, got {self.step}")
        if int(self.search_radius) != self.search_radius or self.search_radius < 1:
            raise ParameterError(f"search_radius: must be an integer >= 1, got {self.search_radius}")
        if not self.strain_window >= 2:
            raise ParameterError(f"strain_window: must be >= 2, got {self.strain_window}")


def zncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-normalized cross-correlation of two equally shaped patches."""
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / denom) if denom > 0 else 0.0


def seed_grid(shape, params: DicParams, roi=None):
    """Seed centres whose whole subset lies inside the image and the ROI."""
    height, width = shape
    r = params.subset_radius
    xs = np.arange(r, width - r, params.step)
    ys = np.arange(r, height - r, params.step)
    if roi is None:
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        return gx.ravel(), gy.ravel()
    # a subset is usable if its window is entirely inside the ROI
    integral = np.pad(np.cumsum(np.cumsum(~roi, axis=0), axis=1), ((1, 0), (1, 0)))
    keep_x, keep_y = [], []
    for y in ys:
        for x in xs:
            bad = (integral[y + r + 1, x + r + 1] - integral[y - r, x + r + 1]
                   - integral[y + r + 1, x - r] + integral[y - r, x - r])
            if bad == 0:
                keep_x.append(x)
                keep_y.append(y)
    return np.asarray(keep_x, dtype=int), np.asarray(keep_y, dtype=int)


def _subpixel(ref_patch, deformed, cx, cy, r):
    """Quadratic-surface peak offset around integer centre ``(cx, cy)`` in ``deformed``."""
    c = np.empty((3, 3))
    for j in range(3):
        for i in range(3):
            y0, x0 = cy + j - 1 - r, cx + i - 1 - r
            c[j, i] = zncc(ref_patch, deformed[y0:y0 + 2 * r + 1, x0:x0 + 2 * r + 1])
    peak = c[1, 1]
    if peak >= 1.0 - 1e-12:
        # a perfect match is the global maximum of ZNCC; nothing to refine
        return 0.0, 0.0, peak
    _, b, cc, d, e, f = _QUAD_PINV @ c.ravel()
    hessian = np.array([[2 * d, e], [e, 2 * f]])
    if np.linalg.det(hessian) <= 0 or hessian[0, 0] >= 0:
        return 0.0, 0.0, peak
    dx, dy = np.linalg.solve(hessian, [-b, -cc])
    if abs(dx) > 1.0 or abs(dy) > 1.0:
        return 0.0, 0.0, peak
    return float(dx), float(dy), peak


def dic_displacement(ref: GrayImage, deformed: GrayImage, params: DicParams | None = None,
                     return_correlation: bool = False):
    """Displacement of ``ref`` subsets found in ``deformed``, at seed pixels only.

    Seeds whose full search window does not fit inside the image, whose best
    ZNCC is below 0.5, whose peak sits on the edge of the search window, or
    whose match touches a masked pixel of ``deformed`` are invalid. Every
    non-seed pixel is invalid.

    Raises
    ------
    EmptyResultError
        If no seed produced a valid match.
    """
    params = params or DicParams()
    if ref.shape != deformed.shape:
        raise ParameterError(f"image sizes differ: {ref.shape} vs {deformed.shape}")
    height, width = ref.shape
    r, s = params.subset_radius, params.search_radius
    f = ref.intensities
    g = deformed.intensities
    f32 = f.astype(np.float32)
    g32 = g.astype(np.float32)
    bad_def = None if deformed.mask is None else ~deformed.mask
    sx, sy = seed_grid(ref.shape, params, ref.mask)
    if sx.size == 0:
        raise EmptyResultError("no subset fits inside the image and region of interest")
    u = np.zeros(ref.shape)
    v = np.zeros(ref.shape)
    valid = np.zeros(ref.shape, dtype=bool)
    corr = np.zeros(ref.shape)
    for x, y in zip(sx, sy):
        patch = f[y - r:y + r + 1, x - r:x + r + 1]
        if np.ptp(patch) == 0:
            continue
        x0, x1 = x - s - r, x + s + r + 1
        y0, y1 = y - s - r, y + s + r + 1
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            # a clipped search cannot rule out a better match beyond the border
            continue
        scores = cv2.matchTemplate(g32[y0:y1, x0:x1], f32[y - r:y + r + 1, x - r:x + r + 1],
                                   cv2.TM_CCOEFF_NORMED)
        j, i = np.unravel_index(int(np.argmax(scores)), scores.shape)
        if not (0 < j < scores.shape[0] - 1 and 0 < i < scores.shape[1] - 1):
            continue
        cx, cy = x0 + i + r, y0 + j + r
        if bad_def is not None and bad_def[cy - r - 1:cy + r + 2, cx - r - 1:cx + r + 2].any():
            continue
        dx, dy, peak = _subpixel(patch, g, cx, cy, r)
        if peak < ZNCC_CUTOFF:
            continue
        u[y, x] = cx - x + dx
        v[y, x] = cy - y + dy
        valid[y, x] = True
        corr[y, x] = peak
    if not valid.any():
        raise EmptyResultError("no DIC seed reached the correlation cut-off")
    out = DisplacementField(u, v, valid)
    return (out, corr) if return_correlation else out


def dic_strain(field: DisplacementField, window: float = 5.0) -> StrainField:
    """Green-Lagrange strain from least-squares planes over a strain window.

    At every valid pixel of ``field`` the valid pixels within Euclidean
    distance ``window`` (the pixel itself included) are fitted with planes in
    ``u`` and ``v``; their slopes are the displacement gradients. Fewer than
    three non-collinear points leave the pixel invalid.
    """
    if not window >= 2:
        raise ParameterError(f"strain window must be >= 2, got {window}")
    ys, xs = np.nonzero(field.valid)
    exx = np.zeros(field.shape)
    eyy = np.zeros(field.shape)
    exy = np.zeros(field.shape)
    valid = np.zeros(field.shape, dtype=bool)
    if xs.size == 0:
        return StrainField(exx, eyy, exy, valid)
    pts = np.column_stack([xs, ys]).astype(np.float64)
    uvals = field.u[ys, xs]
    vvals = field.v[ys, xs]
    tree = cKDTree(pts)
    for k, nbrs in enumerate(tree.query_ball_point(pts, window + 1e-9)):
        if len(nbrs) < 3:
            continue
        local = pts[nbrs] - pts[k]
        design = np.column_stack([np.ones(len(nbrs)), local])
        if np.linalg.matrix_rank(design) < 3:
            continue
        coef, *_ = np.linalg.lstsq(design, np.column_stack([uvals[nbrs], vvals[nbrs]]),
                                   rcond=None)
        ux, uy = coef[1, 0], coef[2, 0]
        vx, vy = coef[1, 1], coef[2, 1]
        e = green_lagrange_from_gradients(ux, uy, vx, vy)
        y, x = ys[k], xs[k]
        exx[y, x], eyy[y, x], exy[y, x] = e
        valid[y, x] = True
    return StrainField(exx, eyy, exy, valid)
