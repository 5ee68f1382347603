"""Cubic B-spline free-form deformation on a regular control-point grid.

The transform maps ``x`` to ``x + sum_k c_k * w_k(x)`` where ``w_k`` are the
tensor-product cubic B-spline weights of the 4x4 control points supporting
``x``. Coefficients are displacements in pixels, so zero coefficients give the
identity.

The flat parameter vector used by metrics and optimizers is
``[cx.ravel(), cy.ravel()]`` with control points in row-major ``(iy, ix)``
order, i.e. parameter ``j`` of control point ``iy * nx + ix``.
"""

from __future__ import annotations

import math

import numpy as np

from ._basis import cubic_weights, cubic_weights_derivative
from .exceptions import FormatError, OutOfBoundsError, ParameterError

_OFFSETS = np.arange(-1, 3)


class BSplineTransform:
    """Control-point grid plus coefficients.

    Parameters
    ----------
    grid_origin : (float, float)
        Position of control point ``(0, 0)`` in pixels.
    grid_spacing : (float, float)
        ``(dx, dy)`` between control points, both > 0.
    grid_dims : (int, int)
        ``(nx, ny)`` control points, both >= 4.
    coefficients : ndarray, shape (2, ny, nx), optional
        Displacement coefficients; zeros when omitted.
    """

    def __init__(self, grid_origin, grid_spacing, grid_dims, coefficients=None):
        ox, oy = (float(v) for v in grid_origin)
        dx, dy = (float(v) for v in grid_spacing)
        nx, ny = (int(v) for v in grid_dims)
        if not (dx > 0 and dy > 0 and math.isfinite(dx) and math.isfinite(dy)):
            raise ParameterError(f"grid spacing must be positive, got ({dx}, {dy})")
        if nx < 4 or ny < 4:
            raise ParameterError(f"grid needs at least 4x4 control points, got {nx}x{ny}")
        self.grid_origin = (ox, oy)
        self.grid_spacing = (dx, dy)
        self.grid_dims = (nx, ny)
        if coefficients is None:
            coefficients = np.zeros((2, ny, nx))
        coefficients = np.array(coefficients, dtype=np.float64).reshape(2, ny, nx)
        if not np.all(np.isfinite(coefficients)):
            raise ParameterError("coefficients must be finite")
        self.coefficients = coefficients

    # -- parameters ---------------------------------------------------------

    @property
    def n_parameters(self) -> int:
        nx, ny = self.grid_dims
        return 2 * nx * ny

    def get_parameters(self) -> np.ndarray:
        return self.coefficients.ravel().copy()

    def with_parameters(self, params) -> "BSplineTransform":
        return BSplineTransform(self.grid_origin, self.grid_spacing, self.grid_dims, params)

    def copy(self) -> "BSplineTransform":
        return self.with_parameters(self.coefficients)

    def control_point_positions(self):
        """Arrays ``(X, Y)`` of shape (ny, nx) with control point locations."""
        nx, ny = self.grid_dims
        xs = self.grid_origin[0] + self.grid_spacing[0] * np.arange(nx)
        ys = self.grid_origin[1] + self.grid_spacing[1] * np.arange(ny)
        return np.meshgrid(xs, ys)

    # -- evaluation ---------------------------------------------------------

    def _locate(self, x, y):
        tx = (np.asarray(x, dtype=np.float64) - self.grid_origin[0]) / self.grid_spacing[0]
        ty = (np.asarray(y, dtype=np.float64) - self.grid_origin[1]) / self.grid_spacing[1]
        with np.errstate(invalid="ignore"):
            ix = np.floor(tx)
            iy = np.floor(ty)
        nx, ny = self.grid_dims
        inside = (ix >= 1) & (ix <= nx - 3) & (iy >= 1) & (iy <= ny - 3)
        ix = np.where(inside, ix, 1).astype(np.intp)
        iy = np.where(inside, iy, 1).astype(np.intp)
        fx = np.where(inside, tx - ix, 0.0)
        fy = np.where(inside, ty - iy, 0.0)
        return ix, iy, fx, fy, inside

    def covers(self, x, y) -> np.ndarray:
        """Mask of points whose full 4x4 support lies inside the grid."""
        return self._locate(x, y)[4]

    def displacement(self, x, y, check: bool = True):
        """Vectorized displacement ``(u, v)`` and coverage mask at points.

        Uncovered points get zero displacement and ``False`` in the mask; with
        ``check=True`` they raise instead.
        """
        ix, iy, fx, fy, inside = self._locate(x, y)
        if check and not np.all(inside):
            raise OutOfBoundsError("point outside the transform's covered domain")
        rows = iy[..., None] + _OFFSETS
        cols = ix[..., None] + _OFFSETS
        wx = cubic_weights(fx)
        wy = cubic_weights(fy)
        cx = self.coefficients[0][rows[..., :, None], cols[..., None, :]]
        cy = self.coefficients[1][rows[..., :, None], cols[..., None, :]]
        u = np.einsum("...i,...ij,...j->...", wy, cx, wx)
        v = np.einsum("...i,...ij,...j->...", wy, cy, wx)
        return u, v, inside

    def spatial_jacobian(self, x, y):
        """Displacement gradient ``(du/dx, du/dy, dv/dx, dv/dy)`` at points."""
        ix, iy, fx, fy, inside = self._locate(x, y)
        if not np.all(inside):
            raise OutOfBoundsError("point outside the transform's covered domain")
        rows = iy[..., None] + _OFFSETS
        cols = ix[..., None] + _OFFSETS
        wx, wy = cubic_weights(fx), cubic_weights(fy)
        dwx = cubic_weights_derivative(fx) / self.grid_spacing[0]
        dwy = cubic_weights_derivative(fy) / self.grid_spacing[1]
        out = []
        for comp in self.coefficients:
            patch = comp[rows[..., :, None], cols[..., None, :]]
            out.append(np.einsum("...i,...ij,...j->...", wy, patch, dwx))
            out.append(np.einsum("...i,...ij,...j->...", dwy, patch, wx))
        return tuple(out)

    def transform_points(self, x, y, check: bool = True):
        u, v, inside = self.displacement(x, y, check=check)
        return np.asarray(x) + u, np.asarray(y) + v, inside

    def support(self, x, y):
        """Flat control-point indices and weights of the 16 supporting nodes.

        Returns
        -------
        index : ndarray of intp, shape (..., 16)
        weight : ndarray, shape (..., 16)
        inside : ndarray of bool
        """
        ix, iy, fx, fy, inside = self._locate(x, y)
        nx = self.grid_dims[0]
        rows = iy[..., None] + _OFFSETS
        cols = ix[..., None] + _OFFSETS
        index = (rows[..., :, None] * nx + cols[..., None, :]).reshape(*ix.shape, 16)
        weight = (cubic_weights(fy)[..., :, None] * cubic_weights(fx)[..., None, :])
        return index, weight.reshape(*ix.shape, 16), inside

    def __repr__(self):
        return (
            f"BSplineTransform(origin={self.grid_origin}, spacing={self.grid_spacing}, "
            f"dims={self.grid_dims})"
        )


def new_transform(domain, spacing) -> BSplineTransform:
    """Identity transform whose grid covers a ``(width, height)`` image.

    The covered domain is the padded pixel domain ``[-0.5, W - 0.5]``. The grid
    holds ``ceil(L / spacing) + 3`` nodes (the minimum for cubic support) plus
    one spare node on each side, centered on the domain.
    """
    width, height = (int(v) for v in domain)
    dx, dy = (float(v) for v in spacing)
    if not (dx > 0 and dy > 0):
        raise ParameterError(f"control-point spacing must be positive, got ({dx}, {dy})")
    if width < 8 or height < 8:
        raise ParameterError(f"domain must be at least 8x8, got {width}x{height}")
    origin = []
    dims = []
    for length, step in ((width, dx), (height, dy)):
        n = math.ceil(length / step) + 5
        center = (length - 1) / 2.0
        origin.append(center - (n - 1) * step / 2.0)
        dims.append(n)
    return BSplineTransform(origin, (dx, dy), dims)


def transform_point(T: BSplineTransform, p) -> tuple[float, float]:
    """Map one continuous point through ``T``."""
    x, y = p
    tx, ty, _ = T.transform_points(np.array([x], float), np.array([y], float))
    return float(tx[0]), float(ty[0])


def parameter_jacobian(T: BSplineTransform, p) -> dict[int, float]:
    """Sparse ``{control point index: weight}`` map of the 16 nodes at ``p``.

    Each weight is the derivative of both displacement components at ``p``
    with respect to the matching component of that control point.
    """
    x, y = p
    index, weight, inside = T.support(np.array([x], float), np.array([y], float))
    if not inside[0]:
        raise OutOfBoundsError(f"point {p} outside the transform's covered domain")
    return {int(k): float(w) for k, w in zip(index[0], weight[0])}


def refit_transform(source: BSplineTransform, target: BSplineTransform, shape,
                    scale: float = 1.0) -> BSplineTransform:
    """Least-squares fit of ``target``'s grid to ``scale * source`` displacement.

    ``source`` is evaluated at the pixel centers of a ``shape = (height,
    width)`` image expressed in its own coordinates as ``x / scale``. Used to
    carry a coarse pyramid result to the next finer level.
    """
    height, width = shape
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs / scale, ys / scale)
    u, v, _ = source.displacement(gx, gy, check=False)
    bx = _basis_matrix(xs, target.grid_origin[0], target.grid_spacing[0], target.grid_dims[0])
    by = _basis_matrix(ys, target.grid_origin[1], target.grid_spacing[1], target.grid_dims[1])
    px = np.linalg.pinv(bx)
    py = np.linalg.pinv(by)
    coef = np.stack([py @ (scale * u) @ px.T, py @ (scale * v) @ px.T])
    return target.with_parameters(coef)


def support_coverage(T: BSplineTransform, roi: np.ndarray) -> np.ndarray:
    """Fraction of each control point's basis mass that falls on ``roi`` pixels.

    Interior nodes of a grid lying over the ROI get ~1; nodes hanging over
    the image border get less. Returns an array of shape ``(ny, nx)``.
    """
    height, width = roi.shape
    bx = _basis_matrix(np.arange(width, dtype=np.float64), T.grid_origin[0],
                       T.grid_spacing[0], T.grid_dims[0])
    by = _basis_matrix(np.arange(height, dtype=np.float64), T.grid_origin[1],
                       T.grid_spacing[1], T.grid_dims[1])
    mass = by.T @ roi.astype(np.float64) @ bx
    return mass / (T.grid_spacing[0] * T.grid_spacing[1])


def _basis_matrix(coords, origin, spacing, n):
    t = (coords - origin) / spacing
    i = np.floor(t).astype(np.intp)
    w = cubic_weights(t - i)
    mat = np.zeros((coords.size, n))
    for k in range(4):
        mat[np.arange(coords.size), i - 1 + k] = w[:, k]
    return mat


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_HEADER = "# regstrain bspline transform v1"


def dumps_transform(T: BSplineTransform) -> str:
    """Plain-text form: header lines then one ``cx cy`` row per control point."""
    lines = [
        _HEADER,
        "origin %r %r" % T.grid_origin,
        "spacing %r %r" % T.grid_spacing,
        "dims %d %d" % T.grid_dims,
    ]
    cx = T.coefficients[0].ravel()
    cy = T.coefficients[1].ravel()
    lines.extend(f"{a!r} {b!r}" for a, b in zip(cx.tolist(), cy.tolist()))
    return "\n".join(lines) + "\n"


def loads_transform(text: str) -> BSplineTransform:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _HEADER:
        raise FormatError("missing transform header", 0)
    try:
        header = {}
        for ln in lines[1:4]:
            key, a, b = ln.split()
            header[key] = (a, b)
        origin = tuple(float(v) for v in header["origin"])
        spacing = tuple(float(v) for v in header["spacing"])
        nx, ny = (int(v) for v in header["dims"])
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[4:]])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed transform file: {exc}") from None
    if rows.shape != (nx * ny, 2):
        raise FormatError(f"expected {nx * ny} coefficient rows, found {len(lines) - 4}")
    coef = np.stack([rows[:, 0].reshape(ny, nx), rows[:, 1].reshape(ny, nx)])
    return BSplineTransform(origin, spacing, (nx, ny), coef)


def save_transform(T: BSplineTransform, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_transform(T))


def load_transform(path) -> BSplineTransform:
    with open(path) as fh:
        return loads_transform(fh.read())
