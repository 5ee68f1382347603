"""Green-Lagrange strain of dense displacement fields."""

from __future__ import annotations

import numpy as np

from .exceptions import ParameterError
from .fields import DisplacementField, StrainField


def green_lagrange_from_gradients(ux, uy, vx, vy):
    """``(Exx, Eyy, Exy)`` from the four displacement gradients."""
    exx = 0.5 * (2.0 * ux + ux * ux + vx * vx)
    eyy = 0.5 * (2.0 * vy + uy * uy + vy * vy)
    exy = 0.5 * (uy + vx + ux * uy + vx * vy)
    return exx, eyy, exy


def displacement_gradients(field: DisplacementField, pixel_spacing=(1.0, 1.0)):
    """Second-order finite differences of ``u`` and ``v``.

    Central differences inside, second-order one-sided differences on the
    outermost rows and columns. Invalid pixels are NaN before differencing so
    any stencil touching one yields NaN.
    """
    hx, hy = (float(h) for h in pixel_spacing)
    if not (hx > 0 and hy > 0):
        raise ParameterError(f"pixel spacing must be positive, got ({hx}, {hy})")
    height, width = field.shape
    if height < 3 or width < 3:
        raise ParameterError(f"field must be at least 3x3, got {width}x{height}")
    u = np.where(field.valid, field.u, np.nan)
    v = np.where(field.valid, field.v, np.nan)
    uy, ux = np.gradient(u, hy, hx, edge_order=2)
    vy, vx = np.gradient(v, hy, hx, edge_order=2)
    return ux, uy, vx, vy


def green_lagrange_strain(field: DisplacementField, pixel_spacing=(1.0, 1.0)) -> StrainField:
    """Pointwise Green-Lagrange strain of a displacement field.

    A pixel is valid only if every value its difference stencils used was
    valid.
    """
    ux, uy, vx, vy = displacement_gradients(field, pixel_spacing)
    exx, eyy, exy = green_lagrange_from_gradients(ux, uy, vx, vy)
    valid = field.valid & np.isfinite(exx) & np.isfinite(eyy) & np.isfinite(exy)
    zero = np.zeros(field.shape)
    return StrainField(
        np.where(valid, exx, zero), np.where(valid, eyy, zero), np.where(valid, exy, zero), valid
    )
