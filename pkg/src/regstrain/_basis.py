"""Uniform cubic B-spline basis helpers shared by images and transforms."""

import numpy as np


def cubic_weights(frac):
    """Weights of the four knots ``i-1, i, i+1, i+2`` for ``t = i + frac``.

    ``frac`` is an array in [0, 1); the returned array has a trailing axis of
    length 4 and sums to one along it.
    """
    u = np.asarray(frac, dtype=np.float64)
    u2 = u * u
    u3 = u2 * u
    omu = 1.0 - u
    return np.stack(
        [
            omu * omu * omu / 6.0,
            (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
            (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0,
        ],
        axis=-1,
    )


def cubic_weights_derivative(frac):
    """Derivative of :func:`cubic_weights` with respect to ``frac``."""
    u = np.asarray(frac, dtype=np.float64)
    u2 = u * u
    omu = 1.0 - u
    return np.stack(
        [
            -0.5 * omu * omu,
            1.5 * u2 - 2.0 * u,
            -1.5 * u2 + u + 0.5,
            0.5 * u2,
        ],
        axis=-1,
    )


def cubic_kernel(t):
    """Centered cubic B-spline evaluated at ``t`` (support ``|t| < 2``)."""
    a = np.abs(np.asarray(t, dtype=np.float64))
    return np.where(
        a < 1.0,
        2.0 / 3.0 - a * a + 0.5 * a ** 3,
        np.where(a < 2.0, (2.0 - a) ** 3 / 6.0, 0.0),
    )


def cubic_kernel_derivative(t):
    """Derivative of :func:`cubic_kernel`."""
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    s = np.sign(t)
    return np.where(
        a < 1.0,
        s * (-2.0 * a + 1.5 * a * a),
        np.where(a < 2.0, -s * 0.5 * (2.0 - a) ** 2, 0.0),
    )
