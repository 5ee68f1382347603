"""Speckle images and analytically deformed pairs with exact ground truth.

Ground truth is the forward material displacement: a point ``X`` of the first
frame is found at ``X + u(X)`` in the second, so ``I1(X + u(X)) = I0(X)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GenerationError, ParameterError
from .fields import DisplacementField
from .image import GrayImage, in_domain, sample

BACKGROUND = 0.5
BLOB_AMPLITUDE = 0.25


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form displacement field.

    Use the constructors :meth:`translation`, :meth:`affine`, :meth:`about`,
    and :meth:`sinusoid` rather than the raw initializer.
    """

    kind: str
    params: tuple

    @classmethod
    def translation(cls, tx, ty):
        return cls("translation", (float(tx), float(ty)))

    @classmethod
    def affine(cls, F, offset=(0.0, 0.0)):
        """``phi(X) = F @ X + offset``, so ``u(X) = (F - I) X + offset``."""
        F = np.asarray(F, dtype=np.float64).reshape(2, 2)
        return cls("affine", (tuple(F.ravel().tolist()), tuple(float(o) for o in offset)))

    @classmethod
    def about(cls, F, center, translation=(0.0, 0.0)):
        """Affine map fixing ``center`` (before ``translation``)."""
        F = np.asarray(F, dtype=np.float64).reshape(2, 2)
        c = np.asarray(center, dtype=np.float64)
        offset = c - F @ c + np.asarray(translation, dtype=np.float64)
        return cls.affine(F, offset)

    @classmethod
    def rotation(cls, degrees, center, translation=(0.0, 0.0)):
        th = math.radians(degrees)
        R = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
        return cls.about(R, center, translation)

    @classmethod
    def stretch(cls, lam_x, lam_y=1.0, center=(0.0, 0.0)):
        return cls.about([[lam_x, 0.0], [0.0, lam_y]], center)

    @classmethod
    def sinusoid(cls, amplitude, period, axis="x", phase=0.0):
        if axis not in ("x", "y"):
            raise ParameterError(f"axis must be 'x' or 'y', got {axis!r}")
        if not period > 0:
            raise ParameterError("period must be positive")
        return cls("sinusoid", (float(amplitude), float(period), axis, float(phase)))

    # -----------------------------------------------------------------

    def displacement(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "translation":
            tx, ty = self.params
            return np.full_like(x, tx), np.full_like(y, ty)
        if self.kind == "affine":
            (a, b, c, d), (ox, oy) = self.params
            return (a - 1.0) * x + b * y + ox, c * x + (d - 1.0) * y + oy
        amp, period, axis, phase = self.params
        if axis == "x":
            return amp * np.sin(2 * np.pi * x / period + phase), np.zeros_like(y)
        return np.zeros_like(x), amp * np.sin(2 * np.pi * y / period + phase)

    def gradient(self, x, y):
        """``(du/dx, du/dy, dv/dx, dv/dy)`` at points."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        zero = np.zeros(np.broadcast(x, y).shape)
        if self.kind == "translation":
            return zero, zero, zero, zero
        if self.kind == "affine":
            (a, b, c, d), _ = self.params
            return zero + a - 1.0, zero + b, zero + c, zero + d - 1.0
        amp, period, axis, phase = self.params
        k = 2 * np.pi / period
        if axis == "x":
            return amp * k * np.cos(k * x + phase) + zero, zero, zero, zero
        return zero, zero, zero, amp * k * np.cos(k * y + phase) + zero

    def green_lagrange(self, x, y):
        """Closed-form ``(Exx, Eyy, Exy)``."""
        ux, uy, vx, vy = self.gradient(x, y)
        return (
            ux + 0.5 * (ux * ux + vx * vx),
            vy + 0.5 * (uy * uy + vy * vy),
            0.5 * (uy + vx + ux * uy + vx * vy),
        )

    def min_jacobian(self, width, height) -> float:
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        ux, uy, vx, vy = self.gradient(xs, ys)
        return float(np.min((1 + ux) * (1 + vy) - uy * vx))

    def on_grid(self, shape) -> DisplacementField:
        height, width = shape
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        u, v = self.displacement(xs, ys)
        return DisplacementField(u, v)

    def inverse_points(self, x, y, tol=1e-9, max_iter=50):
        """Solve ``X + u(X) = (x, y)`` for ``X`` by fixed-point iteration."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        X, Y = x.copy(), y.copy()
        for _ in range(max_iter):
            u, v = self.displacement(X, Y)
            rx = X + u - x
            ry = Y + v - y
            if np.max(np.hypot(rx, ry), initial=0.0) < tol:
                return X, Y
            X -= rx
            Y -= ry
        raise GenerationError(
            f"fixed-point inversion did not converge in {max_iter} iterations"
        )


def generate_speckle(width: int, height: int, density: float = 3.0,
                     radius_range=(2.0, 4.0), seed=0) -> GrayImage:
    """Random Gaussian-blob speckle on a 0.5 background.

    ``density`` is blobs per 100 px^2. A blob of radius ``r`` is a Gaussian
    with standard deviation ``0.6 r`` and amplitude +-0.25 (random sign). Blobs
    are also scattered in a margin around the frame so the edges carry
    texture.
    """
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise ParameterError("image dimensions must be positive")
    if not density > 0:
        raise ParameterError(f"density must be > 0, got {density}")
    rmin, rmax = (float(r) for r in radius_range)
    if not (1.0 <= rmin <= rmax <= 8.0):
        raise ParameterError(f"radius range must lie within [1, 8], got {radius_range}")
    rng = np.random.default_rng(seed)
    margin = 2.0 * rmax
    area = (width + 2 * margin) * (height + 2 * margin)
    count = int(round(density * area / 100.0))
    cx = rng.uniform(-margin, width - 1 + margin, count)
    cy = rng.uniform(-margin, height - 1 + margin, count)
    sigma = 0.6 * rng.uniform(rmin, rmax, count)
    amp = BLOB_AMPLITUDE * rng.choice([-1.0, 1.0], count)
    img = np.full((height, width), BACKGROUND)
    for x0, y0, s, a in zip(cx, cy, sigma, amp):
        half = int(math.ceil(4.0 * s))
        c0, c1 = max(0, int(x0) - half), min(width, int(x0) + half + 2)
        r0, r1 = max(0, int(y0) - half), min(height, int(y0) + half + 2)
        if c0 >= c1 or r0 >= r1:
            continue
        gx = np.exp(-((np.arange(c0, c1) - x0) ** 2) / (2 * s * s))
        gy = np.exp(-((np.arange(r0, r1) - y0) ** 2) / (2 * s * s))
        img[r0:r1, c0:c1] += a * gy[:, None] * gx[None, :]
    return GrayImage(np.clip(img, 0.0, 1.0))


def warp_image(base: GrayImage, field: AnalyticField) -> GrayImage:
    """Deformed frame ``I1(x) = I0(psi(x))`` with ``psi`` the inverse motion.

    Pixels whose pre-image lies outside ``base`` get the background value and
    are excluded from the returned mask.
    """
    height, width = base.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    px, py = field.inverse_points(xs, ys)
    inside = in_domain(base, px, py)
    values = np.full(base.shape, BACKGROUND)
    values[inside] = sample(base, px[inside], py[inside])
    mask = inside if not inside.all() else None
    return GrayImage(np.clip(values, 0.0, 1.0), mask)


def add_noise(image: GrayImage, sigma: float, rng) -> GrayImage:
    if sigma == 0:
        return image
    noisy = image.intensities + rng.normal(0.0, sigma, image.shape)
    return GrayImage(np.clip(noisy, 0.0, 1.0), image.mask)


def generate_pair(base: GrayImage, field: AnalyticField, noise: float = 0.0, seed=0):
    """Reference frame, deformed frame and ground-truth displacement.

    Returns
    -------
    I0, I1 : GrayImage
    u_gt : DisplacementField
        The analytic field sampled on the pixel grid of ``I0``.
    """
    if noise < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {noise}")
    if field.min_jacobian(base.width, base.height) <= 0:
        raise GenerationError("field folds the domain (det F <= 0)")
    I1 = warp_image(base, field)
    rng = np.random.default_rng(seed)
    I0 = add_noise(base, noise, rng)
    I1 = add_noise(I1, noise, rng)
    return I0, I1, field.on_grid(base.shape)


def generate_sequence(base: GrayImage, fields, noise: float = 0.0, seed=0):
    """Frames ``[base, warp(base, f1), warp(base, f2), ...]``.

    Each field in ``fields`` is the cumulative motion from the first frame.

    Returns
    -------
    images : list of GrayImage
    truths : list of DisplacementField
        Cumulative ground truth for frames 1..N-1.
    """
    if noise < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    images = [add_noise(base, noise, rng)]
    truths = []
    for field in fields:
        if field.min_jacobian(base.width, base.height) <= 0:
            raise GenerationError("field folds the domain (det F <= 0)")
        images.append(add_noise(warp_image(base, field), noise, rng))
        truths.append(field.on_grid(base.shape))
    return images, truths
