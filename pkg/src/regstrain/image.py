"""Grayscale images: PGM I/O, sub-pixel interpolation and pyramids.

Coordinates follow the pixel-center convention: pixel ``(row, col)`` sits at
``x = col``, ``y = row`` with ``x`` rightward and ``y`` downward. An image of
width ``W`` can be interpolated anywhere in the padded domain
``[-0.5, W - 0.5] x [-0.5, H - 0.5]``; values near the border use mirror
reflection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from ._basis import cubic_weights, cubic_weights_derivative
from .exceptions import FormatError, LevelTooDeepError, OutOfBoundsError, ParameterError

SCHEMES = ("bilinear", "cubic_bspline")
MIN_PYRAMID_SIZE = 8
_PAD = 3


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2-D intensity grid normalized to [0, 1].

    Parameters
    ----------
    intensities : array_like, shape (height, width)
        Finite values in [0, 1].
    mask : array_like of bool, optional
        Region of interest with the same shape; ``None`` means the whole image.
    """

    intensities: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.intensities, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError(f"image must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("image intensities must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ParameterError("image intensities must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "intensities", data)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != data.shape:
                raise ParameterError(
                    f"mask shape {mask.shape} does not match image shape {data.shape}"
                )
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensities.shape

    @property
    def roi(self) -> np.ndarray:
        """Boolean ROI, all-true when no mask is attached."""
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    def with_mask(self, mask) -> "GrayImage":
        return GrayImage(self.intensities, mask)

    @cached_property
    def _cubic_coefficients(self) -> np.ndarray:
        coef = ndimage.spline_filter(self.intensities, order=3, mode="mirror")
        return np.pad(coef, _PAD, mode="reflect")

    @cached_property
    def _trusted(self) -> np.ndarray | None:
        """ROI eroded by one pixel, or None when the whole image is usable."""
        if self.mask is None or self.mask.all():
            return None
        return ndimage.binary_erosion(self.mask, np.ones((3, 3), bool), border_value=1)

    @cached_property
    def _padded_pixels(self) -> np.ndarray:
        return np.pad(self.intensities, _PAD, mode="reflect")


# ---------------------------------------------------------------------------
# PGM I/O
# ---------------------------------------------------------------------------

def _next_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, start, end) skipping whitespace and ``#`` comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("truncated header", pos)
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], start, pos


def _parse_int(token: bytes, offset: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"malformed {what} {token!r}", offset) from None


def parse_pgm(buf: bytes) -> np.ndarray:
    """Decode PGM bytes (P2 or P5) into raw integer values and maxval.

    Returns
    -------
    values : ndarray of int, shape (height, width)
    maxval : int
    """
    if len(buf) < 2:
        raise FormatError("truncated header", 0)
    magic = buf[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported magic {magic!r}", 0)
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        tok, start, pos = _next_token(buf, pos)
        fields.append((_parse_int(tok, start, what), start))
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise FormatError(f"invalid width {width}", w_off)
    if height < 1:
        raise FormatError(f"invalid height {height}", h_off)
    if not 1 <= maxval <= 65535:
        raise FormatError(f"maxval {maxval} outside 1..65535", m_off)
    count = width * height

    if magic == b"P5":
        if pos >= len(buf) or not buf[pos:pos + 1].isspace():
            raise FormatError("missing whitespace after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        nbytes = count * dtype.itemsize
        if len(buf) - pos < nbytes:
            raise FormatError(
                f"truncated payload: need {nbytes} bytes, found {len(buf) - pos}", len(buf)
            )
        values = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        values = np.empty(count, dtype=np.int64)
        for i in range(count):
            try:
                tok, start, pos = _next_token(buf, pos)
            except FormatError:
                raise FormatError(
                    f"truncated payload: expected {count} samples, found {i}", len(buf)
                ) from None
            values[i] = _parse_int(tok, start, "sample")
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise FormatError(f"sample exceeds maxval {maxval}", pos)
    return values.reshape(height, width), maxval


def load_pgm(path) -> GrayImage:
    """Read a P2/P5 PGM file; intensities are raw values divided by maxval."""
    with open(path, "rb") as fh:
        buf = fh.read()
    values, maxval = parse_pgm(buf)
    return GrayImage(values / float(maxval))


def load_mask(path) -> np.ndarray:
    """Read a PGM mask file; nonzero pixels are inside the ROI."""
    with open(path, "rb") as fh:
        values, _ = parse_pgm(fh.read())
    return values != 0


def encode_pgm(values: np.ndarray, maxval: int = 255, binary: bool = True) -> bytes:
    values = np.asarray(values)
    height, width = values.shape
    header = f"{'P5' if binary else 'P2'}\n{width} {height}\n{maxval}\n".encode("ascii")
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + values.astype(dtype).tobytes()
    rows = "\n".join(" ".join(str(int(v)) for v in row) for row in values)
    return header + rows.encode("ascii") + b"\n"


def save_pgm(image, path, maxval: int = 65535, binary: bool = True) -> None:
    """Write an image (``GrayImage`` or array in [0, 1]) as PGM."""
    if not 1 <= maxval <= 65535:
        raise ParameterError(f"maxval {maxval} outside 1..65535")
    data = image.intensities if isinstance(image, GrayImage) else np.asarray(image, float)
    raw = np.rint(np.clip(data, 0.0, 1.0) * maxval).astype(np.int64)
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "wb") as fh:
        fh.write(encode_pgm(raw, maxval, binary))
    os.replace(tmp, path)


def save_mask(mask, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(np.asarray(mask, dtype=bool).astype(np.int64), 1, True))


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

def in_domain(image: GrayImage, x, y) -> np.ndarray:
    """Mask of points inside the padded interpolation domain."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (
        (x >= -0.5) & (x <= image.width - 0.5) & (y >= -0.5) & (y <= image.height - 0.5)
        & np.isfinite(x) & np.isfinite(y)
    )


def in_roi(image: GrayImage, x, y) -> np.ndarray:
    """Points inside the padded domain whose interpolation avoids masked pixels.

    When a mask is attached, the nearest pixel must lie in the ROI eroded by
    one pixel, so the interpolation footprint never leans on masked-out values.
    """
    inside = in_domain(image, x, y)
    trusted = image._trusted
    if trusted is None:
        return inside
    ix = np.clip(np.rint(np.where(inside, x, 0.0)), 0, image.width - 1).astype(np.intp)
    iy = np.clip(np.rint(np.where(inside, y, 0.0)), 0, image.height - 1).astype(np.intp)
    return inside & trusted[iy, ix]


def _check_domain(image, x, y):
    if not np.all(in_domain(image, x, y)):
        raise OutOfBoundsError(
            f"point outside padded domain of {image.width}x{image.height} image"
        )


def _cubic_gather(image, x, y, derivative):
    coef = image._cubic_coefficients
    ix = np.floor(x)
    iy = np.floor(y)
    fx = x - ix
    fy = y - iy
    cols = ix.astype(np.intp)[..., None] + (np.arange(-1, 3) + _PAD)
    rows = iy.astype(np.intp)[..., None] + (np.arange(-1, 3) + _PAD)
    patch = coef[rows[..., :, None], cols[..., None, :]]
    wx = cubic_weights(fx)
    wy = cubic_weights(fy)
    value = np.einsum("...i,...ij,...j->...", wy, patch, wx)
    if not derivative:
        return value, None, None
    dwx = cubic_weights_derivative(fx)
    dwy = cubic_weights_derivative(fy)
    gx = np.einsum("...i,...ij,...j->...", wy, patch, dwx)
    gy = np.einsum("...i,...ij,...j->...", dwy, patch, wx)
    return value, gx, gy


def _bilinear(image, x, y):
    pix = image._padded_pixels
    ix = np.floor(x)
    iy = np.floor(y)
    fx = x - ix
    fy = y - iy
    c = ix.astype(np.intp) + _PAD
    r = iy.astype(np.intp) + _PAD
    top = pix[r, c] * (1.0 - fx) + pix[r, c + 1] * fx
    bottom = pix[r + 1, c] * (1.0 - fx) + pix[r + 1, c + 1] * fx
    return top * (1.0 - fy) + bottom * fy


def sample(image: GrayImage, x, y, scheme: str = "cubic_bspline", check: bool = True):
    """Vectorized interpolation at arrays of points ``(x, y)``."""
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown interpolation scheme {scheme!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if check:
        _check_domain(image, x, y)
    if scheme == "bilinear":
        return _bilinear(image, x, y)
    value = _cubic_gather(image, x, y, derivative=False)[0]
    # at pixel centers return the stored sample itself, not its spline
    # reconstruction (equal up to prefilter rounding)
    node = (x == np.floor(x)) & (y == np.floor(y))
    if np.any(node):
        pix = image._padded_pixels
        value = np.array(value, copy=True)
        value[node] = pix[y[node].astype(np.intp) + _PAD, x[node].astype(np.intp) + _PAD]
    return value


def sample_with_gradient(image: GrayImage, x, y, check: bool = True):
    """Cubic B-spline value and spatial gradient at arrays of points.

    Returns
    -------
    value, dI_dx, dI_dy : ndarray
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if check:
        _check_domain(image, x, y)
    return _cubic_gather(image, x, y, derivative=True)


def interpolate(image: GrayImage, p, scheme: str = "cubic_bspline") -> float:
    """Intensity at the continuous point ``p = (x, y)``.

    Both schemes reproduce the stored pixel values at integer coordinates;
    ``cubic_bspline`` interpolates prefiltered spline coefficients.
    """
    x, y = p
    return float(sample(image, np.array([x]), np.array([y]), scheme)[0])


def intensity_gradient(image: GrayImage, p) -> tuple[float, float]:
    """``(dI/dx, dI/dy)`` of the cubic B-spline interpolant at ``p``."""
    x, y = p
    _, gx, gy = sample_with_gradient(image, np.array([x]), np.array([y]))
    return float(gx[0]), float(gy[0])


# ---------------------------------------------------------------------------
# Pyramids
# ---------------------------------------------------------------------------

def pyramid_level(image: GrayImage, level: int) -> GrayImage:
    """Gaussian-smoothed image subsampled by ``2**level``.

    Level 0 returns ``image`` itself. Level ``k`` smooths with
    ``sigma = 2**(k-1)`` pixels and keeps every ``2**k``-th pixel, so coarse
    pixel ``i`` sits on fine pixel ``i * 2**k``. A coarse mask pixel is inside
    the ROI only when every fine pixel of its footprint is.
    """
    level = int(level)
    if level < 0:
        raise ParameterError(f"pyramid level must be >= 0, got {level}")
    if level == 0:
        return image
    step = 2 ** level
    height = -(-image.height // step)
    width = -(-image.width // step)
    if height < MIN_PYRAMID_SIZE or width < MIN_PYRAMID_SIZE:
        raise LevelTooDeepError(
            f"level {level} of a {image.width}x{image.height} image is {width}x{height}, "
            f"below {MIN_PYRAMID_SIZE}x{MIN_PYRAMID_SIZE}"
        )
    smooth = ndimage.gaussian_filter(image.intensities, sigma=2.0 ** (level - 1), mode="mirror")
    coarse = np.clip(smooth[::step, ::step], 0.0, 1.0)
    mask = None
    if image.mask is not None:
        half = step // 2
        padded = np.pad(
            image.mask,
            ((half, height * step - image.height - half + step),
             (half, width * step - image.width - half + step)),
            constant_values=True,
        )[: height * step, : width * step]
        mask = padded.reshape(height, step, width, step).all(axis=(1, 3))
    return GrayImage(coarse, mask)
