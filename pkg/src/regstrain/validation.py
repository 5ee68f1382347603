"""Agreement measures: mean absolute percentage error and windowed SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError, UndefinedMapeError
from .image import GrayImage, encode_pgm

MAPE_FLOOR = 1e-6
SSIM_WINDOW = 21
SSIM_SIGMA = 1.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mape(reference, test, mask=None, floor: float = MAPE_FLOOR, return_counts: bool = False):
    """Mean of ``|y - y_hat| / |y|`` over masked pixels, as a fraction.

    Pixels with ``|y| < floor`` or non-finite values are excluded from both
    the sum and the count.

    Returns
    -------
    float, or (float, used, excluded) when ``return_counts`` is set.
    """
    y = np.asarray(reference, dtype=np.float64)
    y_hat = np.asarray(test, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ParameterError(f"field shapes differ: {y.shape} vs {y_hat.shape}")
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != y.shape:
        raise ParameterError("mask shape does not match the fields")
    candidates = mask & np.isfinite(y) & np.isfinite(y_hat)
    keep = candidates & (np.abs(y) >= floor)
    used = int(np.count_nonzero(keep))
    excluded = int(np.count_nonzero(mask)) - used
    if used == 0:
        raise UndefinedMapeError(
            f"no pixel has |reference| >= {floor}; MAPE is undefined"
        )
    value = float(np.mean(np.abs(y[keep] - y_hat[keep]) / np.abs(y[keep])))
    if return_counts:
        return value, used, excluded
    return value


def mape_fields(reference, test, floor: float = MAPE_FLOOR) -> dict:
    """Per-component MAPE over jointly valid pixels of two fields.

    Works for displacement and strain fields alike. Components whose MAPE is
    undefined are reported as ``nan``.

    Returns
    -------
    dict
        ``{component: {"mape": float, "used": int, "excluded": int}}``
    """
    if reference.shape != test.shape:
        raise ParameterError(f"field shapes differ: {reference.shape} vs {test.shape}")
    joint = reference.valid & test.valid
    out = {}
    test_comps = test.components()
    for name, ref in reference.components().items():
        try:
            value, used, excluded = mape(ref, test_comps[name], joint, floor, return_counts=True)
        except UndefinedMapeError:
            value, used, excluded = float("nan"), 0, int(np.count_nonzero(joint))
        out[name] = {"mape": value, "used": used, "excluded": excluded}
    return out


@dataclass(eq=False)
class SsimReport:
    """Per-pixel SSIM (``nan`` outside the evaluated region) and its mean."""

    map: np.ndarray
    region: np.ndarray
    mean: float

    def to_pgm_bytes(self, maxval: int = 255) -> bytes:
        """Heat image: [-1, 1] mapped linearly to [0, maxval]; outside -> 0."""
        vals = np.where(self.region, self.map, -1.0)
        raw = np.rint((np.clip(vals, -1.0, 1.0) + 1.0) / 2.0 * maxval).astype(np.int64)
        return encode_pgm(raw, maxval)

    def to_csv(self, path) -> None:
        height, width = self.map.shape
        with open(path, "w") as fh:
            fh.write("# schema=ssim units=1\n")
            fh.write("x,y,ssim,valid\n")
            for yy in range(height):
                for xx in range(width):
                    ok = bool(self.region[yy, xx])
                    val = repr(float(self.map[yy, xx])) if ok else "nan"
                    fh.write(f"{xx},{yy},{val},{int(ok)}\n")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1-D Gaussian truncated to ``size`` taps, normalized to unit sum."""
    half = size // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (t / sigma) ** 2)
    return w / w.sum()


def _window_mean(img, w):
    tmp = ndimage.correlate1d(img, w, axis=0, mode="constant")
    return ndimage.correlate1d(tmp, w, axis=1, mode="constant")


def ssim(a, b, region=None, dynamic_range: float = 1.0) -> SsimReport:
    """Structural similarity with a 21x21 Gaussian window (sigma 1 px).

    The map is evaluated only where the whole window lies inside ``region``
    (the region eroded by 10 px); ``mean`` averages over those pixels.
    """
    a_arr = a.intensities if isinstance(a, GrayImage) else np.asarray(a, dtype=np.float64)
    b_arr = b.intensities if isinstance(b, GrayImage) else np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise ParameterError(f"image shapes differ: {a_arr.shape} vs {b_arr.shape}")
    if region is None:
        region = np.ones(a_arr.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != a_arr.shape:
        raise ParameterError("region shape does not match the images")
    inner = ndimage.binary_erosion(
        region, structure=np.ones((SSIM_WINDOW, SSIM_WINDOW), bool), border_value=0
    )
    if not inner.any():
        raise ParameterError("region has no pixel where the full SSIM window fits")
    w = gaussian_window()
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_a = _window_mean(a_arr, w)
    mu_b = _window_mean(b_arr, w)
    var_a = _window_mean(a_arr * a_arr, w) - mu_a * mu_a
    var_b = _window_mean(b_arr * b_arr, w) - mu_b * mu_b
    cov = _window_mean(a_arr * b_arr, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = np.where(inner, num / den, np.nan)
    # rounding in the moments can push a perfect match a few ulp above 1
    smap[inner] = np.minimum(smap[inner], 1.0)
    return SsimReport(smap, inner, float(np.mean(smap[inner])))
