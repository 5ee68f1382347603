"""Similarity costs (SSD, NCC, MI) and their gradients over sampled pixels.

All costs are minimized: SSD is the mean squared residual, NCC and MI are
negated. Gradients are taken with respect to the flat coefficient vector of a
:class:`~regstrain.bspline.BSplineTransform`, chaining the moving image's
spline gradient through the transform's tensor-product weights.

Per-sample work runs in fixed-size chunks, optionally on a thread pool. The
chunk layout never depends on the worker count and all reductions happen in
sample order, so results are bit-identical for any ``workers`` value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._basis import cubic_weights, cubic_weights_derivative
from .bspline import BSplineTransform, support_coverage
from .exceptions import ConfigurationError, DegenerateOverlapError, ParameterError
from .image import GrayImage, in_roi, sample, sample_with_gradient

METRICS = ("SSD", "NCC", "MI")
MI_BINS = 32
CHUNK_SIZE = 1024


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Jittered pixel positions drawn from the fixed image's ROI."""

    points: np.ndarray
    count: int
    seed: object
    bin_offsets: tuple = (0.0, 0.0)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True, eq=False)
class MetricReport:
    value: float
    gradient: np.ndarray
    valid_fraction: float


def draw_samples(fixed: GrayImage, n: int, seed, shift_bins: bool = False) -> SampleSet:
    """Draw ``n`` ROI pixels uniformly with replacement, jittered by +-0.5 px.

    ``seed`` may be anything ``numpy.random.default_rng`` accepts; the
    registration loop passes ``(seed, iteration)`` to stream fresh samples.
    With ``shift_bins`` the set also carries random MI histogram offsets.
    A box-window histogram pulls every sample towards the centre of its
    fixed bin, which biases the MI gradient even between identical images;
    a fresh lattice shift per draw makes that pull average out.
    """
    n = int(n)
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    flat = np.flatnonzero(fixed.roi)
    if flat.size == 0:
        raise ConfigurationError("region of interest is empty")
    rng = np.random.default_rng(seed)
    pick = flat[rng.integers(0, flat.size, size=n)]
    rows, cols = np.divmod(pick, fixed.width)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2))
    points = np.column_stack([cols + jitter[:, 0], rows + jitter[:, 1]])
    offsets = tuple(rng.uniform(0.0, 1.0, 2).tolist()) if shift_bins else (0.0, 0.0)
    return SampleSet(points, n, seed, offsets)


def _intensity_range(image: GrayImage):
    lo = float(image.intensities.min())
    hi = float(image.intensities.max())
    return lo, max(hi - lo, 1e-12)


def _chunk_terms(fixed, moving, T, x, y):
    """Per-sample quantities for one chunk of sample points."""
    f = sample(fixed, x, y, check=False)
    index, weight, covered = T.support(x, y)
    u, v, _ = T.displacement(x, y, check=False)
    mx = x + u
    my = y + v
    valid = covered & in_roi(moving, mx, my)
    mx = np.where(valid, mx, 0.0)
    my = np.where(valid, my, 0.0)
    m, gx, gy = sample_with_gradient(moving, mx, my, check=False)
    return f, m, gx, gy, index, weight, valid


def _collect(fixed, moving, T, samples, workers):
    n = samples.count
    bounds = [(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]
    x, y = samples.x, samples.y

    def run(b):
        return _chunk_terms(fixed, moving, T, x[b[0]:b[1]], y[b[0]:b[1]])

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return [np.concatenate(arrs) for arrs in zip(*parts)]


def _accumulate(T, dcost_dm, gx, gy, index, weight):
    ncp = T.grid_dims[0] * T.grid_dims[1]
    idx = index.ravel()
    gradient = np.empty(2 * ncp)
    gradient[:ncp] = np.bincount(idx, weights=((dcost_dm * gx)[:, None] * weight).ravel(),
                                 minlength=ncp)
    gradient[ncp:] = np.bincount(idx, weights=((dcost_dm * gy)[:, None] * weight).ravel(),
                                 minlength=ncp)
    return gradient


def _ssd(f, m):
    r = f - m
    return float(np.mean(r * r)), -2.0 * r / r.size


def _ncc(f, m):
    fc = f - f.mean()
    mc = m - m.mean()
    sff = float(np.dot(fc, fc))
    smm = float(np.dot(mc, mc))
    if sff <= 0.0 or smm <= 0.0:
        return 0.0, np.zeros_like(f)
    denom = np.sqrt(sff * smm)
    rho = float(np.dot(fc, mc)) / denom
    drho = fc / denom - rho * mc / smm
    return -rho, -drho


def parzen_joint_histogram(f, m, f_range, m_range, bins=MI_BINS, offsets=(0.0, 0.0)):
    """Joint histogram with a box window on ``f`` and cubic B-spline on ``m``.

    ``offsets`` (each in [0, 1)) slide the bin lattice by a fraction of a bin.
    Intensities span ``bins - 1`` fixed bins and ``bins - 4`` moving bin
    widths, so every shift keeps all windows inside the histogram.

    Returns
    -------
    joint : ndarray, shape (bins, bins)
        Probabilities (sum to one), fixed bins along axis 0.
    fbin : ndarray of int
    mbin0 : ndarray of int
        First of the four moving bins touched by each sample.
    frac : ndarray
        Fractional position within bin ``mbin0 + 1``.
    deta_dm : ndarray
        Derivative of the continuous moving bin coordinate w.r.t. intensity.
    """
    f_lo, f_width = f_range
    m_lo, m_width = m_range
    f_off, m_off = offsets
    fpos = f_off + (f - f_lo) / f_width * (bins - 1)
    fbin = np.clip(np.floor(fpos), 0, bins - 1).astype(np.intp)
    mnorm = (m - m_lo) / m_width
    clipped = (mnorm < 0.0) | (mnorm > 1.0)
    eta = 1.0 + m_off + np.clip(mnorm, 0.0, 1.0) * (bins - 4)
    j = np.minimum(np.floor(eta), bins - 3)
    frac = eta - j
    mbin0 = j.astype(np.intp) - 1
    w = cubic_weights(frac)
    cells = fbin[:, None] * bins + mbin0[:, None] + np.arange(4)
    joint = np.bincount(cells.ravel(), weights=w.ravel(), minlength=bins * bins)
    joint = joint.reshape(bins, bins) / f.size
    deta_dm = np.where(clipped, 0.0, (bins - 4) / m_width)
    return joint, fbin, mbin0, frac, deta_dm


def _mi(f, m, f_range, m_range, bins=MI_BINS, offsets=(0.0, 0.0)):
    joint, fbin, mbin0, frac, deta_dm = parzen_joint_histogram(f, m, f_range, m_range, bins,
                                                               offsets)
    pf = joint.sum(axis=1)
    pm = joint.sum(axis=0)
    outer = pf[:, None] * pm[None, :]
    nz = joint > 0
    log_ratio = np.zeros_like(joint)
    log_ratio[nz] = np.log(joint[nz] / outer[nz])
    mi = float(np.sum(joint[nz] * log_ratio[nz]))
    cols = mbin0[:, None] + np.arange(4)
    dw = cubic_weights_derivative(frac)
    s = np.sum(dw * log_ratio[fbin[:, None], cols], axis=1) * deta_dm / f.size
    return -mi, -s


def metric_value_and_gradient(kind: str, fixed: GrayImage, moving: GrayImage,
                              T: BSplineTransform, samples: SampleSet,
                              workers: int = 1) -> MetricReport:
    """Evaluate a similarity cost and its coefficient gradient.

    Samples whose mapped position ``T(x)`` leaves the moving image, or lands
    next to a masked moving pixel, are dropped;
    if half or more are dropped a :class:`DegenerateOverlapError` is raised.
    For MI the histogram lattice is shifted by ``samples.bin_offsets``.
    """
    kind = kind.upper()
    if kind not in METRICS:
        raise ParameterError(f"unknown metric {kind!r}; expected one of {METRICS}")
    f, m, gx, gy, index, weight, valid = _collect(fixed, moving, T, samples, workers)
    valid_fraction = float(np.count_nonzero(valid)) / samples.count
    if valid_fraction <= 0.5:
        raise DegenerateOverlapError(
            f"only {valid_fraction:.1%} of samples map inside the moving image"
        )
    f, m, gx, gy = f[valid], m[valid], gx[valid], gy[valid]
    index, weight = index[valid], weight[valid]
    if kind == "SSD":
        value, dcost = _ssd(f, m)
    elif kind == "NCC":
        value, dcost = _ncc(f, m)
    else:
        value, dcost = _mi(f, m, _intensity_range(fixed), _intensity_range(moving),
                           offsets=samples.bin_offsets)
    gradient = _accumulate(T, dcost, gx, gy, index, weight)
    return MetricReport(value, gradient, valid_fraction)


def metric_value(kind: str, fixed: GrayImage, moving: GrayImage, T: BSplineTransform,
                 samples: SampleSet) -> float:
    return metric_value_and_gradient(kind, fixed, moving, T, samples).value


def full_image_mutual_information(a: np.ndarray, b: np.ndarray, bins: int = MI_BINS) -> float:
    """Plain-histogram MI of two equally shaped arrays using every pixel."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    hist, _, _ = np.histogram2d(a, b, bins=bins)
    p = hist / hist.sum()
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa @ pb)[nz])))


class MetricEvaluator:
    """Callable ``(parameters, iteration) -> MetricReport`` for the optimizer.

    Each iteration draws a fresh :class:`SampleSet` seeded by
    ``(*seed, iteration)``, so a run is reproducible from ``seed`` alone.
    ``seed`` is an int or a tuple of ints.

    With ``self_reference`` (MI only) the reported gradient is the MI
    gradient minus the gradient of the fixed image against itself at zero
    displacement, on the same samples. The Parzen estimator has a small
    image-dependent gradient even between identical images, which would
    otherwise shift the optimum by a few hundredths of a pixel (most at
    border control points). Near alignment the moving image seen through
    ``T`` looks like the fixed image, so the reference gradient is a
    first-order estimate of that offset. It also shares the sampling noise.
    The reported value is left uncorrected.
    """

    def __init__(self, kind, fixed, moving, template: BSplineTransform,
                 n_samples=2048, seed=0, workers=1, self_reference=True):
        self.kind = kind.upper()
        if self.kind not in METRICS:
            raise ParameterError(f"unknown metric {kind!r}; expected one of {METRICS}")
        self.fixed = fixed
        self.moving = moving
        self.template = template
        self.n_samples = int(n_samples)
        self.seed = seed
        self.workers = int(workers)
        self.self_reference = bool(self_reference) and self.kind == "MI"

    def preconditioner(self, floor: float = 0.05) -> np.ndarray:
        """Per-coefficient gradient scale ``1 / coverage`` (coverage floored).

        Coverage counts fixed-ROI pixels that the starting transform maps
        inside the moving image. Control points whose support lies mostly
        outside that overlap receive proportionally fewer sample contributions;
        this rescaling lets them converge at the same rate as interior ones.
        """
        ys, xs = np.mgrid[0:self.fixed.height, 0:self.fixed.width].astype(np.float64)
        tx, ty, covered = self.template.transform_points(xs, ys, check=False)
        overlap = self.fixed.roi & covered & in_roi(self.moving, tx, ty)
        cover = np.maximum(support_coverage(self.template, overlap), floor).ravel()
        return np.concatenate([1.0 / cover, 1.0 / cover])

    def samples(self, iteration: int) -> SampleSet:
        key = tuple(int(s) for s in np.atleast_1d(self.seed)) + (int(iteration),)
        return draw_samples(self.fixed, self.n_samples, key, shift_bins=self.kind == "MI")

    def __call__(self, params, iteration: int = 0) -> MetricReport:
        T = self.template.with_parameters(params)
        samples = self.samples(iteration)
        report = metric_value_and_gradient(self.kind, self.fixed, self.moving, T, samples,
                                           self.workers)
        if not self.self_reference:
            return report
        zero = self.template.with_parameters(np.zeros_like(report.gradient))
        ref = metric_value_and_gradient(self.kind, self.fixed, self.fixed, zero, samples,
                                        self.workers)
        return MetricReport(report.value, report.gradient - ref.gradient, report.valid_fraction)
