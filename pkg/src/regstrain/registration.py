"""Pairwise B-spline registration and incremental sequence tracking.

Convention: a registration of ``fixed`` and ``moving`` returns ``T`` with
``moving(T(x)) ~= fixed(x)``. Registering frame ``i`` (fixed) against frame
``i + 1`` (moving) therefore recovers the forward material motion from step
``i`` to step ``i + 1``, and composing the step transforms from the first
frame tracks every pixel of the undeformed grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .asgd import AsgdConfig, OptimizeTrace, optimize
from .bspline import BSplineTransform, new_transform, refit_transform
from .exceptions import ParameterError
from .fields import DisplacementField
from .image import SCHEMES, GrayImage, in_domain, pyramid_level, sample
from .metrics import METRICS, MetricEvaluator
from .validation import ssim


@dataclass
class RegistrationConfig:
    """Settings for one pairwise registration (and each step of a sequence)."""

    metric: str = "MI"
    n_samples: int = 2048
    spacing: tuple = (30.0, 30.0)
    pyramid_levels: tuple = (0,)
    asgd: AsgdConfig = field(default_factory=AsgdConfig)
    interpolation: str = "cubic_bspline"
    workers: int = 1

    def __post_init__(self):
        if np.isscalar(self.spacing):
            self.spacing = (float(self.spacing), float(self.spacing))
        self.spacing = tuple(float(s) for s in self.spacing)
        self.pyramid_levels = tuple(int(v) for v in np.atleast_1d(self.pyramid_levels))
        self.metric = str(self.metric).upper()
        self.validate()

    def validate(self):
        if self.metric not in METRICS:
            raise ParameterError(f"metric: unknown metric {self.metric!r}; expected one of {METRICS}")
        if len(self.spacing) != 2 or not all(s > 0 for s in self.spacing):
            raise ParameterError(f"spacing: must be two positive values, got {self.spacing}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 64:
            raise ParameterError(f"n_samples: must be an integer >= 64, got {self.n_samples}")
        levels = self.pyramid_levels
        if not levels or any(v < 0 for v in levels) or any(
                a <= b for a, b in zip(levels, levels[1:])):
            raise ParameterError(
                f"pyramid_levels: must be non-negative and strictly decreasing, got {levels}"
            )
        if self.interpolation not in SCHEMES:
            raise ParameterError(f"interpolation: unknown scheme {self.interpolation!r}")
        if int(self.workers) < 1:
            raise ParameterError(f"workers: must be >= 1, got {self.workers}")
        self.asgd.validate()


@dataclass(eq=False)
class SequenceResult:
    transforms: list
    displacements: list
    ssim_means: list
    ssim_before: list
    aborted: list
    traces: list

    def __len__(self):
        return len(self.transforms)


def _concat_traces(traces, levels):
    out = OptimizeTrace()
    out.levels = []
    for level, tr in zip(levels, traces):
        out.values += tr.values
        out.gradient_norms += tr.gradient_norms
        out.step_sizes += tr.step_sizes
        out.times += tr.times
        out.valid_fractions += tr.valid_fractions
        out.levels += [level] * len(tr)
        out.aborted |= tr.aborted
        if tr.abort_reason:
            out.abort_reason = tr.abort_reason
        out.gain = tr.gain
        out.final_parameters = tr.final_parameters
    return out


def register_pair(fixed: GrayImage, moving: GrayImage, cfg: RegistrationConfig | None = None,
                  seed=None):
    """Align ``moving`` to ``fixed`` with a B-spline transform.

    Levels of ``cfg.pyramid_levels`` run coarse to fine; at each level the
    grid spacing is ``cfg.spacing`` in that level's pixels and the previous
    level's result is refitted onto the new grid. The returned transform acts
    on full-resolution coordinates.

    Returns
    -------
    transform : BSplineTransform
    trace : OptimizeTrace
        Iterations of all levels concatenated; ``trace.levels`` tells which.
        ``trace.aborted`` is set if a level ended on a degenerate overlap, in
        which case the transform is the last valid iterate.
    """
    cfg = cfg or RegistrationConfig()
    cfg.validate()
    if fixed.shape != moving.shape:
        raise ParameterError(
            f"fixed and moving images differ in size: {fixed.shape} vs {moving.shape}"
        )
    base_seed = cfg.asgd.seed if seed is None else seed
    seed_key = tuple(int(s) for s in np.atleast_1d(base_seed))
    T = None
    prev_level = None
    traces = []
    for level in cfg.pyramid_levels:
        F = pyramid_level(fixed, level)
        M = pyramid_level(moving, level)
        template = new_transform((F.width, F.height), cfg.spacing)
        if T is not None:
            template = refit_transform(T, template, F.shape, 2.0 ** (prev_level - level))
        evaluator = MetricEvaluator(cfg.metric, F, M, template, cfg.n_samples,
                                    seed=seed_key + (level,), workers=cfg.workers)
        T, trace = optimize(evaluator, template, cfg.asgd)
        traces.append(trace)
        prev_level = level
        if trace.aborted:
            break
    if prev_level != 0:
        template = new_transform((fixed.width, fixed.height), cfg.spacing)
        T = refit_transform(T, template, fixed.shape, 2.0 ** prev_level)
    return T, _concat_traces(traces, cfg.pyramid_levels)


def resample_moving(moving: GrayImage, T: BSplineTransform,
                    scheme: str = "cubic_bspline") -> GrayImage:
    """Warp ``moving`` onto the fixed grid: ``out(x) = moving(T(x))``.

    Pixels mapped outside the moving image are set to 0 and masked out.
    """
    ys, xs = np.mgrid[0:moving.height, 0:moving.width].astype(np.float64)
    tx, ty, covered = T.transform_points(xs, ys, check=False)
    valid = covered & in_domain(moving, tx, ty)
    out = np.zeros(moving.shape)
    out[valid] = sample(moving, tx[valid], ty[valid], scheme)
    return GrayImage(np.clip(out, 0.0, 1.0), valid)


def transform_displacement(T: BSplineTransform, shape) -> DisplacementField:
    """Displacement ``T(X) - X`` on a pixel grid of ``shape = (height, width)``."""
    height, width = shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v, covered = T.displacement(xs, ys, check=False)
    valid = covered & in_domain(GrayImage(np.zeros(shape)), xs + u, ys + v)
    return DisplacementField(u, v, valid)


def register_sequence(images, cfg: RegistrationConfig | None = None) -> SequenceResult:
    """Register consecutive frames and accumulate motion on the first grid.

    Step ``i`` registers frame ``i`` (fixed) with frame ``i + 1`` (moving);
    tracked positions are pushed through each step transform in turn. A
    pixel becomes invalid, for good, once its position leaves the image.
    """
    cfg = cfg or RegistrationConfig()
    images = list(images)
    if len(images) < 2:
        raise ParameterError("a sequence needs at least two images")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ParameterError("all images in a sequence must have the same size")
    height, width = shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    px, py = xs.copy(), ys.copy()
    alive = np.ones(shape, dtype=bool)
    transforms, displacements, ssims, ssims_before, aborted, traces = [], [], [], [], [], []
    flagged = False
    for i in range(len(images) - 1):
        fixed, moving = images[i], images[i + 1]
        T, trace = register_pair(fixed, moving, cfg, seed=(cfg.asgd.seed, i))
        flagged = flagged or trace.aborted
        nx, ny, covered = T.transform_points(np.where(alive, px, 0.0),
                                             np.where(alive, py, 0.0), check=False)
        alive &= covered & in_domain(moving, nx, ny)
        px = np.where(alive, nx, px)
        py = np.where(alive, ny, py)
        warped = resample_moving(moving, T, cfg.interpolation)
        region = warped.roi & fixed.roi
        ssims.append(_safe_ssim(fixed, warped, region))
        ssims_before.append(_safe_ssim(fixed, moving, fixed.roi & moving.roi))
        transforms.append(T)
        displacements.append(DisplacementField(px - xs, py - ys, alive.copy()))
        aborted.append(flagged)
        traces.append(trace)
    return SequenceResult(transforms, displacements, ssims, ssims_before, aborted, traces)


def _safe_ssim(a, b, region):
    try:
        return ssim(a, b, region).mean
    except ParameterError:
        return float("nan")


def cumulative_displacement(result: SequenceResult, step: int) -> DisplacementField:
    """Cumulative displacement of the undeformed grid after step ``step``."""
    if not 0 <= step < len(result.displacements):
        raise IndexError(f"step {step} out of range for {len(result.displacements)} steps")
    return result.displacements[step]


def with_seed(cfg: RegistrationConfig, seed: int) -> RegistrationConfig:
    return replace(cfg, asgd=replace(cfg.asgd, seed=int(seed)))
