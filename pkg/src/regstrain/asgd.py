"""Adaptive stochastic gradient descent over transform coefficients.

The gain is ``gamma(t) = a / (A + t) ** alpha``, where the effective time ``t``
moves with the agreement of successive stochastic gradients:

    t_{k+1} = max(0, t_k + 2 * sigmoid(-c_k / omega) - 1)

with ``c_k`` the cosine between ``g_k`` and ``g_{k-1}``. Gradients pointing the
same way pull time back (bigger steps); opposing gradients push it forward
(damping).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .bspline import BSplineTransform
from .exceptions import DegenerateOverlapError, ParameterError


@dataclass
class AsgdConfig:
    """Optimizer settings.

    With ``a=None`` the gain is estimated before the first step: it is the
    smaller of the gain that moves no control point by more than ``max_step``
    pixels on the first step, and the gain that turns the gradient change
    under a uniform ``probe`` pixel shift into a step of ``probe`` pixels.
    With ``clip`` on, any later step that would move a control point by more
    than ``max_step`` pixels is scaled down to that length. With
    ``precondition`` on and an evaluator that offers ``preconditioner()``,
    each gradient entry is scaled by it before use (border control points
    with little data would otherwise lag behind).
    """

    max_iterations: int = 500
    a: float | None = None
    A: float = 20.0
    alpha: float = 0.602
    time_window: float = 0.1
    seed: int = 0
    max_step: float = 1.0
    probe: float = 0.1
    clip: bool = True
    precondition: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ParameterError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        if self.a is not None and not self.a > 0:
            raise ParameterError(f"a must be > 0, got {self.a}")
        if not self.A >= 1:
            raise ParameterError(f"A must be >= 1, got {self.A}")
        if not 0.5 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (0.5, 1], got {self.alpha}")
        if not self.time_window > 0:
            raise ParameterError(f"time_window must be > 0, got {self.time_window}")
        if not self.max_step > 0:
            raise ParameterError(f"max_step must be > 0, got {self.max_step}")
        if not self.probe > 0:
            raise ParameterError(f"probe must be > 0, got {self.probe}")


@dataclass
class OptimizeTrace:
    values: list = field(default_factory=list)
    gradient_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    times: list = field(default_factory=list)
    valid_fractions: list = field(default_factory=list)
    final_parameters: np.ndarray | None = None
    aborted: bool = False
    abort_reason: str = ""
    gain: float | None = None

    def __len__(self):
        return len(self.values)

    def rows(self):
        for k in range(len(self.values)):
            yield (k, self.values[k], self.gradient_norms[k], self.step_sizes[k],
                   self.times[k], self.valid_fractions[k])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "value", "grad_norm", "gamma", "time", "valid_fraction"])
            for row in self.rows():
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _max_point_step(g: np.ndarray) -> float:
    half = g.size // 2
    return float(np.max(np.hypot(g[:half], g[half:]))) if half else 0.0


def estimate_gain(evaluator, mu, g0, cfg: AsgdConfig, iteration: int = 0, scale=None):
    """Gain ``a`` from the first gradient and a curvature probe.

    The probe re-evaluates the gradient at ``mu`` shifted by ``cfg.probe``
    pixels along x and then y, on the samples of ``iteration`` (the one that
    produced ``g0``), so sampling noise largely cancels in the difference.
    ``scale`` is the preconditioner already applied to ``g0``. Returns
    ``None`` when every gradient is zero.
    """
    base = cfg.A ** cfg.alpha
    candidates = []
    peak = _max_point_step(g0)
    if peak > 0.0:
        candidates.append(cfg.max_step * base / peak)
    half = mu.size // 2
    response = 0.0
    for sl in (slice(0, half), slice(half, None)):
        shifted = mu.copy()
        shifted[sl] += cfg.probe
        try:
            g = np.asarray(evaluator(shifted, iteration).gradient, dtype=np.float64)
            if scale is not None:
                g = g * scale
        except DegenerateOverlapError:
            continue
        response = max(response, _max_point_step(g - g0))
    if response > 0.0:
        candidates.append(cfg.probe * base / response)
    return min(candidates) if candidates else None


def optimize(evaluator, T0: BSplineTransform, cfg: AsgdConfig | None = None):
    """Run ASGD for exactly ``cfg.max_iterations`` iterations.

    Parameters
    ----------
    evaluator : callable
        ``evaluator(parameters, iteration) -> MetricReport``.
    T0 : BSplineTransform
        Starting transform; not modified.
    cfg : AsgdConfig

    Returns
    -------
    transform : BSplineTransform
        Final iterate, or the last valid one if the evaluator reported a
        degenerate overlap (``trace.aborted`` is then set).
    trace : OptimizeTrace
    """
    cfg = cfg or AsgdConfig()
    cfg.validate()
    mu = T0.get_parameters()
    trace = OptimizeTrace()
    a = cfg.a
    t = 0.0
    scale = None
    if cfg.precondition and hasattr(evaluator, "preconditioner"):
        scale = np.asarray(evaluator.preconditioner(), dtype=np.float64)
    g_prev = None
    for k in range(int(cfg.max_iterations)):
        try:
            report = evaluator(mu, k)
        except DegenerateOverlapError as exc:
            trace.aborted = True
            trace.abort_reason = str(exc)
            break
        g = np.asarray(report.gradient, dtype=np.float64)
        if scale is not None:
            g = g * scale
        gnorm = float(np.linalg.norm(g))
        if a is None and np.any(g):
            a = estimate_gain(evaluator, mu, g, cfg, k, scale)
        gamma = 0.0 if a is None else a / (cfg.A + t) ** cfg.alpha
        trace.values.append(float(report.value))
        trace.gradient_norms.append(gnorm)
        trace.step_sizes.append(gamma)
        trace.times.append(t)
        trace.valid_fractions.append(float(report.valid_fraction))
        if gamma > 0.0:
            step = gamma * g
            longest = _max_point_step(step)
            if cfg.clip and longest > cfg.max_step:
                step *= cfg.max_step / longest
            mu = mu - step
        if g_prev is not None:
            denom = gnorm * float(np.linalg.norm(g_prev))
            cosine = float(np.dot(g, g_prev)) / denom if denom > 0.0 else 0.0
            t = max(0.0, t + 2.0 * _sigmoid(-cosine / cfg.time_window) - 1.0)
        g_prev = g
    trace.final_parameters = mu
    trace.gain = a
    return T0.with_parameters(mu), trace
