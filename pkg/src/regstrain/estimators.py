"""scikit-learn style wrappers around the registration, DIC and strain code.

The estimators keep all settings as constructor parameters (so ``get_params``
/ ``set_params`` / ``clone`` work) and store learned state in attributes with
a trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .asgd import AsgdConfig
from .dic import DicParams, dic_displacement, dic_strain
from .exceptions import ParameterError
from .fields import DisplacementField
from .image import GrayImage
from .registration import RegistrationConfig, register_sequence, resample_moving
from .strain import green_lagrange_strain


def check_image(image, name="image") -> GrayImage:
    """Return ``image`` as a :class:`GrayImage`, accepting 2-D arrays in [0, 1]."""
    if isinstance(image, GrayImage):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be a 2-D array, got shape {arr.shape}")
    return GrayImage(arr)


def check_sequence(images, min_length=2) -> list:
    """Validate an ordered list of equally sized images."""
    if isinstance(images, (GrayImage, np.ndarray)) and np.ndim(getattr(images, "intensities", images)) == 2:
        raise ParameterError("expected a sequence of images, got a single image")
    seq = [check_image(im, f"images[{k}]") for k, im in enumerate(images)]
    if len(seq) < min_length:
        raise ParameterError(f"need at least {min_length} images, got {len(seq)}")
    shape = seq[0].shape
    for k, im in enumerate(seq):
        if im.shape != shape:
            raise ParameterError(f"images[{k}] has shape {im.shape}, expected {shape}")
    return seq


def check_field(field) -> DisplacementField:
    if not isinstance(field, DisplacementField):
        raise ParameterError(f"expected a DisplacementField, got {type(field).__name__}")
    return field


class SequenceRegistration(BaseEstimator):
    """Incremental B-spline registration of an image sequence.

    ``fit(images)`` registers each consecutive pair and composes the motion
    on the first frame's grid. ``transform`` returns the cumulative
    displacement fields, one per frame after the first.

    Attributes
    ----------
    result_ : SequenceResult
    transforms_ : list of BSplineTransform
    displacements_ : list of DisplacementField
    ssim_ : list of float
    aborted_ : list of bool
    """

    def __init__(self, metric="MI", n_samples=2048, spacing=(30.0, 30.0), pyramid_levels=(0,),
                 max_iterations=500, a=None, A=20.0, alpha=0.602, time_window=0.1,
                 seed=0, interpolation="cubic_bspline", n_jobs=1):
        self.metric = metric
        self.n_samples = n_samples
        self.spacing = spacing
        self.pyramid_levels = pyramid_levels
        self.max_iterations = max_iterations
        self.a = a
        self.A = A
        self.alpha = alpha
        self.time_window = time_window
        self.seed = seed
        self.interpolation = interpolation
        self.n_jobs = n_jobs

    def to_config(self) -> RegistrationConfig:
        asgd = AsgdConfig(max_iterations=self.max_iterations, a=self.a, A=self.A,
                          alpha=self.alpha, time_window=self.time_window, seed=self.seed)
        return RegistrationConfig(metric=self.metric, n_samples=self.n_samples,
                                  spacing=self.spacing, pyramid_levels=self.pyramid_levels,
                                  asgd=asgd, interpolation=self.interpolation,
                                  workers=self.n_jobs)

    def fit(self, images, y=None):
        seq = check_sequence(images)
        self.result_ = register_sequence(seq, self.to_config())
        self.transforms_ = self.result_.transforms
        self.displacements_ = self.result_.displacements
        self.ssim_ = self.result_.ssim_means
        self.aborted_ = self.result_.aborted
        self.n_frames_ = len(seq)
        return self

    def transform(self, images=None):
        """Cumulative displacement fields of the fitted sequence."""
        check_is_fitted(self, "result_")
        return list(self.displacements_)

    def fit_transform(self, images, y=None):
        return self.fit(images).transform()

    def warp(self, images):
        """Warp each frame ``i + 1`` back onto frame ``i`` with the fitted steps."""
        check_is_fitted(self, "result_")
        seq = check_sequence(images)
        if len(seq) != self.n_frames_:
            raise ParameterError(f"expected {self.n_frames_} images, got {len(seq)}")
        return [resample_moving(seq[i + 1], T, self.interpolation)
                for i, T in enumerate(self.transforms_)]


class SubsetDIC(BaseEstimator):
    """Subset ZNCC matching on a seed grid, with strain-window plane fits.

    ``fit((reference, deformed))`` stores ``displacement_`` and ``strain_``.
    """

    def __init__(self, subset_radius=10, step=4, search_radius=20, strain_window=5.0):
        self.subset_radius = subset_radius
        self.step = step
        self.search_radius = search_radius
        self.strain_window = strain_window

    def _params(self) -> DicParams:
        return DicParams(self.subset_radius, self.step, self.search_radius, self.strain_window)

    def fit(self, pair, y=None):
        ref, deformed = check_sequence(pair, min_length=2)[:2]
        params = self._params()
        self.displacement_ = dic_displacement(ref, deformed, params)
        self.strain_ = dic_strain(self.displacement_, params.strain_window)
        self.n_valid_ = int(np.count_nonzero(self.displacement_.valid))
        return self

    def predict(self, pair=None):
        check_is_fitted(self, "displacement_")
        return self.displacement_


class StrainTransformer(TransformerMixin, BaseEstimator):
    """Displacement field to Green-Lagrange strain field.

    ``method="central"`` differentiates the dense field with second-order
    finite differences; ``method="window"`` fits planes over a radius
    ``window`` (the DIC strain-window approach, for sparse fields).
    """

    def __init__(self, method="central", pixel_spacing=(1.0, 1.0), window=5.0):
        self.method = method
        self.pixel_spacing = pixel_spacing
        self.window = window

    def fit(self, field=None, y=None):
        if self.method not in ("central", "window"):
            raise ParameterError(f"method must be 'central' or 'window', got {self.method!r}")
        return self

    def transform(self, field):
        field = check_field(field)
        self.fit()
        if self.method == "central":
            return green_lagrange_strain(field, self.pixel_spacing)
        return dic_strain(field, self.window)
