"""Full-field displacement and Green-Lagrange strain from image sequences.

Non-rigid cubic B-spline registration driven by stochastic gradient descent
on SSD, NCC or Parzen-window mutual information, plus a subset-based DIC
reference, synthetic ground-truth benchmarks and agreement metrics.
"""

from .asgd import AsgdConfig, OptimizeTrace, optimize
from .bspline import (
    BSplineTransform,
    new_transform,
    parameter_jacobian,
    transform_point,
)
from .config import RunConfig, load_config, save_config
from .dic import DicParams, dic_displacement, dic_strain
from .estimators import SequenceRegistration, StrainTransformer, SubsetDIC
from .fields import DisplacementField, StrainField
from .image import (
    GrayImage,
    intensity_gradient,
    interpolate,
    load_pgm,
    pyramid_level,
    save_pgm,
)
from .metrics import MetricReport, SampleSet, draw_samples, metric_value_and_gradient
from .registration import (
    RegistrationConfig,
    SequenceResult,
    cumulative_displacement,
    register_pair,
    register_sequence,
    resample_moving,
)
from .strain import green_lagrange_strain
from .synthetic import AnalyticField, generate_pair, generate_sequence, generate_speckle
from .validation import SsimReport, mape, ssim

__version__ = "0.1.0"
