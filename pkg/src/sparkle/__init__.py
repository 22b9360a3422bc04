"""Simulation and inversion of light transport through glitter-like facet surfaces."""
from .calibrate import BasisSet, CalibrationConfig, bright_mask, build_bases, calibrate_matrix
from .config import ExperimentConfig, SceneConfig
from .errors import (
    CalibrationError,
    ConfigError,
    FormatError,
    MaskMismatchError,
    NumericalError,
    RankDeficientError,
    SolverError,
    SparkleError,
)
from .hdr import ExposureStack, hdr_merge
from .reconstruct import reconstruct_ls, reconstruct_nnls, reconstruct_with_shift_search
from .render import TransferMatrix, build_transfer_matrix, render_image
from .scene import CameraModel, FacetSurface, OrientationDistribution, ScreenModel, SurfaceConfig, sample_surface

__version__ = "0.1.0"
