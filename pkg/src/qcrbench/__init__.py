"""Precision-limit benchmark for sinusoid-object imaging under Poisson noise.

The package renders parameterized transmittance objects, simulates
shot-noise-limited detection, computes the attainable precision bounds
(per-pixel shot-noise and quadratic-gain scales plus the Cramer-Rao image
variance map from the Fisher information of the object parameters), and
scores reconstructions, both the built-in estimators and external ones
supplied as image stacks, against those bounds.
"""

from .bounds import (
    CovarianceBound,
    FisherMatrix,
    VarianceMap,
    classical_poisson_fim,
    hl_map,
    invert_fim,
    qfim,
    rescale_to_transmittance,
    sql_map,
    variance_map_jacobian,
    variance_map_mc,
)
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    IllConditionedError,
    InitFailedError,
    InvalidArgumentError,
    NonConvergenceError,
    SingularModelError,
    SizeMismatchError,
    UnsupportedDtypeError,
    UsageError,
)
from .estimators import (
    FitResult,
    MlConfig,
    ReconstructionEnsemble,
    load_external_reconstructions,
    ml_fit,
    plugin_estimate,
    reconstruct,
    run_ensemble,
    run_ml_ensemble,
    run_plugin_ensemble,
    spectral_init,
    write_reconstructions,
)
from .evaluation import (
    NormalityDiagnostic,
    bias_variance,
    build_report,
    compare_bounds,
    gdl,
    mse_map,
    pixel_histogram,
    ssim,
    write_map_csv,
    write_report,
)
from .families import (
    Family,
    ParamBounds,
    ParamVector,
    analytic_jacobian,
    canonical_form,
    default_bounds,
    eval_raw,
    load_raster,
    sample_params,
    theta_from_json,
    theta_to_json,
    to_transmittance,
    transmittance,
)
from .grid import GridSpec, make_grid
from .imgx import read_imgx, write_imgx
from .probe import (
    Convention,
    Frame,
    FrameEnsemble,
    ProbeConfig,
    derived_seed,
    expected_count_jacobian,
    expected_counts,
    sample_ensemble,
    sample_frame,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
