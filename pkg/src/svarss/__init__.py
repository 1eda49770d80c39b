"""Structural VAR simulation, subsampling, and exact mixture-EM recovery."""

from ._backend import available_backends, default_backend
from .em import (
    EmConfig,
    ExpectedStats,
    FitResult,
    RestartSummary,
    Theta,
    e_step,
    em_fit,
    enumerate_assignments,
    multi_start_fit,
)
from .errors import (
    CapacityError,
    DegenerateComponentError,
    DimensionError,
    NumericalError,
    SchemeError,
    SvarError,
)
from .evaluate import RunEntry, RunSummary, SignedPermutation, align, param_errors, summarize
from .kalman import ConditionalSSM, SmoothedMoments, build_ssm, filter_smooth
from .model import (
    MixtureSpec,
    StackedRepresentation,
    SvarModel,
    Trajectory,
    build_mixed_freq_repr,
    build_subsampled_repr,
    load_model,
    save_model,
    simulate,
    subsampled_error_covariance,
    validate_model,
)
from .sampling import (
    Block,
    ObservationSet,
    SamplingScheme,
    apply_scheme,
    load_csv,
    mixed_scheme,
    observation_set_from_record,
    scheme_from_mask,
    uniform_scheme,
    write_csv,
)
from .selection import ModelVariant, ScoredModel, bic, count_params, select

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "default_backend",
    "EmConfig",
    "ExpectedStats",
    "FitResult",
    "RestartSummary",
    "Theta",
    "e_step",
    "em_fit",
    "enumerate_assignments",
    "multi_start_fit",
    "CapacityError",
    "DegenerateComponentError",
    "DimensionError",
    "NumericalError",
    "SchemeError",
    "SvarError",
    "RunEntry",
    "RunSummary",
    "SignedPermutation",
    "align",
    "param_errors",
    "summarize",
    "ConditionalSSM",
    "SmoothedMoments",
    "build_ssm",
    "filter_smooth",
    "MixtureSpec",
    "StackedRepresentation",
    "SvarModel",
    "Trajectory",
    "build_mixed_freq_repr",
    "build_subsampled_repr",
    "load_model",
    "save_model",
    "simulate",
    "subsampled_error_covariance",
    "validate_model",
    "Block",
    "ObservationSet",
    "SamplingScheme",
    "apply_scheme",
    "load_csv",
    "mixed_scheme",
    "observation_set_from_record",
    "scheme_from_mask",
    "uniform_scheme",
    "write_csv",
    "ModelVariant",
    "ScoredModel",
    "bic",
    "count_params",
    "select",
    "__version__",
]
