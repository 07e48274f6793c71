"""Kernel NPIV with spectral stage-1 regularization."""

from .filters import FilterSpec, filter_psd, filter_scalar, verify_filter_conditions
from .kernels import KernelSpec, gram, kernel_eval
from .oracle import (
    DiscreteInstance,
    covariance_spectra,
    effective_dimension,
    exact_errors,
    link_parameters,
    load_instance,
    min_norm_solution,
    operator_T,
    save_instance,
)
from .stage1 import Stage1Model, embed_weights, fit_stage1, stage1_l2_error
from .stage2 import NpivEstimator, fit_npiv, krr_in_HF_oracle, predict

__version__ = "0.1.0"
