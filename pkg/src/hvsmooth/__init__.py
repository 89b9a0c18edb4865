"""Scalable sampling from the smoothing distribution of high-dimensional
linear-Gaussian spatio-temporal state-space models.

Dense Kalman filtering/smoothing and an exact simulation smoother
(:mod:`hvsmooth.exact`) serve as built-in oracles for the sparse-factor
algorithms in :mod:`hvsmooth.hv`, which approximate every covariance by a
Cholesky factor constrained to a hierarchical sparsity pattern
(:mod:`hvsmooth.ordering`, :mod:`hvsmooth.sparselin`).
"""

from .exact import MomentSequence, ffbs, kalman_filter, kalman_smoother
from .hv import FilterState, HvFactors, hv_factor_pass, hvf, hvs, scalable_ffbs
from .models import (
    AdvectionDiffusionConfig,
    CovarianceSpec,
    DenseCovariance,
    KernelCovariance,
    ScaledCovariance,
    StateSpaceModel,
    advection_diffusion_matrix,
    covariance_matrix,
    observation_selector,
    simulate_trajectory,
)
from .ordering import (
    KnotHierarchy,
    SparsityPattern,
    SpatialGrid,
    build_dense_pattern,
    build_hierarchy,
    build_hv_pattern,
    build_lowrank_pattern,
    hv_layout,
    load_pattern,
    maxmin_order,
    save_pattern,
)
from .scoring import (
    InverseGammaParams,
    crps,
    crps_ratio,
    gibbs_sigma_w,
    sample_inverse_gamma,
    sigma_w_posterior,
)
from .sparselin import (
    FactorizationError,
    SelectedEntries,
    SparseLowerTriangular,
    filter_update_factor,
    hcf,
    load_factor,
    save_factor,
    selected_gram,
    tri_inverse,
    triangular_solve,
)

__version__ = "0.1.0"
