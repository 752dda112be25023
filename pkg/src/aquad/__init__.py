"""Adaptive interpolative quadrature for expensive black-box densities.

Builds a kernel interpolant of an unnormalized target from actively
chosen evaluation nodes and integrates the interpolant instead of the
target, yielding marginal-likelihood and posterior-moment estimates
whose only true-target cost is the node evaluations themselves.
"""

from .targets import (
    BoxSupport,
    TargetDensity,
    RvDataset,
    RvParams,
    banana_log_density,
    banana_target,
    multimodal_log_density,
    multimodal_target,
    make_rv_dataset,
    rv_log_likelihood,
    rv_predict,
    rv_prior_indicator,
    rv_target,
    solve_kepler,
)
from .kernels import (
    GaussianKernelSpec,
    NnKernelSpec,
    VoronoiApprox,
    gauss_hermite_integral,
    gaussian_eval,
    gaussian_moment_integral,
    nn_eval,
    voronoi_build,
)
from .interpolant import (
    InterpolantModel,
    extend,
    fill_distance,
    fit,
    gp_variance,
    predict,
    separation_distance,
)
from .quadrature import (
    EstimateReport,
    MomentRequest,
    estimate,
    i_hat_closed_form,
    i_hat_gauss_hermite,
    i_hat_kernel_is,
    i_hat_kernel_mc,
    surrogate_is,
    voronoi_estimates,
    z_hat,
)
from .acquisition import AcquisitionBudget, AcquisitionSpec, acquisition_eval, acquisition_maximize, schedule_eval
from .tuner import BandwidthScan, make_bandwidth_grid, tune_bandwidth_mll, tune_bandwidth_zhat
from .adaptive import RunConfig, RunTrace, presample_init, run
from .baselines import BaselineConfig, is_uniform, mh_chain, run_baseline
from .oracle import GridTruth, grid_truth, qmc_truth, rel_mse

__version__ = "0.1.0"
