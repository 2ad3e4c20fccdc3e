"""Diffusion-bridge schedules, marginal-preserving samplers, and diagnostics."""

__version__ = "0.1.0"

from .denoiser import (
    AnalyticGaussianDenoiser,
    AnalyticGmmDenoiser,
    GmmCoupling,
    JointGaussian,
    MapPlusNoise,
    MlpDenoiser,
    MlpHyper,
    Preconditioner,
    analytic_denoise,
    denoise,
    gmm_denoise,
    load_denoiser,
    precondition,
    sample_condition,
    sample_pair,
    save_denoiser,
    score_from_denoiser,
    test_mse_vs_analytic,
    train_mlp_denoiser,
    zhat,
)
from .dynamics import (
    MomentEstimate,
    PathEnsemble,
    State,
    estimate_marginal_moments,
    forward_step_em,
    reverse_drift,
    reverse_drift_from_score,
    sample_kernel,
    simulate_ensemble,
)
from .metrics import (
    AFDReport,
    AffineProjection,
    ConditionedSamples,
    Identity,
    afd,
    convergence_slope,
    energy_distance,
    energy_permutation_quantile,
    mse,
    random_projection,
)
from .sampler import (
    SampleResult,
    SamplerConfig,
    sample,
    sample_result_csv_rows,
    step_dbim,
    step_euler_z,
    step_gamma_simplified,
    step_markovian,
)
from .schedule import (
    BridgeCoefficients,
    EpsilonPolicy,
    Schedule,
    ScheduleEval,
    TimeGrid,
    bridge_coefficients,
    epsilon,
    eval_schedule,
    make_time_grid,
    verify_reformulation,
)

__all__ = [
    "AFDReport",
    "AffineProjection",
    "AnalyticGaussianDenoiser",
    "AnalyticGmmDenoiser",
    "BridgeCoefficients",
    "ConditionedSamples",
    "EpsilonPolicy",
    "GmmCoupling",
    "Identity",
    "JointGaussian",
    "MapPlusNoise",
    "MlpDenoiser",
    "MlpHyper",
    "MomentEstimate",
    "PathEnsemble",
    "Preconditioner",
    "SampleResult",
    "SamplerConfig",
    "Schedule",
    "ScheduleEval",
    "State",
    "TimeGrid",
    "afd",
    "analytic_denoise",
    "bridge_coefficients",
    "convergence_slope",
    "denoise",
    "energy_distance",
    "energy_permutation_quantile",
    "epsilon",
    "estimate_marginal_moments",
    "eval_schedule",
    "forward_step_em",
    "gmm_denoise",
    "load_denoiser",
    "make_time_grid",
    "mse",
    "precondition",
    "random_projection",
    "reverse_drift",
    "reverse_drift_from_score",
    "sample",
    "sample_condition",
    "sample_kernel",
    "sample_pair",
    "sample_result_csv_rows",
    "save_denoiser",
    "score_from_denoiser",
    "simulate_ensemble",
    "step_dbim",
    "step_euler_z",
    "step_gamma_simplified",
    "step_markovian",
    "test_mse_vs_analytic",
    "train_mlp_denoiser",
    "verify_reformulation",
    "zhat",
]
