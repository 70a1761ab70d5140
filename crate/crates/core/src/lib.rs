//! Maximum-likelihood estimation for multiaffine residual models with
//! generalized-normal noise, solved by alternating iteratively reweighted
//! least squares (AIRLS).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod densities;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod problems;
pub mod solver;
pub mod variance;

pub use densities::{gnd_log_density, modified_residual, weight, Density};
pub use error::{Error, Result};
pub use model::{
    eval_residuals, linearize_block, validate_model, BlockId, BlockLayout, Factor, LinearForm,
    LinearizedSystem, MultiaffineExpr, MultiaffineModel, ProblemDocument, ResidualTerm,
};
pub use problems::{GeneratorSpec, ProblemInstance};
pub use solver::{
    airls_solve, airls_sweep, eval_g, eval_ghat, suboptimality_bound, weighted_ls_update,
    SolveResult, SolverConfig, Termination,
};
pub use variance::{
    estimate_covariance, estimate_covariance_fast, resampling_covariance, CovarianceEstimate,
    CovarianceMethod, SamplerConfig, SamplerScale,
};
