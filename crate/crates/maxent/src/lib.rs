//! Maximum-entropy density estimation on compact supports.
//!
//! Given N observations in up to three dimensions, the estimator is the
//! density that minimizes KL information against the uniform prior subject
//! to matching the sample moments of a monomial basis. That minimum is
//! found through its finite-dimensional dual: maximize
//! `lambda' T_hat - log integral exp(lambda' T(x)) dx` over the natural
//! parameters of an exponential family, a smooth concave problem solved
//! here by damped Newton iteration on a Gauss–Legendre grid.
//!
//! Because the fitted density is also the maximum-likelihood member of
//! that exponential family, it doubles as an absolute benchmark for model
//! comparison: every candidate model is scored by BIC evidence and a
//! posterior probability, with the fitted family entering as "model 0".
//! A large posterior on model 0 means no candidate fits well.
//!
//! Module map:
//! - [`data`]: datasets, CSV ingestion, content fingerprints.
//! - [`basis`]: multi-index monomial bases, affine scaling, sample moments.
//! - [`quadrature`]: supports, tensor-product Gauss–Legendre grids,
//!   log-partition and tilted moments.
//! - [`solver`]: the dual Newton solve and fit diagnostics.
//! - [`density`]: density evaluation, conditional slices, quadrature KL.
//! - [`selection`]: BIC evidence, posteriors, degree sweeps, comparisons.
//! - [`model`]: the JSON model document.

pub mod basis;
pub mod data;
pub mod density;
pub mod math;
pub mod model;
pub mod quadrature;
pub mod selection;
pub mod solver;

pub use basis::{
    enumerate_multi_indices, fit_scaling, sample_moments, AffineMap, BasisError, MomentBasis,
    MultiIndex, SampleMoments,
};
pub use data::{DataError, DataFingerprint, Dataset};
pub use density::{kl_divergence, ConditionalSlice, DensityError, MaxEntDensity};
pub use model::{ModelError, ModelFile};
pub use quadrature::{
    build_grid, default_nodes_per_dim, expectation_and_covariance, log_partition, QuadratureError,
    QuadratureGrid, SupportRegion,
};
pub use selection::{
    compare_conditional, compare_unconditional, evidence, posterior_probabilities, sweep_degrees,
    DegreeFit, DegreeSweepResult, ModelScore, RivalModel, SelectionError, SweepOptions,
};
pub use solver::{
    dual_objective, kl_vs_uniform, solve_dual, solve_dual_from, DualEval, IterationRecord,
    LineSearch, MaxEntFit, SolverConfig, SolverError,
};
