//! Newton–Raphson maximization of the reduced dual objective
//! `lambda' T_hat - logZ(lambda)`, whose optimum is the natural parameter
//! of the fitted exponential family and whose value is the minimized
//! KL information against the uniform prior on the support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{MomentBasis, SampleMoments};
use crate::math::dot;
use crate::quadrature::{log_partition, tilted_moments, QuadratureGrid, SupportRegion};

/// Divergence guard: once the parameter norm passes this, the sample
/// moments are effectively on or outside the boundary of the moment set.
const LAMBDA_DIVERGENCE_LIMIT: f64 = 1e6;

/// Ridge ceiling; escalation past this means the curvature information is
/// numerically useless.
const RIDGE_LIMIT: f64 = 1e16;

/// Relative pivot threshold for declaring the start covariance rank-deficient.
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(
        "did not converge within {iterations} iterations (final gradient norm {grad_norm:.3e}); \
         diagnostics retained on the returned fit"
    )]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        fit: Box<MaxEntFit>,
    },

    #[error(
        "moment constraints are infeasible: parameter norm reached {lambda_norm:.3e}; \
         the sample moments lie on or outside the boundary of the moment set — enlarge the support"
    )]
    InfeasibleMoments { lambda_norm: f64 },

    #[error(
        "basis covariance is rank-deficient at the uniform start; the moment functions are \
         linearly dependent on the support, so no unique optimum exists"
    )]
    SingularBasis,

    #[error("grid basis ({grid} functions) does not match moments ({moments} entries)")]
    BasisMismatch { grid: usize, moments: usize },

    #[error("sample moments contain non-finite values")]
    NonFiniteMoments,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("operation requires a converged fit")]
    UnconvergedFit,
}

/// Backtracking line-search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_increase: f64,
    pub max_halvings: u32,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on the gradient infinity norm, which is
    /// exactly the worst moment mismatch in scaled units.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Starting ridge added to the covariance when forming the Newton step.
    pub ridge_floor: f64,
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 100,
            ridge_floor: 1e-10,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(SolverError::InvalidConfig("grad_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be positive"));
        }
        if !(self.ridge_floor > 0.0 && self.ridge_floor.is_finite()) {
            return Err(SolverError::InvalidConfig("ridge_floor must be positive"));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(SolverError::InvalidConfig("shrink must lie in (0, 1)"));
        }
        if !(ls.sufficient_increase > 0.0 && ls.sufficient_increase < 1.0) {
            return Err(SolverError::InvalidConfig(
                "sufficient_increase must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

/// One accepted Newton iteration, for the verbose trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dual_value: f64,
    pub grad_norm: f64,
    pub ridge: f64,
    pub halvings: u32,
}

/// A fitted maximum-entropy density in dual form.
///
/// `dual_value` is the maximized `lambda' T_hat - logZ(lambda)`; by strong
/// duality it equals the minimized KL information `H_min` against the
/// uniform prior, so that quantity is stored exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntFit {
    lambda_hat: Vec<f64>,
    log_partition_at_opt: f64,
    dual_value: f64,
    iterations: usize,
    grad_norm_final: f64,
    converged: bool,
    basis: MomentBasis,
    support: SupportRegion,
    nodes_per_dim: usize,
    trace: Vec<IterationRecord>,
}

impl MaxEntFit {
    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }

    pub fn log_partition_at_opt(&self) -> f64 {
        self.log_partition_at_opt
    }

    pub fn dual_value(&self) -> f64 {
        self.dual_value
    }

    /// Minimized KL information against the uniform prior (natural log,
    /// Lebesgue reference measure, so it is negative on supports with
    /// volume above one). Identical to `dual_value` by strong duality.
    pub fn h_min(&self) -> f64 {
        self.dual_value
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn grad_norm_final(&self) -> f64 {
        self.grad_norm_final
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn basis(&self) -> &MomentBasis {
        &self.basis
    }

    pub fn support(&self) -> &SupportRegion {
        &self.support
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    /// Number of natural parameters, i.e. the basis size L.
    pub fn n_params(&self) -> usize {
        self.lambda_hat.len()
    }

    /// Reassemble a fit from stored fields (model-file loading).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        lambda_hat: Vec<f64>,
        log_partition_at_opt: f64,
        dual_value: f64,
        iterations: usize,
        grad_norm_final: f64,
        converged: bool,
        basis: MomentBasis,
        support: SupportRegion,
        nodes_per_dim: usize,
    ) -> Self {
        Self {
            lambda_hat,
            log_partition_at_opt,
            dual_value,
            iterations,
            grad_norm_final,
            converged,
            basis,
            support,
            nodes_per_dim,
            trace: Vec::new(),
        }
    }
}

/// Value, gradient, and Hessian of the dual objective at `lambda`.
#[derive(Debug, Clone)]
pub struct DualEval {
    /// `lambda' T_hat - logZ(lambda)`.
    pub value: f64,
    /// `T_hat - E_lambda[T]`, the moment mismatch.
    pub gradient: Vec<f64>,
    /// `-Cov_lambda[T]`, negative semidefinite.
    pub hessian: DMatrix<f64>,
}

/// Evaluate the dual objective with its derivatives.
pub fn dual_objective(
    grid: &QuadratureGrid,
    moments: &SampleMoments,
    lambda: &[f64],
) -> Result<DualEval, SolverError> {
    check_compatible(grid, moments)?;
    if lambda.len() != grid.n_basis() || lambda.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteMoments);
    }
    let (log_z, mean, cov) = tilted_moments(grid, lambda);
    let value = dot(lambda, moments.values()) - log_z;
    let gradient = moments
        .values()
        .iter()
        .zip(&mean)
        .map(|(t, e)| t - e)
        .collect();
    Ok(DualEval {
        value,
        gradient,
        hessian: -cov,
    })
}

/// Maximize the dual objective by damped Newton iteration from the uniform
/// start `lambda = 0`.
///
/// Each step solves `(Cov + mu I) step = gradient` with the ridge `mu`
/// escalated tenfold until the factorization succeeds, then backtracks
/// until the dual value increases, so the iterate sequence is monotone.
pub fn solve_dual(
    grid: &QuadratureGrid,
    moments: &SampleMoments,
    config: &SolverConfig,
) -> Result<MaxEntFit, SolverError> {
    solve_dual_from(grid, moments, config, vec![0.0; grid.n_basis()])
}

/// As `solve_dual`, but starting from a caller-supplied parameter vector.
pub fn solve_dual_from(
    grid: &QuadratureGrid,
    moments: &SampleMoments,
    config: &SolverConfig,
    start: Vec<f64>,
) -> Result<MaxEntFit, SolverError> {
    config.validate()?;
    check_compatible(grid, moments)?;
    if moments.values().iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteMoments);
    }
    if start.len() != grid.n_basis() || start.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteMoments);
    }

    let t_hat = moments.values();
    let mut lambda = start;
    let (mut log_z, mut mean, mut cov) = tilted_moments(grid, &lambda);

    // Rank check at the start point: a deficient covariance means the basis
    // functions are linearly dependent on the support and the optimum is
    // not unique.
    if is_rank_deficient(&cov) {
        return Err(SolverError::SingularBasis);
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    for iter in 1..=config.max_iters {
        iterations = iter;
        let value = dot(&lambda, t_hat) - log_z;
        let gradient: Vec<f64> = t_hat.iter().zip(&mean).map(|(t, e)| t - e).collect();
        let grad_norm = inf_norm(&gradient);

        if grad_norm <= config.grad_tol {
            trace.push(IterationRecord {
                iteration: iter,
                dual_value: value,
                grad_norm,
                ridge: 0.0,
                halvings: 0,
            });
            return Ok(MaxEntFit {
                lambda_hat: lambda,
                log_partition_at_opt: log_z,
                dual_value: value,
                iterations: iter,
                grad_norm_final: grad_norm,
                converged: true,
                basis: grid.basis().clone(),
                support: grid.support().clone(),
                nodes_per_dim: grid.nodes_per_dim(),
                trace,
            });
        }

        let lambda_norm = inf_norm(&lambda);
        if lambda_norm > LAMBDA_DIVERGENCE_LIMIT {
            return Err(SolverError::InfeasibleMoments { lambda_norm });
        }

        let grad_vec = DVector::from_column_slice(&gradient);
        let mut ridge = config.ridge_floor;
        let accepted = 'damping: loop {
            let step = loop {
                let mut damped = cov.clone();
                for i in 0..damped.nrows() {
                    damped[(i, i)] += ridge;
                }
                match damped.cholesky() {
                    Some(ch) => break ch.solve(&grad_vec),
                    None => {
                        ridge *= 10.0;
                        if ridge > RIDGE_LIMIT {
                            break 'damping None;
                        }
                    }
                }
            };
            let slope = grad_vec.dot(&step);
            // near the optimum the true per-step gain sinks below f64
            // resolution of the dual value; allow rounding-level slack so
            // ulp noise cannot reject the full Newton step
            let noise = 4.0 * f64::EPSILON * (1.0 + value.abs());
            let mut t = 1.0;
            for halvings in 0..=config.line_search.max_halvings {
                let candidate: Vec<f64> = lambda
                    .iter()
                    .zip(step.iter())
                    .map(|(l, s)| l + t * s)
                    .collect();
                let cand_log_z = log_partition(grid, &candidate);
                let cand_value = dot(&candidate, t_hat) - cand_log_z;
                if cand_value >= value + config.line_search.sufficient_increase * t * slope - noise
                {
                    break 'damping Some((candidate, ridge, halvings));
                }
                t *= config.line_search.shrink;
            }
            // no acceptable step along this direction: damp harder
            ridge *= 100.0;
            if ridge > RIDGE_LIMIT {
                break 'damping None;
            }
        };

        let Some((next, ridge_used, halvings)) = accepted else {
            let grad_norm_final = grad_norm;
            let fit = MaxEntFit {
                lambda_hat: lambda,
                log_partition_at_opt: log_z,
                dual_value: value,
                iterations: iter,
                grad_norm_final,
                converged: false,
                basis: grid.basis().clone(),
                support: grid.support().clone(),
                nodes_per_dim: grid.nodes_per_dim(),
                trace,
            };
            return Err(SolverError::NotConverged {
                iterations: iter,
                grad_norm: grad_norm_final,
                fit: Box::new(fit),
            });
        };

        trace.push(IterationRecord {
            iteration: iter,
            dual_value: value,
            grad_norm,
            ridge: ridge_used,
            halvings,
        });
        lambda = next;
        let refreshed = tilted_moments(grid, &lambda);
        log_z = refreshed.0;
        mean = refreshed.1;
        cov = refreshed.2;
    }

    let value = dot(&lambda, t_hat) - log_z;
    let gradient: Vec<f64> = t_hat.iter().zip(&mean).map(|(t, e)| t - e).collect();
    let grad_norm = inf_norm(&gradient);
    let fit = MaxEntFit {
        lambda_hat: lambda,
        log_partition_at_opt: log_z,
        dual_value: value,
        iterations,
        grad_norm_final: grad_norm,
        converged: false,
        basis: grid.basis().clone(),
        support: grid.support().clone(),
        nodes_per_dim: grid.nodes_per_dim(),
        trace,
    };
    Err(SolverError::NotConverged {
        iterations,
        grad_norm,
        fit: Box::new(fit),
    })
}

/// Minimized KL information of a converged fit against the uniform prior.
pub fn kl_vs_uniform(fit: &MaxEntFit) -> Result<f64, SolverError> {
    if !fit.converged() {
        return Err(SolverError::UnconvergedFit);
    }
    Ok(fit.h_min())
}

fn check_compatible(grid: &QuadratureGrid, moments: &SampleMoments) -> Result<(), SolverError> {
    if grid.n_basis() != moments.len()
        || grid.dim() != moments.basis_dim()
        || grid.basis().max_degree() != moments.basis_degree()
    {
        return Err(SolverError::BasisMismatch {
            grid: grid.n_basis(),
            moments: moments.len(),
        });
    }
    Ok(())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn is_rank_deficient(cov: &DMatrix<f64>) -> bool {
    let d_max = (0..cov.nrows())
        .map(|i| cov[(i, i)])
        .fold(0.0f64, f64::max);
    if !(d_max > 0.0) {
        return true;
    }
    match cov.clone().cholesky() {
        None => true,
        Some(ch) => {
            let l = ch.l();
            (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] < SINGULAR_PIVOT_RATIO * d_max)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{sample_moments, AffineMap, MomentBasis, SampleMoments};
    use crate::data::Dataset;
    use crate::quadrature::{build_grid, SupportRegion};

    /// T(x) = x on [0, 1] with identity scaling, plus hand-set moments.
    fn unit_interval_setup(t_hat: f64, nodes: usize) -> (QuadratureGrid, SampleMoments) {
        let support = SupportRegion::bounded_box(vec![(0.0, 1.0)]).unwrap();
        let basis = MomentBasis::new(1, 1, AffineMap::identity(1)).unwrap();
        let grid = build_grid(&support, &basis, nodes).unwrap();
        let moments = SampleMoments::from_values(vec![t_hat], 100, &basis);
        (grid, moments)
    }

    /// Independent root of m(lambda) = 1/(1 - e^-lambda) - 1/lambda = target.
    fn bisect_tilted_mean(target: f64) -> f64 {
        let m = |l: f64| 1.0 / (1.0 - (-l).exp()) - 1.0 / l;
        let (mut lo, mut hi) = (1e-8, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn dual_objective_at_uniform_start() {
        let (grid, moments) = unit_interval_setup(0.7, 64);
        let eval = dual_objective(&grid, &moments, &[0.0]).unwrap();
        assert!(eval.value.abs() < 1e-12);
        assert!((eval.gradient[0] - 0.2).abs() < 1e-12);
        assert!((eval.hessian[(0, 0)] + 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn dual_objective_matches_closed_form_at_one() {
        let (grid, moments) = unit_interval_setup(0.7, 64);
        let eval = dual_objective(&grid, &moments, &[1.0]).unwrap();
        // 0.7 - ln(e - 1)
        assert!((eval.value - 0.158_675_145_387_081_89).abs() < 1e-12);
    }

    #[test]
    fn uniform_moments_need_zero_tilt() {
        let support = SupportRegion::bounded_box(vec![(-1.0, 1.0)]).unwrap();
        let basis = MomentBasis::new(1, 2, AffineMap::identity(1)).unwrap();
        let grid = build_grid(&support, &basis, 64).unwrap();
        let moments = SampleMoments::from_values(vec![0.0, 1.0 / 3.0], 100, &basis);
        let eval = dual_objective(&grid, &moments, &[0.0, 0.0]).unwrap();
        assert!(eval.gradient.iter().all(|g| g.abs() < 1e-13));

        let fit = solve_dual(&grid, &moments, &SolverConfig::default()).unwrap();
        assert!(fit.converged());
        assert!(fit.lambda_hat().iter().all(|l| l.abs() < 1e-6));
    }

    #[test]
    fn symmetric_moment_gives_zero_lambda() {
        let (grid, moments) = unit_interval_setup(0.5, 64);
        let fit = solve_dual(&grid, &moments, &SolverConfig::default()).unwrap();
        assert!(fit.converged());
        assert!(fit.lambda_hat()[0].abs() < 1e-8);
        assert!(fit.h_min().abs() < 1e-10);
    }

    #[test]
    fn recovers_bisection_root_for_offset_mean() {
        let (grid, moments) = unit_interval_setup(0.7, 256);
        let mut config = SolverConfig::default();
        config.grad_tol = 1e-12;
        let fit = solve_dual(&grid, &moments, &config).unwrap();
        let oracle = bisect_tilted_mean(0.7);
        assert!(
            (fit.lambda_hat()[0] - oracle).abs() < 1e-6,
            "solver {} vs bisection {}",
            fit.lambda_hat()[0],
            oracle
        );
        assert!((oracle - 2.672_103_855_273_385_5).abs() < 1e-9);
    }

    #[test]
    fn h_min_matches_closed_form_for_offset_mean() {
        let (grid, moments) = unit_interval_setup(0.7, 256);
        let mut config = SolverConfig::default();
        config.grad_tol = 1e-12;
        let fit = solve_dual(&grid, &moments, &config).unwrap();
        // 0.7 * lambda - ln((e^lambda - 1)/lambda) at the bisection root
        assert!((kl_vs_uniform(&fit).unwrap() - 0.252_845_563_004_186).abs() < 1e-9);
    }

    #[test]
    fn kl_vs_uniform_is_negative_log_volume_at_uniform_fit() {
        let support = SupportRegion::bounded_box(vec![(-1.0, 1.0)]).unwrap();
        let basis = MomentBasis::new(1, 2, AffineMap::identity(1)).unwrap();
        let grid = build_grid(&support, &basis, 64).unwrap();
        let moments = SampleMoments::from_values(vec![0.0, 1.0 / 3.0], 100, &basis);
        let fit = solve_dual(&grid, &moments, &SolverConfig::default()).unwrap();
        assert!((kl_vs_uniform(&fit).unwrap() + 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn dual_value_is_monotone_across_iterations() {
        let (grid, moments) = unit_interval_setup(0.87, 128);
        let fit = solve_dual(&grid, &moments, &SolverConfig::default()).unwrap();
        let values: Vec<f64> = fit.trace().iter().map(|r| r.dual_value).collect();
        for pair in values.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-14, "trace not monotone: {values:?}");
        }
    }

    #[test]
    fn boundary_moments_are_flagged_infeasible() {
        let (grid, moments) = unit_interval_setup(1.2, 64);
        let mut config = SolverConfig::default();
        config.max_iters = 500;
        match solve_dual(&grid, &moments, &config) {
            Err(SolverError::InfeasibleMoments { .. }) => {}
            other => panic!("expected InfeasibleMoments, got {other:?}"),
        }
    }

    #[test]
    fn exhausted_iterations_return_diagnostics() {
        let (grid, moments) = unit_interval_setup(0.9, 128);
        let mut config = SolverConfig::default();
        config.max_iters = 1;
        match solve_dual(&grid, &moments, &config) {
            Err(SolverError::NotConverged { fit, .. }) => {
                assert!(!fit.converged());
                assert!(fit.grad_norm_final() > 0.0);
                assert!(kl_vs_uniform(&fit).is_err());
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn collapsed_dimension_is_reported_singular() {
        // with identity scaling, a nearly collapsed second coordinate makes
        // every x2-involving monomial numerically dependent
        let support = SupportRegion::bounded_box(vec![(0.0, 1.0), (0.0, 1e-9)]).unwrap();
        let basis = MomentBasis::new(2, 2, AffineMap::identity(2)).unwrap();
        let grid = build_grid(&support, &basis, 8).unwrap();
        let moments = SampleMoments::from_values(
            vec![0.5, 5e-10, 1.0 / 3.0, 2.5e-10, 3e-19],
            10,
            &basis,
        );
        match solve_dual(&grid, &moments, &SolverConfig::default()) {
            Err(SolverError::SingularBasis) => {}
            other => panic!("expected SingularBasis, got {other:?}"),
        }
    }

    #[test]
    fn perturbed_starts_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.gen_range(-1.0..1.0f64).powi(3)])
            .collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let support = SupportRegion::bounded_box(vec![(-1.0, 1.0)]).unwrap();
        let basis = MomentBasis::new(1, 4, AffineMap::identity(1)).unwrap();
        let grid = build_grid(&support, &basis, 64).unwrap();
        let moments = sample_moments(&data, &basis).unwrap();
        let mut config = SolverConfig::default();
        config.grad_tol = 1e-10;
        let a = solve_dual(&grid, &moments, &config).unwrap();
        let start: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let b = solve_dual_from(&grid, &moments, &config, start).unwrap();
        for (x, y) in a.lambda_hat().iter().zip(b.lambda_hat()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn config_validation() {
        let (grid, moments) = unit_interval_setup(0.6, 64);
        let mut config = SolverConfig::default();
        config.line_search.shrink = 1.5;
        assert!(matches!(
            solve_dual(&grid, &moments, &config),
            Err(SolverError::InvalidConfig(_))
        ));
    }
}
