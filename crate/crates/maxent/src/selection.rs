//! Degree selection and Bayesian model comparison: BIC evidence, posterior
//! model probabilities, the degree sweep, and scoring of rival models
//! against the fitted exponential-family benchmark.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{fit_scaling, sample_moments, BasisError, MomentBasis};
use crate::data::{DataError, Dataset};
use crate::quadrature::{build_grid, default_nodes_per_dim, QuadratureError, SupportRegion};
use crate::solver::{solve_dual, MaxEntFit, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("evidence needs at least 2 observations, got {0}")]
    TooFewSamples(usize),

    #[error("cannot normalize an empty set of evidences")]
    EmptyModelSet,

    #[error("all evidences are -inf; no model has support")]
    NoFiniteEvidence,

    #[error("degree list is empty")]
    EmptyDegrees,

    #[error("degree {0} is odd; even degrees keep the leading term bounded on both sides (pass allow_odd to override)")]
    OddDegree(u32),

    #[error("degree {0} is below the minimum of 2")]
    DegreeTooSmall(u32),

    #[error("duplicate degree {0} in sweep list")]
    DuplicateDegree(u32),

    #[error("no degree in the sweep converged")]
    AllFitsFailed,

    #[error("benchmark fit has not converged")]
    UnconvergedBenchmark,

    #[error(
        "joint fit (degree {joint}) and marginal fit (degree {marginal}) must use the same degree \
         so the parameter-count difference counts exactly the y-involving moments"
    )]
    DegreeMismatch { joint: u32, marginal: u32 },

    #[error("joint fit is {joint}-dimensional but marginal fit is {marginal}-dimensional; expected joint = marginal + 1")]
    JointMarginalShape { joint: usize, marginal: usize },

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Quadrature(#[from] QuadratureError),

    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// BIC evidence: maximized log-likelihood minus half the parameter count
/// times log sample size (equivalently, minus one half of BIC).
pub fn evidence(log_likelihood: f64, k_params: usize, n: usize) -> Result<f64, SelectionError> {
    if n < 2 {
        return Err(SelectionError::TooFewSamples(n));
    }
    Ok(log_likelihood - 0.5 * k_params as f64 * (n as f64).ln())
}

/// Posterior model probabilities under a uniform model prior: the softmax
/// of the evidences, computed with the maximum shifted out.
pub fn posterior_probabilities(evidences: &[f64]) -> Result<Vec<f64>, SelectionError> {
    if evidences.is_empty() {
        return Err(SelectionError::EmptyModelSet);
    }
    let max = evidences.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    if !max.is_finite() {
        return Err(SelectionError::NoFiniteEvidence);
    }
    let exps: Vec<f64> = evidences.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// One model's scoring inside a comparison set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model_id: String,
    pub log_likelihood: f64,
    pub k_params: usize,
    pub evidence: f64,
    pub posterior: f64,
}

/// A rival model summarized by its maximized log-likelihood and parameter
/// count; any estimator can supply these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalModel {
    pub id: String,
    pub log_likelihood: f64,
    pub k_params: usize,
}

impl RivalModel {
    pub fn new(id: impl Into<String>, log_likelihood: f64, k_params: usize) -> Self {
        Self {
            id: id.into(),
            log_likelihood,
            k_params,
        }
    }
}

/// Outcome of fitting one degree inside a sweep.
#[derive(Debug, Clone)]
pub struct DegreeFit {
    pub degree: u32,
    pub fit: MaxEntFit,
    pub log_likelihood: f64,
    /// `-inf` when the fit did not converge; such entries never win selection.
    pub evidence: f64,
}

/// All per-degree fits plus the index of the winner.
#[derive(Debug, Clone)]
pub struct DegreeSweepResult {
    pub fits: Vec<DegreeFit>,
    pub selected: usize,
}

impl DegreeSweepResult {
    pub fn selected_degree(&self) -> u32 {
        self.fits[self.selected].degree
    }

    pub fn selected_fit(&self) -> &MaxEntFit {
        &self.fits[self.selected].fit
    }
}

/// Knobs for `sweep_degrees` beyond the solver configuration.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Grid resolution shared by every degree; defaults to the
    /// per-dimension default, raised to fit the largest degree.
    pub nodes_per_dim: Option<usize>,
    /// Permit odd maximum degrees.
    pub allow_odd: bool,
}

/// Fit every degree in the list on the same support and grid resolution,
/// score each converged fit by BIC evidence of the exponential family
/// likelihood, and select the maximum (ties break to the smallest degree,
/// so the outcome does not depend on list order).
pub fn sweep_degrees(
    data: &Dataset,
    support: &SupportRegion,
    degrees: &[u32],
    config: &SolverConfig,
    options: &SweepOptions,
) -> Result<DegreeSweepResult, SelectionError> {
    if degrees.is_empty() {
        return Err(SelectionError::EmptyDegrees);
    }
    let mut seen = std::collections::HashSet::new();
    for &a in degrees {
        if a < 2 {
            return Err(SelectionError::DegreeTooSmall(a));
        }
        if a % 2 == 1 && !options.allow_odd {
            return Err(SelectionError::OddDegree(a));
        }
        if !seen.insert(a) {
            return Err(SelectionError::DuplicateDegree(a));
        }
    }
    let max_degree = *degrees.iter().max().expect("nonempty");
    let nodes = options
        .nodes_per_dim
        .unwrap_or_else(|| default_nodes_per_dim(data.dim()))
        .max(max_degree as usize + 1);

    let scaling = fit_scaling(data, support)?;
    let n = data.n_rows();
    let mut fits = Vec::with_capacity(degrees.len());
    for &degree in degrees {
        let basis = MomentBasis::new(data.dim(), degree, scaling.clone())?;
        let grid = build_grid(support, &basis, nodes)?;
        let moments = sample_moments(data, &basis)?;
        match solve_dual(&grid, &moments, config) {
            Ok(fit) => {
                let log_likelihood = n as f64 * fit.dual_value();
                let ev = evidence(log_likelihood, fit.n_params(), n)?;
                fits.push(DegreeFit {
                    degree,
                    fit,
                    log_likelihood,
                    evidence: ev,
                });
            }
            Err(SolverError::NotConverged { fit, .. }) => {
                let log_likelihood = n as f64 * fit.dual_value();
                fits.push(DegreeFit {
                    degree,
                    fit: *fit,
                    log_likelihood,
                    evidence: f64::NEG_INFINITY,
                });
            }
            Err(other) => return Err(other.into()),
        }
    }

    let mut selected: Option<usize> = None;
    for (i, df) in fits.iter().enumerate() {
        if !df.fit.converged() {
            continue;
        }
        selected = match selected {
            None => Some(i),
            Some(best) => {
                let b = &fits[best];
                if df.evidence > b.evidence
                    || (df.evidence == b.evidence && df.degree < b.degree)
                {
                    Some(i)
                } else {
                    Some(best)
                }
            }
        };
    }
    let selected = selected.ok_or(SelectionError::AllFitsFailed)?;
    Ok(DegreeSweepResult { fits, selected })
}

/// Score the exponential-family benchmark (model 0) against rival models
/// of the unconditional density. The benchmark's maximized log-likelihood
/// is `N` times its dual value; its parameter count is the basis size.
pub fn compare_unconditional(
    n: usize,
    benchmark: &MaxEntFit,
    rivals: &[RivalModel],
) -> Result<Vec<ModelScore>, SelectionError> {
    if !benchmark.converged() {
        return Err(SelectionError::UnconvergedBenchmark);
    }
    let log_l0 = n as f64 * benchmark.dual_value();
    let mut scores = vec![ModelScore {
        model_id: "0".to_string(),
        log_likelihood: log_l0,
        k_params: benchmark.n_params(),
        evidence: evidence(log_l0, benchmark.n_params(), n)?,
        posterior: 0.0,
    }];
    for rival in rivals {
        scores.push(ModelScore {
            model_id: rival.id.clone(),
            log_likelihood: rival.log_likelihood,
            k_params: rival.k_params,
            evidence: evidence(rival.log_likelihood, rival.k_params, n)?,
            posterior: 0.0,
        });
    }
    fill_posteriors(&mut scores)?;
    Ok(scores)
}

/// Score conditional rival models against the conditional benchmark built
/// from a joint fit on (X, Y) and a marginal fit on X of the same degree.
///
/// The benchmark's conditional log-likelihood is the difference of the two
/// exponential-family log-likelihoods, and its parameter count is the
/// number of y-involving basis functions; the marginal likelihood of X is
/// common to every model and cancels from the posteriors.
pub fn compare_conditional(
    n: usize,
    joint: &MaxEntFit,
    marginal: &MaxEntFit,
    rivals: &[RivalModel],
) -> Result<Vec<ModelScore>, SelectionError> {
    if !joint.converged() || !marginal.converged() {
        return Err(SelectionError::UnconvergedBenchmark);
    }
    if joint.basis().dim() != marginal.basis().dim() + 1 {
        return Err(SelectionError::JointMarginalShape {
            joint: joint.basis().dim(),
            marginal: marginal.basis().dim(),
        });
    }
    if joint.basis().max_degree() != marginal.basis().max_degree() {
        return Err(SelectionError::DegreeMismatch {
            joint: joint.basis().max_degree(),
            marginal: marginal.basis().max_degree(),
        });
    }
    let log_l0 = n as f64 * (joint.dual_value() - marginal.dual_value());
    let k0 = joint.n_params() - marginal.n_params();
    let mut scores = vec![ModelScore {
        model_id: "0".to_string(),
        log_likelihood: log_l0,
        k_params: k0,
        evidence: evidence(log_l0, k0, n)?,
        posterior: 0.0,
    }];
    for rival in rivals {
        scores.push(ModelScore {
            model_id: rival.id.clone(),
            log_likelihood: rival.log_likelihood,
            k_params: rival.k_params,
            evidence: evidence(rival.log_likelihood, rival.k_params, n)?,
            posterior: 0.0,
        });
    }
    fill_posteriors(&mut scores)?;
    Ok(scores)
}

fn fill_posteriors(scores: &mut [ModelScore]) -> Result<(), SelectionError> {
    let evidences: Vec<f64> = scores.iter().map(|s| s.evidence).collect();
    let posteriors = posterior_probabilities(&evidences)?;
    for (score, p) in scores.iter_mut().zip(posteriors) {
        score.posterior = p;
    }
    Ok(())
}
