//! Evaluation of the fitted density `exp(lambda' T(x)) / Z`, conditional
//! slices and expectations for a scalar last coordinate, and quadrature
//! KL divergence between densities on a grid.

use thiserror::Error;

use crate::basis::{MomentBasis, SampleMoments};
use crate::math::{dot, gauss_legendre, pairwise_sum};
use crate::quadrature::{build_grid, tilted_moments, QuadratureError, QuadratureGrid, SupportRegion};
use crate::solver::MaxEntFit;

/// Marginal values below this are treated as a numerically empty slice.
const DEGENERATE_MARGINAL: f64 = 1e-300;

/// Densities above this threshold must stay absolutely continuous w.r.t.
/// the reference in a KL integrand.
const ABS_CONTINUITY_FLOOR: f64 = 1e-12;

/// Quadrature noise allowance when clamping a slightly negative KL to zero.
const KL_NEGATIVE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("conditioning requires a joint fit in at least two dimensions")]
    NotAJointFit,

    #[error("conditioning point has {got} coordinates; expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("conditioning point is outside the support's X projection: {bounds}")]
    OutsideProjection { bounds: String },

    #[error("marginal density vanished at the conditioning point (below {DEGENERATE_MARGINAL:e})")]
    DegenerateConditional,

    #[error("point contains non-finite coordinates")]
    NonFinitePoint,

    #[error("conditional quadrature needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error(
        "absolute continuity violated: q vanishes at node {node} where p = {p_value:.3e} > {ABS_CONTINUITY_FLOOR:e}"
    )]
    AbsoluteContinuityViolation { node: usize, p_value: f64 },

    #[error("density returned an invalid value {value} at node {node}")]
    InvalidDensityValue { node: usize, value: f64 },

    #[error("KL quadrature produced {0:.3e}, more negative than the noise tolerance")]
    NegativeDivergence(f64),

    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The fitted density in evaluable form. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct MaxEntDensity {
    fit: MaxEntFit,
}

impl MaxEntDensity {
    /// Wrap a solved fit. Works for unconverged fits too (the exponential
    /// form is normalized for any parameter vector), which is useful when
    /// inspecting diagnostics.
    pub fn from_fit(fit: MaxEntFit) -> Self {
        Self { fit }
    }

    /// Build the member of the exponential family with the given natural
    /// parameters, normalized on a fresh grid. The synthesized fit is
    /// self-consistent: its moments are the tilted expectations, so its
    /// dual value equals the KL information of the density itself.
    pub fn from_parameters(
        basis: MomentBasis,
        support: SupportRegion,
        nodes_per_dim: usize,
        lambda: Vec<f64>,
    ) -> Result<Self, DensityError> {
        let grid = build_grid(&support, &basis, nodes_per_dim)?;
        let (log_z, mean, _) = tilted_moments(&grid, &lambda);
        let dual_value = dot(&lambda, &mean) - log_z;
        let fit = MaxEntFit::from_parts(
            lambda,
            log_z,
            dual_value,
            0,
            0.0,
            true,
            basis,
            support,
            nodes_per_dim,
        );
        Ok(Self { fit })
    }

    pub fn fit(&self) -> &MaxEntFit {
        &self.fit
    }

    pub fn dim(&self) -> usize {
        self.fit.basis().dim()
    }

    pub fn support(&self) -> &SupportRegion {
        self.fit.support()
    }

    /// Density value at a point in original coordinates; zero outside the
    /// support. Evaluated in log space.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        assert!(x.iter().all(|v| v.is_finite()), "point must be finite");
        if !self.fit.support().contains(x) {
            return 0.0;
        }
        let basis = self.fit.basis();
        let mut t = vec![0.0; basis.len()];
        basis.eval_original_into(x, &mut t);
        (dot(self.fit.lambda_hat(), &t) - self.fit.log_partition_at_opt()).exp()
    }

    /// The sample moments implied by the density itself, i.e. the tilted
    /// expectations on a fresh grid.
    pub fn implied_moments(&self, n: usize) -> Result<SampleMoments, DensityError> {
        let grid = build_grid(
            self.fit.support(),
            self.fit.basis(),
            self.fit.nodes_per_dim(),
        )?;
        let (_, mean, _) = tilted_moments(&grid, self.fit.lambda_hat());
        Ok(SampleMoments::from_values(mean, n, self.fit.basis()))
    }

    /// Conditional density of the last coordinate given the others, as a
    /// normalized table over a 1D Gauss–Legendre grid on the y section of
    /// the support.
    pub fn conditional_slice(
        &self,
        x_given: &[f64],
        y_nodes: usize,
    ) -> Result<ConditionalSlice, DensityError> {
        let dim = self.dim();
        if dim < 2 {
            return Err(DensityError::NotAJointFit);
        }
        if x_given.len() != dim - 1 {
            return Err(DensityError::DimensionMismatch {
                expected: dim - 1,
                got: x_given.len(),
            });
        }
        if x_given.iter().any(|v| !v.is_finite()) {
            return Err(DensityError::NonFinitePoint);
        }
        if y_nodes < 2 {
            return Err(DensityError::TooFewNodes(y_nodes));
        }
        let (y_lo, y_hi) = self.y_section(x_given)?;
        let (gl_nodes, gl_weights) = gauss_legendre(y_nodes);
        let center = 0.5 * (y_lo + y_hi);
        let half = 0.5 * (y_hi - y_lo);

        let mut point = vec![0.0; dim];
        point[..dim - 1].copy_from_slice(x_given);
        let mut ys = Vec::with_capacity(y_nodes);
        let mut weights = Vec::with_capacity(y_nodes);
        let mut joint = Vec::with_capacity(y_nodes);
        for (g, w) in gl_nodes.iter().zip(&gl_weights) {
            let y = center + half * g;
            point[dim - 1] = y;
            ys.push(y);
            weights.push(w * half);
            joint.push(self.density_at(&point));
        }
        let integrand: Vec<f64> = weights.iter().zip(&joint).map(|(w, f)| w * f).collect();
        let marginal = pairwise_sum(&integrand);
        if !(marginal > DEGENERATE_MARGINAL) {
            return Err(DensityError::DegenerateConditional);
        }
        let density = joint.iter().map(|f| f / marginal).collect();
        Ok(ConditionalSlice {
            ys,
            weights,
            density,
            marginal,
        })
    }

    /// `E[Y | X = x]` through the same conditional quadrature, using the
    /// fit's own per-dimension resolution.
    pub fn conditional_expectation(&self, x_given: &[f64]) -> Result<f64, DensityError> {
        let slice = self.conditional_slice(x_given, self.fit.nodes_per_dim())?;
        Ok(slice.expectation())
    }

    /// Bounds of the support section in the last coordinate at fixed x.
    fn y_section(&self, x_given: &[f64]) -> Result<(f64, f64), DensityError> {
        match self.fit.support() {
            SupportRegion::Box { bounds } => {
                for (k, (&(lo, hi), &v)) in bounds.iter().zip(x_given).enumerate() {
                    if !(lo <= v && v <= hi) {
                        return Err(DensityError::OutsideProjection {
                            bounds: format!("coordinate {k} must lie in [{lo}, {hi}], got {v}"),
                        });
                    }
                }
                let (lo, hi) = bounds[bounds.len() - 1];
                Ok((lo, hi))
            }
            SupportRegion::Ball { radius, .. } => {
                let r2 = radius * radius;
                let x2: f64 = x_given.iter().map(|v| v * v).sum();
                if x2 >= r2 {
                    return Err(DensityError::OutsideProjection {
                        bounds: format!(
                            "conditioning point norm {:.6} must be below the ball radius {radius}",
                            x2.sqrt()
                        ),
                    });
                }
                let half = (r2 - x2).sqrt();
                Ok((-half, half))
            }
        }
    }
}

/// Normalized conditional density table over the y section.
#[derive(Debug, Clone)]
pub struct ConditionalSlice {
    ys: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
    marginal: f64,
}

impl ConditionalSlice {
    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Quadrature marginal density of X at the conditioning point.
    pub fn marginal(&self) -> f64 {
        self.marginal
    }

    /// Quadrature mass of the table; 1 up to rounding by construction.
    pub fn mass(&self) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.density)
            .map(|(w, f)| w * f)
            .collect();
        pairwise_sum(&terms)
    }

    pub fn expectation(&self) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.density)
            .zip(&self.ys)
            .map(|((w, f), y)| w * f * y)
            .collect();
        pairwise_sum(&terms)
    }
}

/// Quadrature KL divergence `integral p log(p / q)` over the grid's nodes.
///
/// Nodes where `p` is below the continuity floor contribute nothing; a
/// vanishing `q` against substantial `p` is an absolute-continuity error.
/// Small negative totals within quadrature noise clamp to zero.
pub fn kl_divergence<P, Q>(p: P, q: Q, grid: &QuadratureGrid) -> Result<f64, DensityError>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let mut terms = vec![0.0; grid.n_nodes()];
    for (node, term) in terms.iter_mut().enumerate() {
        let w = grid.weights()[node];
        if w == 0.0 {
            continue;
        }
        let x = grid.node_original(node);
        let pv = p(x);
        if !pv.is_finite() || pv < 0.0 {
            return Err(DensityError::InvalidDensityValue {
                node,
                value: pv,
            });
        }
        if pv <= ABS_CONTINUITY_FLOOR {
            continue;
        }
        let qv = q(x);
        if !qv.is_finite() || qv < 0.0 {
            return Err(DensityError::InvalidDensityValue {
                node,
                value: qv,
            });
        }
        if qv == 0.0 {
            return Err(DensityError::AbsoluteContinuityViolation {
                node,
                p_value: pv,
            });
        }
        *term = w * pv * (pv / qv).ln();
    }
    let total = pairwise_sum(&terms);
    if total < 0.0 {
        if total > -KL_NEGATIVE_TOLERANCE {
            Ok(0.0)
        } else {
            Err(DensityError::NegativeDivergence(total))
        }
    } else {
        Ok(total)
    }
}
