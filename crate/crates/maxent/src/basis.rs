//! Monomial moment bases over multi-indices, with the affine scaling map
//! used to condition the data, and sample-moment extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::math::pairwise_sum;
use crate::quadrature::SupportRegion;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("dimension must be at least 1")]
    ZeroDimension,

    #[error("maximum degree must be at least 1; an empty basis makes the dual problem degenerate")]
    ZeroDegree,

    #[error("basis size C({0} + {1}, {1}) overflows")]
    SizeOverflow(usize, u32),

    #[error("scale components must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("shift components must be finite")]
    InvalidShift,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("data row {row} lies outside the support region; enlarge the support")]
    SampleOutsideSupport { row: usize },
}

/// Exponent vector of the monomial `x^alpha = prod_k x_k^{alpha_k}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    /// Total degree `|alpha|`.
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

/// All multi-indices with `1 <= |alpha| <= max_degree` over `dim` variables,
/// in graded lexicographic order (by total degree, then lexicographically
/// with the leading variable first).
///
/// The all-zeros index is excluded: normalization is carried by a separate
/// dual variable, and duplicating it in the basis would make the Hessian
/// singular.
pub fn enumerate_multi_indices(dim: usize, max_degree: u32) -> Result<Vec<MultiIndex>, BasisError> {
    if dim == 0 {
        return Err(BasisError::ZeroDimension);
    }
    if max_degree == 0 {
        return Err(BasisError::ZeroDegree);
    }
    let len = basis_len(dim, max_degree).ok_or(BasisError::SizeOverflow(dim, max_degree))?;
    let mut out = Vec::with_capacity(len);
    let mut buf = vec![0u32; dim];
    for degree in 1..=max_degree {
        push_compositions(degree, 0, &mut buf, &mut out);
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

/// Number of indices with `1 <= |alpha| <= max_degree`, i.e. `C(dim + A, A) - 1`.
pub fn basis_len(dim: usize, max_degree: u32) -> Option<usize> {
    let n = (dim as u128).checked_add(max_degree as u128)?;
    let k = max_degree as u128;
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c.checked_mul(n - k + i)?;
        c /= i;
    }
    let len = c.checked_sub(1)?;
    usize::try_from(len).ok()
}

fn push_compositions(remaining: u32, slot: usize, buf: &mut [u32], out: &mut Vec<MultiIndex>) {
    if slot == buf.len() - 1 {
        buf[slot] = remaining;
        out.push(MultiIndex::new(buf.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[slot] = e;
        push_compositions(remaining - e, slot + 1, buf, out);
    }
}

/// Invertible per-coordinate affine map `u = (x - shift) / scale`.
///
/// `fit_scaling` produces the canonical instance sending the support's
/// bounding box onto `[-1, 1]^K`, which keeps monomials well conditioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl AffineMap {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self, BasisError> {
        if shift.len() != scale.len() {
            return Err(BasisError::DimensionMismatch {
                expected: shift.len(),
                got: scale.len(),
            });
        }
        if shift.iter().any(|s| !s.is_finite()) {
            return Err(BasisError::InvalidShift);
        }
        if let Some(&bad) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(BasisError::InvalidScale(bad));
        }
        Ok(Self { shift, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn to_scaled(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.shift.len() {
            out[k] = (x[k] - self.shift[k]) / self.scale[k];
        }
    }

    pub fn to_original(&self, u: &[f64], out: &mut [f64]) {
        for k in 0..self.shift.len() {
            out[k] = self.shift[k] + self.scale[k] * u[k];
        }
    }
}

/// The affine map sending the support's bounding box onto `[-1, 1]^K`,
/// after verifying that every data row lies inside the support (strictly
/// inside for ball supports, whose radius must exceed every sample norm).
pub fn fit_scaling(data: &Dataset, support: &SupportRegion) -> Result<AffineMap, BasisError> {
    if data.dim() != support.dim() {
        return Err(BasisError::DimensionMismatch {
            expected: support.dim(),
            got: data.dim(),
        });
    }
    for row in 0..data.n_rows() {
        let x = data.row(row);
        let inside = match support {
            SupportRegion::Box { bounds } => bounds
                .iter()
                .zip(x)
                .all(|(&(lo, hi), &v)| lo <= v && v <= hi),
            SupportRegion::Ball { radius, .. } => {
                x.iter().map(|v| v * v).sum::<f64>().sqrt() < *radius
            }
        };
        if !inside {
            return Err(BasisError::SampleOutsideSupport { row });
        }
    }
    let bbox = support.bounding_box();
    let shift = bbox.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let scale = bbox.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();
    AffineMap::new(shift, scale)
}

/// An ordered monomial basis `T(x) = (x^alpha)` for `1 <= |alpha| <= A`,
/// evaluated on affinely scaled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentBasis {
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
    scaling: AffineMap,
}

impl MomentBasis {
    pub fn new(dim: usize, max_degree: u32, scaling: AffineMap) -> Result<Self, BasisError> {
        if scaling.dim() != dim {
            return Err(BasisError::DimensionMismatch {
                expected: dim,
                got: scaling.dim(),
            });
        }
        let indices = enumerate_multi_indices(dim, max_degree)?;
        Ok(Self {
            dim,
            max_degree,
            indices,
            scaling,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn scaling(&self) -> &AffineMap {
        &self.scaling
    }

    /// Evaluate all basis monomials at an already-scaled point.
    ///
    /// Uses per-coordinate power tables, so the cost is `O(K*A + L)`.
    pub fn eval_scaled_into(&self, point: &[f64], out: &mut [f64]) {
        debug_assert_eq!(point.len(), self.dim);
        debug_assert_eq!(out.len(), self.indices.len());
        let a = self.max_degree as usize;
        let mut powers = vec![1.0; self.dim * (a + 1)];
        for k in 0..self.dim {
            let row = &mut powers[k * (a + 1)..(k + 1) * (a + 1)];
            for e in 1..=a {
                row[e] = row[e - 1] * point[k];
            }
        }
        for (i, idx) in self.indices.iter().enumerate() {
            let mut v = 1.0;
            for (k, &e) in idx.exponents().iter().enumerate() {
                v *= powers[k * (a + 1) + e as usize];
            }
            out[i] = v;
        }
    }

    /// Evaluate at a point in original coordinates, applying the scaling map.
    pub fn eval_original_into(&self, x: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; self.dim];
        self.scaling.to_scaled(x, &mut u);
        self.eval_scaled_into(&u, out);
    }
}

/// Sample moments `T_hat = (1/N) sum_n T(x_n)` on scaled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    values: Vec<f64>,
    n: usize,
    basis_dim: usize,
    basis_degree: u32,
}

impl SampleMoments {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn basis_degree(&self) -> u32 {
        self.basis_degree
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Assemble moments directly. Intended for synthetic inputs; `sample_moments`
    /// is the data path.
    pub fn from_values(values: Vec<f64>, n: usize, basis: &MomentBasis) -> Self {
        debug_assert_eq!(values.len(), basis.len());
        Self {
            values,
            n,
            basis_dim: basis.dim(),
            basis_degree: basis.max_degree(),
        }
    }
}

/// Compute sample moments of the data under `basis`.
///
/// Rows are mapped through `basis.scaling()` before the monomials are
/// evaluated. Each moment is reduced with fixed-order pairwise summation,
/// so the result is bit-identical for identical row order regardless of
/// thread count.
pub fn sample_moments(data: &Dataset, basis: &MomentBasis) -> Result<SampleMoments, BasisError> {
    if data.dim() != basis.dim() {
        return Err(BasisError::DimensionMismatch {
            expected: basis.dim(),
            got: data.dim(),
        });
    }
    let n = data.n_rows();
    let l = basis.len();
    // row-major N x L table of per-row basis values
    let mut table = vec![0.0; n * l];
    fill_rows(&mut table, l, |row, out| {
        basis.eval_original_into(data.row(row), out);
    });
    let mut column = vec![0.0; n];
    let values = (0..l)
        .map(|i| {
            for row in 0..n {
                column[row] = table[row * l + i];
            }
            pairwise_sum(&column) / n as f64
        })
        .collect();
    Ok(SampleMoments {
        values,
        n,
        basis_dim: basis.dim(),
        basis_degree: basis.max_degree(),
    })
}

#[cfg(feature = "parallel")]
pub(crate) fn fill_rows<F>(table: &mut [f64], width: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    use rayon::prelude::*;
    table
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(row, out)| fill(row, out));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_rows<F>(table: &mut [f64], width: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    for (row, out) in table.chunks_mut(width).enumerate() {
        fill(row, out);
    }
}
