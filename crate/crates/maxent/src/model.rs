//! The on-disk model document: a JSON schema carrying everything needed to
//! evaluate a fit (basis, support, scaling, natural parameters, normalizer)
//! plus solver diagnostics and a fingerprint of the training data.
//!
//! Serialization goes through serde_json, whose float formatting is the
//! shortest decimal that round-trips to the exact same bits, so a loaded
//! model reproduces density values digit for digit. Field order is fixed
//! by the struct, so identical fits serialize to identical bytes; the only
//! run-dependent field is the `metadata.created_unix` stamp, which callers
//! supply and the fingerprint does not cover.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{enumerate_multi_indices, AffineMap, BasisError, MomentBasis, MultiIndex};
use crate::data::{DataFingerprint, Dataset};
use crate::density::MaxEntDensity;
use crate::quadrature::SupportRegion;
use crate::solver::MaxEntFit;

pub const SCHEMA_VERSION: u32 = 1;

/// Column convention for conditional use: the dependent variable is the
/// last CSV column.
pub const LAYOUT_Y_LAST: &str = "y-last";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported model schema version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),

    #[error("model file is inconsistent: {0}")]
    Inconsistent(String),

    #[error("model was fitted on different data: expected {expected} rows with hash {expected_hash}, got {got} rows with hash {got_hash}")]
    FingerprintMismatch {
        expected: u64,
        expected_hash: String,
        got: u64,
        got_hash: String,
    },

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Wall-clock stamp in seconds; informational only, not fingerprinted.
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub dim: usize,
    pub max_degree: u32,
    pub indices: Vec<MultiIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes_per_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub grad_norm_final: f64,
    pub converged: bool,
}

/// Serializable image of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub metadata: ModelMetadata,
    pub layout: String,
    pub basis: BasisSpec,
    pub support: SupportRegion,
    pub scaling: AffineMap,
    pub lambda_hat: Vec<f64>,
    pub log_partition: f64,
    pub h_min: f64,
    pub grid: GridSpec,
    pub solver: SolverDiagnostics,
    pub data_fingerprint: DataFingerprint,
}

impl ModelFile {
    pub fn from_fit(fit: &MaxEntFit, fingerprint: DataFingerprint, created_unix: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            metadata: ModelMetadata { created_unix },
            layout: LAYOUT_Y_LAST.to_string(),
            basis: BasisSpec {
                dim: fit.basis().dim(),
                max_degree: fit.basis().max_degree(),
                indices: fit.basis().indices().to_vec(),
            },
            support: fit.support().clone(),
            scaling: fit.basis().scaling().clone(),
            lambda_hat: fit.lambda_hat().to_vec(),
            log_partition: fit.log_partition_at_opt(),
            h_min: fit.h_min(),
            grid: GridSpec {
                nodes_per_dim: fit.nodes_per_dim(),
            },
            solver: SolverDiagnostics {
                iterations: fit.iterations(),
                grad_norm_final: fit.grad_norm_final(),
                converged: fit.converged(),
            },
            data_fingerprint: fingerprint,
        }
    }

    pub fn to_json_string(&self) -> Result<String, ModelError> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(file.schema_version));
        }
        file.validate()?;
        Ok(file)
    }

    /// Rebuild the fit; stored values are used verbatim so evaluation
    /// reproduces the saved model exactly.
    pub fn to_fit(&self) -> Result<MaxEntFit, ModelError> {
        let basis = MomentBasis::new(self.basis.dim, self.basis.max_degree, self.scaling.clone())?;
        Ok(MaxEntFit::from_parts(
            self.lambda_hat.clone(),
            self.log_partition,
            self.h_min,
            self.solver.iterations,
            self.solver.grad_norm_final,
            self.solver.converged,
            basis,
            self.support.clone(),
            self.grid.nodes_per_dim,
        ))
    }

    pub fn to_density(&self) -> Result<MaxEntDensity, ModelError> {
        Ok(MaxEntDensity::from_fit(self.to_fit()?))
    }

    /// Verify the file was fitted on exactly this dataset.
    pub fn check_fingerprint(&self, data: &Dataset) -> Result<(), ModelError> {
        let fp = data.fingerprint();
        if fp != self.data_fingerprint {
            return Err(ModelError::FingerprintMismatch {
                expected: self.data_fingerprint.n_rows,
                expected_hash: self.data_fingerprint.sha256.clone(),
                got: fp.n_rows,
                got_hash: fp.sha256,
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ModelError> {
        let expected = enumerate_multi_indices(self.basis.dim, self.basis.max_degree)?;
        if expected != self.basis.indices {
            return Err(ModelError::Inconsistent(
                "basis index list does not match the canonical graded-lex enumeration".into(),
            ));
        }
        if self.lambda_hat.len() != expected.len() {
            return Err(ModelError::Inconsistent(format!(
                "lambda_hat has {} entries for a basis of size {}",
                self.lambda_hat.len(),
                expected.len()
            )));
        }
        if self.lambda_hat.iter().any(|v| !v.is_finite()) || !self.log_partition.is_finite() {
            return Err(ModelError::Inconsistent(
                "non-finite parameter or normalizer".into(),
            ));
        }
        if self.support.dim() != self.basis.dim {
            return Err(ModelError::Inconsistent(format!(
                "support dimension {} does not match basis dimension {}",
                self.support.dim(),
                self.basis.dim
            )));
        }
        if self.layout != LAYOUT_Y_LAST {
            return Err(ModelError::Inconsistent(format!(
                "unknown column layout `{}`",
                self.layout
            )));
        }
        Ok(())
    }
}
