//! Datasets: an N x K matrix of finite observations, CSV ingestion, and a
//! content fingerprint used to tie model files to the data they were fit on.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,

    #[error("row length {got} does not match {expected} values (line {line})")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("could not parse `{field}` as a number (line {line}, column {column})")]
    Parse {
        line: usize,
        column: usize,
        field: String,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Immutable N x K matrix of observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_rows: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(values: Vec<f64>, n_rows: usize, dim: usize) -> Result<Self, DataError> {
        if n_rows == 0 || dim == 0 || values.len() != n_rows * dim {
            return Err(DataError::Empty);
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row: i / dim,
                    column: i % dim,
                });
            }
        }
        Ok(Self {
            values,
            n_rows,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(DataError::Empty);
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(DataError::RaggedRow {
                    line: i + 1,
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Self::new(rows.concat(), n_rows, dim)
    }

    /// Parse CSV text: one observation per row, K numeric columns, an
    /// optional header (detected by non-numeric fields in the first row).
    pub fn from_csv_str(text: &str) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());

        let mut values = Vec::new();
        let mut dim = 0usize;
        let mut n_rows = 0usize;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 1;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let mut parsed = Vec::with_capacity(record.len());
            let mut bad_field: Option<(usize, String)> = None;
            for (j, field) in record.iter().enumerate() {
                match field.parse::<f64>() {
                    Ok(v) => parsed.push(v),
                    Err(_) => {
                        bad_field = Some((j, field.to_string()));
                        break;
                    }
                }
            }
            if let Some((column, field)) = bad_field {
                // a non-numeric first row is a header; anywhere else it is an error
                if n_rows == 0 && line == 1 {
                    continue;
                }
                return Err(DataError::Parse {
                    line,
                    column: column + 1,
                    field,
                });
            }
            if n_rows == 0 {
                dim = parsed.len();
            } else if parsed.len() != dim {
                return Err(DataError::RaggedRow {
                    line,
                    expected: dim,
                    got: parsed.len(),
                });
            }
            values.extend_from_slice(&parsed);
            n_rows += 1;
        }
        Self::new(values, n_rows, dim)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// (min, max) of column `k`.
    pub fn column_range(&self, k: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in 0..self.n_rows {
            let v = self.row(row)[k];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// A new dataset keeping only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self, DataError> {
        let mut values = Vec::with_capacity(self.n_rows * columns.len());
        for row in 0..self.n_rows {
            let r = self.row(row);
            for &c in columns {
                values.push(r[c]);
            }
        }
        Self::new(values, self.n_rows, columns.len())
    }

    /// SHA-256 over the dimensions and the exact bit patterns of the values.
    pub fn fingerprint(&self) -> DataFingerprint {
        let mut hasher = Sha256::new();
        hasher.update((self.n_rows as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for v in &self.values {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        DataFingerprint {
            n_rows: self.n_rows as u64,
            dim: self.dim as u64,
            sha256: hex,
        }
    }
}

/// Content identity of a dataset: shape plus a hash of the value bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub n_rows: u64,
    pub dim: u64,
    pub sha256: String,
}
