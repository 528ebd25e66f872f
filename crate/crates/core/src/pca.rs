//! Principal-component compression of corresponded shapes.
//!
//! Sample dimension far exceeds sample count (10083 coordinates vs ~100
//! scans), so the fit goes through the n×n Gram matrix instead of the d×d
//! covariance. Eigenvalues use the 1/n normalisation, which makes the mean
//! squared reconstruction error over the training set equal the sum of the
//! discarded eigenvalues exactly.

use crate::io_bin::{self, PayloadKind};
use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite values in input data")]
    NonFinite,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// What kind of shape vectors a model was fitted on. Purely a bookkeeping
/// tag so scan, socket and adaptation models cannot be mixed up on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PcaKind {
    Scan,
    Socket,
    Adaptation,
}

impl PcaKind {
    fn code(self) -> u8 {
        match self {
            Self::Scan => 1,
            Self::Socket => 2,
            Self::Adaptation => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Scan),
            2 => Some(Self::Socket),
            3 => Some(Self::Adaptation),
            _ => None,
        }
    }
}

/// A fitted PCA basis: mean shape plus orthonormal components, ordered by
/// decreasing explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    kind: PcaKind,
    threshold: f64,
    mean: DVector<f64>,
    /// k×d, orthonormal rows.
    components: DMatrix<f64>,
    /// Explained variance per kept component (1/n convention), descending.
    eigenvalues: Vec<f64>,
    /// Total variance of the training data (sum of all eigenvalues).
    total_variance: f64,
}

impl PcaModel {
    /// Fits a basis on `data` (one sample per row), keeping the smallest
    /// number of components whose cumulative explained-variance ratio
    /// reaches `threshold`.
    pub fn fit(data: &DMatrix<f64>, threshold: f64, kind: PcaKind) -> Result<Self, PcaError> {
        let n = data.nrows();
        let d = data.ncols();
        if n < 2 {
            return Err(PcaError::TooFewSamples(n));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(PcaError::BadThreshold(threshold));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PcaError::NonFinite);
        }

        let mean = data.row_mean().transpose();
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }

        let gram = &centered * centered.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let largest = eig.eigenvalues[order[0]].max(0.0);
        let cutoff = largest * 1e-12;
        let total_variance: f64 = eig.eigenvalues.iter().map(|&m| m.max(0.0)).sum::<f64>() / n as f64;

        let mut kept_eigen = Vec::new();
        let mut kept_cols = Vec::new();
        let mut cumulative = 0.0;
        for &i in &order {
            let mu = eig.eigenvalues[i];
            if mu <= cutoff {
                break;
            }
            kept_eigen.push(mu / n as f64);
            kept_cols.push(i);
            cumulative += mu / n as f64;
            if total_variance > 0.0 && cumulative / total_variance >= threshold - 1e-12 {
                break;
            }
        }

        let k = kept_cols.len();
        let mut components = DMatrix::zeros(k, d);
        for (row, (&col, &lambda)) in kept_cols.iter().zip(&kept_eigen).enumerate() {
            // Component = Xᵀu / ‖Xᵀu‖; the norm is √(n·λ) up to round-off.
            let u = eig.eigenvectors.column(col);
            let v = centered.transpose() * u;
            let norm = v.norm();
            debug_assert!(norm > 0.0 && lambda > 0.0);
            let mut comp = v / norm;
            // Sign convention: the entry with the largest magnitude is
            // positive, so refits produce identical bases.
            let mut max_idx = 0;
            let mut max_abs = 0.0;
            for (j, &c) in comp.iter().enumerate() {
                if c.abs() > max_abs {
                    max_abs = c.abs();
                    max_idx = j;
                }
            }
            if comp[max_idx] < 0.0 {
                comp = -comp;
            }
            components.row_mut(row).copy_from(&comp.transpose());
        }

        Ok(Self {
            kind,
            threshold,
            mean,
            components,
            eigenvalues: kept_eigen,
            total_variance,
        })
    }

    pub fn kind(&self) -> PcaKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Input dimension d.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of kept components k.
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Kept principal directions, one per row (k×d, orthonormal).
    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    /// Explained variance per kept component, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Cumulative explained-variance ratio of the kept components.
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// Projects a shape vector onto the component basis.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        if x.len() != self.dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let centered = DVector::from_column_slice(x) - &self.mean;
        Ok((&self.components * centered).iter().copied().collect())
    }

    /// Reconstructs a shape vector from component coefficients.
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>, PcaError> {
        if coeffs.len() != self.n_components() {
            return Err(PcaError::DimensionMismatch {
                expected: self.n_components(),
                got: coeffs.len(),
            });
        }
        let c = DVector::from_column_slice(coeffs);
        let x = &self.mean + self.components.transpose() * c;
        Ok(x.iter().copied().collect())
    }

    /// Projects every row of `data`, returning an n×k matrix.
    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        if data.ncols() != self.dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim(),
                got: data.ncols(),
            });
        }
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    /// Mean over rows of the squared reconstruction error ‖x − x̂‖².
    pub fn reconstruction_mse(&self, data: &DMatrix<f64>) -> Result<f64, PcaError> {
        if data.ncols() != self.dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim(),
                got: data.ncols(),
            });
        }
        let mut total = 0.0;
        for row in data.row_iter() {
            let x: Vec<f64> = row.iter().copied().collect();
            let rec = self.inverse(&self.transform(&x)?)?;
            total += x
                .iter()
                .zip(&rec)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / data.nrows() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), PcaError> {
        let mut w = BufWriter::new(File::create(path)?);
        io_bin::write_header(&mut w, PayloadKind::Pca)?;
        io_bin::write_u8(&mut w, self.kind.code())?;
        io_bin::write_f64(&mut w, self.threshold)?;
        io_bin::write_u64(&mut w, self.dim() as u64)?;
        io_bin::write_u64(&mut w, self.n_components() as u64)?;
        io_bin::write_f64(&mut w, self.total_variance)?;
        io_bin::write_f64_slice(&mut w, self.mean.as_slice())?;
        io_bin::write_f64_slice(&mut w, &self.eigenvalues)?;
        for row in self.components.row_iter() {
            for &v in row.iter() {
                io_bin::write_f64(&mut w, v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PcaError> {
        let mut r = BufReader::new(File::open(path)?);
        io_bin::read_header(&mut r, PayloadKind::Pca)?;
        let kind = PcaKind::from_code(io_bin::read_u8(&mut r)?).ok_or_else(|| {
            PcaError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "unknown PCA kind",
            ))
        })?;
        let threshold = io_bin::read_f64(&mut r)?;
        let d = io_bin::read_u64(&mut r)? as usize;
        let k = io_bin::read_u64(&mut r)? as usize;
        let total_variance = io_bin::read_f64(&mut r)?;
        let mean = DVector::from_vec(io_bin::read_f64_vec(&mut r)?);
        let eigenvalues = io_bin::read_f64_vec(&mut r)?;
        if mean.len() != d || eigenvalues.len() != k {
            return Err(PcaError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "inconsistent PCA dimensions",
            )));
        }
        let mut components = DMatrix::zeros(k, d);
        for i in 0..k {
            for j in 0..d {
                components[(i, j)] = io_bin::read_f64(&mut r)?;
            }
        }
        Ok(Self {
            kind,
            threshold,
            mean,
            components,
            eigenvalues,
            total_variance,
        })
    }
}
