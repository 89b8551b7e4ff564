//! Fréchet Audio Distance between Gaussian fits of embedding matrices.
//!
//! Embeddings arrive in EMB1 files (little-endian): magic `EMB1`, `u32` dim,
//! `u32` count, then `count * dim` `f32` values row-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// Relative scale of the ridge added to every covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Divisor used for the sample covariance, `count - 1`.
pub const COVARIANCE_DIVISOR: &str = "n-1";

const SYMMETRY_TOL: f64 = 1e-9;
const NEGATIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dim must be positive".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Format(format!(
                "{} values do not form whole rows of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite entry at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("ragged embedding rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(EMB1_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "EMB1 header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != EMB1_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if dim == 0 || count == 0 {
            return Err(Error::Format(format!("dim {dim} and count {count} must both be positive")));
        }
        let expected = (dim as u64 * count as u64 * 4) + HEADER_LEN as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Format(format!(
                "dim {dim} x count {count} needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(dim, data)
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and unbiased covariance plus a ridge of
/// `1e-6 · max(mean diagonal, 1e-12)`.
pub fn fit_gaussian(e: &EmbeddingMatrix) -> GaussianStats {
    let (dim, count) = (e.dim(), e.count());
    let mut mean = DVector::<f64>::zeros(dim);
    for row in e.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean /= count as f64;

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    if count >= 2 {
        let mut centered = vec![0.0; dim];
        for row in e.rows() {
            for ((c, &v), m) in centered.iter_mut().zip(row).zip(mean.iter()) {
                *c = v as f64 - m;
            }
            for j in 0..dim {
                let cj = centered[j];
                for i in j..dim {
                    cov[(i, j)] += centered[i] * cj;
                }
            }
        }
        let divisor = (count - 1) as f64;
        for j in 0..dim {
            for i in j..dim {
                let v = cov[(i, j)] / divisor;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    let ridge = COVARIANCE_RIDGE * (cov.trace() / dim as f64).max(1e-12);
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    GaussianStats { mean, cov }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Parameter(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for j in 0..m.ncols() {
        for i in j + 1..m.nrows() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Parameter(format!(
                    "matrix asymmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

fn eigen_psd(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

/// Principal square root of a symmetric PSD matrix, negative eigenvalues
/// clipped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = eigen_psd(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    let out = &scaled * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
///
/// The trace of the inner root equals the sum of singular values of
/// `Σa^½ Σb^½`, which avoids taking roots of squared small eigenvalues.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Parameter(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cross = sqrtm_psd(&a.cov)? * sqrtm_psd(&b.cov)?;
    let trace_root: f64 = cross.singular_values().iter().sum();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
    if d >= 0.0 {
        Ok(d)
    } else if d > -NEGATIVE_TOL {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("Fréchet distance evaluated to {d:e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FadScore {
    pub distance: f64,
    /// `-distance`, so that larger is better like the dB metrics.
    pub inverted: f64,
}

pub fn fad_from_embeddings(reference: &EmbeddingMatrix, estimate: &EmbeddingMatrix) -> Result<FadScore> {
    if reference.dim() != estimate.dim() {
        return Err(Error::Parameter(format!(
            "embedding dims differ: {} vs {}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let distance = frechet_distance(&fit_gaussian(reference), &fit_gaussian(estimate))?;
    Ok(FadScore {
        distance,
        inverted: -distance,
    })
}

pub fn fad_score(reference_path: impl AsRef<Path>, estimate_path: impl AsRef<Path>) -> Result<FadScore> {
    let reference = read_embeddings(reference_path)?;
    let estimate = read_embeddings(estimate_path)?;
    fad_from_embeddings(&reference, &estimate)
}
