//! Simplex equiangular tight frames used as the fixed style classifier.
//!
//! A simplex ETF is `K` unit vectors in `R^P` whose pairwise inner products
//! all equal `-1/(K-1)`: the largest equal margin `K` directions can have.
//! It is built as `sqrt(K/(K-1)) * U * (I - 11^T / K)` where `U` is a
//! `P x K` matrix with orthonormal columns. The frame spans only `K - 1`
//! dimensions, so `P = K - 1` is also accepted; there the centred simplex is
//! written in Helmert coordinates and then rotated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, dot, norm, Matrix};
use crate::rng::{gaussian_vec, seeded, streams};

#[derive(Debug, Error, PartialEq)]
pub enum EtfError {
    #[error("an ETF needs at least two templates, got k={0}")]
    TooFewTemplates(usize),
    #[error("k={k} templates do not fit in p={p} dimensions")]
    OverComplete { k: usize, p: usize },
    #[error("template shape mismatch: {0}")]
    Shape(String),
    #[error("orthonormalization failed at column {0}")]
    RankDeficient(usize),
}

/// `K` unit templates in the `P`-dimensional joint space.
///
/// Stored one template per row of a `K x P` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtfTemplate {
    columns: Matrix,
    seed: u64,
}

impl EtfTemplate {
    /// Wraps arbitrary templates without checking the ETF invariants. Use
    /// [`verify_etf`] to measure them.
    pub fn from_columns(columns: Matrix, seed: u64) -> Result<Self, EtfError> {
        if columns.rows() < 1 || columns.cols() < 1 {
            return Err(EtfError::Shape(format!(
                "{}x{} template matrix",
                columns.rows(),
                columns.cols()
            )));
        }
        Ok(Self { columns, seed })
    }

    pub fn k(&self) -> usize {
        self.columns.rows()
    }

    pub fn p(&self) -> usize {
        self.columns.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn column(&self, i: usize) -> &[f64] {
        self.columns.row(i)
    }

    /// `K x P` matrix, one template per row.
    pub fn matrix(&self) -> &Matrix {
        &self.columns
    }

    /// `template_j . feature` for every `j`.
    pub fn scores(&self, feature: &[f64]) -> Vec<f64> {
        self.columns.matvec(feature)
    }
}

/// Builds a seeded simplex ETF with `k` templates in `p` dimensions.
pub fn build_etf(k: usize, p: usize, seed: u64) -> Result<EtfTemplate, EtfError> {
    if k < 2 {
        return Err(EtfError::TooFewTemplates(k));
    }
    if k > p + 1 {
        return Err(EtfError::OverComplete { k, p });
    }
    if k == p + 1 {
        return Ok(tight_simplex(k, seed));
    }

    let basis = partial_orthogonal(k, p, seed)?;

    // Centre the orthonormal columns, then rescale to unit norm.
    let mut mean = vec![0.0; p];
    for u in &basis {
        axpy(1.0 / k as f64, u, &mut mean);
    }
    let scale = (k as f64 / (k as f64 - 1.0)).sqrt();
    let mut data = Vec::with_capacity(k * p);
    for u in &basis {
        data.extend(u.iter().zip(&mean).map(|(a, m)| scale * (a - m)));
    }
    Ok(EtfTemplate {
        columns: Matrix::from_vec(k, p, data),
        seed,
    })
}

/// `k` templates in exactly `k - 1` dimensions: rows of the Helmert basis of
/// `1^⊥`, scaled and rotated by a seeded orthogonal matrix.
fn tight_simplex(k: usize, seed: u64) -> EtfTemplate {
    let p = k - 1;
    let scale = (k as f64 / (k as f64 - 1.0)).sqrt();
    // helmert[i][j]: coordinate of e_i - 1/k along the j-th Helmert vector.
    let helmert = |i: usize, j: usize| -> f64 {
        let jj = (j + 1) as f64;
        let denom = (jj * (jj + 1.0)).sqrt();
        if i <= j {
            1.0 / denom
        } else if i == j + 1 {
            -jj / denom
        } else {
            0.0
        }
    };
    let rotation = partial_orthogonal(p, p, seed).expect("square Gaussian draw is full rank");
    let mut data = Vec::with_capacity(k * p);
    for i in 0..k {
        let mut v = vec![0.0; p];
        for (j, r) in rotation.iter().enumerate() {
            axpy(scale * helmert(i, j), r, &mut v);
        }
        data.extend(v);
    }
    EtfTemplate {
        columns: Matrix::from_vec(k, p, data),
        seed,
    }
}

/// `k` orthonormal vectors in `R^p` from a seeded Gaussian draw, via modified
/// Gram-Schmidt with one re-orthogonalization pass.
fn partial_orthogonal(k: usize, p: usize, seed: u64) -> Result<Vec<Vec<f64>>, EtfError> {
    let mut rng = seeded(seed, streams::ETF_ROTATION);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for col in 0..k {
        let mut v = gaussian_vec(&mut rng, p, 1.0);
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &v);
                axpy(-proj, q, &mut v);
            }
        }
        let n = norm(&v);
        if !(n > 1e-10) {
            return Err(EtfError::RankDeficient(col));
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// Worst-case deviations of a template set from the simplex ETF geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtfReport {
    pub max_norm_deviation: f64,
    pub max_offdiag_deviation: f64,
    pub column_sum_norm: f64,
    pub tolerance: f64,
    pub passes: bool,
}

pub fn verify_etf(template: &EtfTemplate, tolerance: f64) -> EtfReport {
    let k = template.k();
    let target = if k > 1 { -1.0 / (k as f64 - 1.0) } else { 0.0 };

    let norms: Vec<f64> = (0..k).map(|i| norm(template.column(i))).collect();
    let max_norm_deviation = norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);

    let mut max_offdiag_deviation: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let denom = norms[i] * norms[j];
            let cos = if denom > 0.0 {
                dot(template.column(i), template.column(j)) / denom
            } else {
                0.0
            };
            max_offdiag_deviation = max_offdiag_deviation.max((cos - target).abs());
        }
    }

    let mut sum = vec![0.0; template.p()];
    for i in 0..k {
        axpy(1.0, template.column(i), &mut sum);
    }
    let column_sum_norm = norm(&sum);

    let passes = max_norm_deviation <= tolerance
        && max_offdiag_deviation <= tolerance
        && column_sum_norm <= tolerance;
    EtfReport {
        max_norm_deviation,
        max_offdiag_deviation,
        column_sum_norm,
        tolerance,
        passes,
    }
}
