//! Dense symmetric-matrix helpers shared by the samplers and the
//! posterior-variance correction.
//!
//! All matrix square roots are symmetric, computed by eigendecomposition
//! rather than Cholesky, so that sqrt(A) = sqrt(A)^T everywhere.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmldError};

/// Relative eigenvalue floor used when inverting SPD matrices.
pub const EIG_FLOOR: f64 = 1e-14;

fn sym_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let es = m.clone().symmetric_eigen();
    (es.eigenvectors, es.eigenvalues)
}

/// Symmetric square root of a symmetric PSD matrix.
pub fn matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lam) = sym_eigen(m);
    let max = lam.amax();
    let mut d = lam.clone();
    for v in d.iter_mut() {
        if *v < -1e-10 * max.max(1.0) {
            return Err(SmldError::Domain(format!(
                "matrix_sqrt: negative eigenvalue {v}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Symmetric inverse square root of an SPD matrix: S with S*M*S = I.
pub fn matrix_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lam) = sym_eigen(m);
    let max = lam.amax();
    let mut d = lam.clone();
    for v in d.iter_mut() {
        if *v <= EIG_FLOOR * max {
            return Err(SmldError::Singularity(format!(
                "matrix_inv_sqrt: eigenvalue {v} below floor"
            )));
        }
        *v = 1.0 / v.sqrt();
    }
    Ok(&q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Inverse of an SPD matrix via eigendecomposition with floor check.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lam) = sym_eigen(m);
    let max = lam.amax();
    let mut d = lam.clone();
    for v in d.iter_mut() {
        if *v <= EIG_FLOOR * max {
            return Err(SmldError::Singularity(format!(
                "spd_inverse: eigenvalue {v} below floor"
            )));
        }
        *v = 1.0 / *v;
    }
    Ok(&q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Smallest eigenvalue and trace of a symmetric matrix.
pub fn min_eig_trace(m: &DMatrix<f64>) -> (f64, f64) {
    let es = m.clone().symmetric_eigen();
    (es.eigenvalues.min(), m.trace())
}

/// Positive definiteness with the crate-wide relative threshold:
/// min eigenvalue > 1e-12 * trace.
pub fn is_pd(m: &DMatrix<f64>) -> bool {
    let (min, tr) = min_eig_trace(m);
    tr > 0.0 && min > 1e-12 * tr && min.is_finite()
}

/// Random SPD matrix A = B B^T + 0.1 I with standard normal B entries.
pub fn random_spd<R: Rng>(q: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(q, q) * 0.1
}

/// Sample mean and unbiased covariance of row vectors.
pub fn mean_cov(rows: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    assert!(rows.len() >= 2, "need at least two rows for a covariance");
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = r - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov /= n - 1.0;
    (mean, cov)
}
