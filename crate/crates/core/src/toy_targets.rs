//! Closed-form targets with exact per-term gradients.
//!
//! Two models: a one-dimensional variance posterior for mean-zero normal
//! observations (in log-standard-deviation or variance parameterization),
//! and a bivariate normal model with a conjugate Wishart prior on the
//! precision matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmldError};
use crate::linalg::spd_inverse;
use crate::vech::vech;

/// Posterior over the variance of mean-zero normal observations.
/// Term index 0 is the prior, indices 1..=n the data terms.
#[derive(Debug, Clone)]
pub struct LogVarianceTarget {
    pub y_sq: Vec<f64>,
}

impl LogVarianceTarget {
    pub fn new(y_sq: Vec<f64>) -> Self {
        assert!(y_sq.iter().all(|v| *v >= 0.0));
        LogVarianceTarget { y_sq }
    }

    /// Simulate y_i ~ Normal(0, sigma^2) and store the squares.
    pub fn simulate(n: usize, sigma: f64, seed: u64) -> Self {
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::derive_stream(seed, &[0x10]);
        let y_sq = (0..n)
            .map(|_| {
                let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                (sigma * z).powi(2)
            })
            .collect();
        LogVarianceTarget { y_sq }
    }

    pub fn n(&self) -> usize {
        self.y_sq.len()
    }

    pub fn sum_y_sq(&self) -> f64 {
        self.y_sq.iter().sum()
    }

    /// Per-term derivative in theta = log(sigma): data terms
    /// f_i'(theta) = 1 - exp(-2 theta) y_i^2, prior term
    /// f_0'(theta) = -1 + exp(2 theta).
    pub fn grad_term_log(&self, i: usize, theta: f64) -> f64 {
        if i == 0 {
            -1.0 + (2.0 * theta).exp()
        } else {
            1.0 - (-2.0 * theta).exp() * self.y_sq[i - 1]
        }
    }

    /// Negative log density in theta, up to a constant; data terms
    /// f_i = theta + exp(-2 theta) y_i^2 / 2, prior f_0 = -theta + exp(2 theta)/2.
    pub fn neg_log_density_log(&self, theta: f64) -> f64 {
        let n = self.n() as f64;
        n * theta + 0.5 * (-2.0 * theta).exp() * self.sum_y_sq() - theta
            + 0.5 * (2.0 * theta).exp()
    }

    /// Per-term derivative in v = sigma^2 (same posterior, variance
    /// parameterization): data terms f_i'(v) = 1/(2v) - y_i^2/(2v^2),
    /// prior term f_0'(v) = 1/(2v) + 1/2.
    pub fn grad_term_sigma_sq(&self, i: usize, v: f64) -> f64 {
        if i == 0 {
            0.5 / v + 0.5
        } else {
            0.5 / v - self.y_sq[i - 1] / (2.0 * v * v)
        }
    }

    /// Stationary point of the full gradient in theta = log(sigma):
    /// exp(2 theta*) = (-(n-1) + sqrt((n-1)^2 + 4 sum y^2)) / 2.
    pub fn mode_log(&self) -> f64 {
        let a = self.n() as f64 - 1.0;
        let u = 0.5 * (-a + (a * a + 4.0 * self.sum_y_sq()).sqrt());
        0.5 * u.ln()
    }
}

/// Bivariate (or general q-variate) normal observations with a Wishart
/// prior on the precision matrix Omega. Term index 0 is the prior,
/// indices 1..=n the data terms.
#[derive(Debug, Clone)]
pub struct GaussianWishartTarget {
    pub data: Vec<DVector<f64>>,
    pub prior_df: f64,
    pub prior_scale: DMatrix<f64>,
}

impl GaussianWishartTarget {
    pub fn new(data: Vec<DVector<f64>>, prior_df: f64, prior_scale: DMatrix<f64>) -> Result<Self> {
        let q = prior_scale.nrows();
        if prior_scale.ncols() != q || data.iter().any(|y| y.len() != q) {
            return Err(SmldError::Shape("inconsistent dimensions".into()));
        }
        if prior_df < q as f64 {
            return Err(SmldError::Degenerate(format!(
                "prior df {} below dimension {q}",
                prior_df
            )));
        }
        Ok(GaussianWishartTarget {
            data,
            prior_df,
            prior_scale,
        })
    }

    /// Simulate y_i ~ Normal(0, sigma_true).
    pub fn simulate(
        n: usize,
        sigma_true: &DMatrix<f64>,
        prior_df: f64,
        prior_scale: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        use rand_distr::StandardNormal;
        let q = sigma_true.nrows();
        let root = crate::linalg::matrix_sqrt(sigma_true)?;
        let mut rng = crate::rng::derive_stream(seed, &[0x11]);
        let data = (0..n)
            .map(|_| {
                let z =
                    DVector::from_fn(q, |_, _| rand::Rng::sample(&mut rng, StandardNormal));
                &root * z
            })
            .collect();
        GaussianWishartTarget::new(data, prior_df, prior_scale)
    }

    pub fn q(&self) -> usize {
        self.prior_scale.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Per-term gradient of the negative log density with respect to Omega,
    /// symmetric convention: data term -Omega^{-1}/2 + y y^T / 2, prior term
    /// -((nu0 - q - 1)/2) Omega^{-1} + prior_scale^{-1} / 2.
    pub fn grad_term(&self, i: usize, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let q = self.q() as f64;
        let inv = spd_inverse(omega)?;
        if i == 0 {
            let scale_inv = spd_inverse(&self.prior_scale)?;
            Ok(-((self.prior_df - q - 1.0) / 2.0) * inv + 0.5 * scale_inv)
        } else {
            let y = &self.data[i - 1];
            Ok(-0.5 * &inv + 0.5 * y * y.transpose())
        }
    }

    /// Per-term gradient packed as vech.
    pub fn grad_term_vech(&self, i: usize, omega: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(vech(&self.grad_term(i, omega)?))
    }

    /// Negative log density up to a constant, for finite-difference checks.
    pub fn neg_log_density(&self, omega: &DMatrix<f64>) -> Result<f64> {
        let q = self.q() as f64;
        let n = self.n() as f64;
        let chol = omega
            .clone()
            .cholesky()
            .ok_or_else(|| SmldError::Domain("omega not PD".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let scale_inv = spd_inverse(&self.prior_scale)?;
        let mut quad = 0.0;
        for y in &self.data {
            quad += (y.transpose() * omega * y)[(0, 0)];
        }
        Ok(-0.5 * (n + self.prior_df - q - 1.0) * log_det
            + 0.5 * quad
            + 0.5 * (scale_inv * omega).trace())
    }

    /// Sum of outer products of the observations.
    pub fn scatter(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut s = DMatrix::zeros(q, q);
        for y in &self.data {
            s += y * y.transpose();
        }
        s
    }
}

/// Gradient provider for the variance toy in theta = log(sigma)
/// (unconstrained, Euclidean map).
#[derive(Debug, Clone)]
pub struct LogVarianceLogOracle {
    pub target: LogVarianceTarget,
}

impl LogVarianceLogOracle {
    pub fn new(target: LogVarianceTarget) -> Self {
        LogVarianceLogOracle { target }
    }
}

impl crate::samplers::GradOracle for LogVarianceLogOracle {
    fn dim(&self) -> usize {
        1
    }
    fn n_terms(&self) -> usize {
        self.target.n()
    }
    fn grad_prior(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![
            self.target.grad_term_log(0, theta[0]),
        ]))
    }
    fn grad_term(
        &mut self,
        _iter: u64,
        i: usize,
        theta: &DVector<f64>,
    ) -> Result<crate::samplers::TermGrad> {
        Ok(crate::samplers::TermGrad {
            grad: DVector::from_vec(vec![self.target.grad_term_log(i + 1, theta[0])]),
            psi: None,
        })
    }
}

/// Gradient provider for the same posterior in v = sigma^2
/// (positive scalar, log barrier map).
#[derive(Debug, Clone)]
pub struct LogVarianceSigmaSqOracle {
    pub target: LogVarianceTarget,
}

impl LogVarianceSigmaSqOracle {
    pub fn new(target: LogVarianceTarget) -> Self {
        LogVarianceSigmaSqOracle { target }
    }
}

impl crate::samplers::GradOracle for LogVarianceSigmaSqOracle {
    fn dim(&self) -> usize {
        1
    }
    fn n_terms(&self) -> usize {
        self.target.n()
    }
    fn grad_prior(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta[0] <= 0.0 {
            return Err(SmldError::Domain("nonpositive variance".into()));
        }
        Ok(DVector::from_vec(vec![
            self.target.grad_term_sigma_sq(0, theta[0]),
        ]))
    }
    fn grad_term(
        &mut self,
        _iter: u64,
        i: usize,
        theta: &DVector<f64>,
    ) -> Result<crate::samplers::TermGrad> {
        Ok(crate::samplers::TermGrad {
            grad: DVector::from_vec(vec![self.target.grad_term_sigma_sq(i + 1, theta[0])]),
            psi: None,
        })
    }
}

/// Gradient provider for the Gaussian-Wishart toy over vech(Omega)
/// (log-det barrier map).
#[derive(Debug, Clone)]
pub struct GaussianWishartOracle {
    pub target: GaussianWishartTarget,
}

impl GaussianWishartOracle {
    pub fn new(target: GaussianWishartTarget) -> Self {
        GaussianWishartOracle { target }
    }
}

impl crate::samplers::GradOracle for GaussianWishartOracle {
    fn dim(&self) -> usize {
        crate::vech::vech_len(self.target.q())
    }
    fn n_terms(&self) -> usize {
        self.target.n()
    }
    fn grad_prior(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let omega = crate::vech::unvech(theta.as_slice(), self.target.q());
        self.target.grad_term_vech(0, &omega)
    }
    fn grad_term(
        &mut self,
        _iter: u64,
        i: usize,
        theta: &DVector<f64>,
    ) -> Result<crate::samplers::TermGrad> {
        let omega = crate::vech::unvech(theta.as_slice(), self.target.q());
        Ok(crate::samplers::TermGrad {
            grad: self.target.grad_term_vech(i + 1, &omega)?,
            psi: None,
        })
    }
    fn grad_terms(
        &mut self,
        _iter: u64,
        idx: &[usize],
        theta: &DVector<f64>,
    ) -> Result<Vec<crate::samplers::TermGrad>> {
        // Share one inverse across the batch.
        let omega = crate::vech::unvech(theta.as_slice(), self.target.q());
        let inv = spd_inverse(&omega)?;
        idx.iter()
            .map(|&i| {
                let y = &self.target.data[i];
                let g = -0.5 * &inv + 0.5 * y * y.transpose();
                Ok(crate::samplers::TermGrad {
                    grad: vech(&g),
                    psi: None,
                })
            })
            .collect()
    }
}
