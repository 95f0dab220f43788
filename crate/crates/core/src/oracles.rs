//! Independent ground-truth engines used by tests and validation runs:
//! finite-difference gradients, conjugate posterior moments, one-dimensional
//! quadrature, and (in [`gibbs`]) a full-batch data-augmentation Gibbs
//! baseline for logit mixed models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmldError};
use crate::linalg::spd_inverse;
use crate::toy_targets::{GaussianWishartTarget, LogVarianceTarget};

pub mod gibbs;

/// Central finite differences with per-coordinate step h * (1 + |theta_j|).
pub fn finite_diff_grad<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    theta: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let d = theta.len();
    let mut grad = DVector::zeros(d);
    for j in 0..d {
        let step = h * (1.0 + theta[j].abs());
        let mut up = theta.clone();
        up[j] += step;
        let mut dn = theta.clone();
        dn[j] -= step;
        grad[j] = (f(&up) - f(&dn)) / (2.0 * step);
    }
    grad
}

/// Exact posterior of the Gaussian-Wishart toy: the precision posterior is
/// Wishart(nu0 + n, (prior_scale^{-1} + sum y y^T)^{-1}).
#[derive(Debug, Clone)]
pub struct ConjugatePosterior {
    pub df: f64,
    pub scale: DMatrix<f64>,
}

impl ConjugatePosterior {
    pub fn from_target(target: &GaussianWishartTarget) -> Result<Self> {
        let scale_inv = spd_inverse(&target.prior_scale)? + target.scatter();
        Ok(ConjugatePosterior {
            df: target.prior_df + target.n() as f64,
            scale: spd_inverse(&scale_inv)?,
        })
    }
}

/// Per-entry posterior mean and variance of the covariance matrix
/// Sigma = Omega^{-1} under the conjugate Wishart posterior on Omega;
/// Sigma is then inverse-Wishart with the same df and inverse scale.
#[derive(Debug, Clone)]
pub struct SigmaMoments {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

pub fn wishart_posterior_moments(target: &GaussianWishartTarget) -> Result<SigmaMoments> {
    let post = ConjugatePosterior::from_target(target)?;
    let q = target.q() as f64;
    if post.df <= q + 3.0 {
        return Err(SmldError::Degenerate(format!(
            "posterior df {} too small for entry variances (need > q + 3)",
            post.df
        )));
    }
    // Inverse-Wishart(df, Psi) with Psi the inverse of the Wishart scale.
    let psi = spd_inverse(&post.scale)?;
    let d = post.df;
    let mean = &psi / (d - q - 1.0);
    let qd = psi.nrows();
    let mut var = DMatrix::zeros(qd, qd);
    let denom = (d - q) * (d - q - 1.0) * (d - q - 1.0) * (d - q - 3.0);
    for i in 0..qd {
        for j in 0..qd {
            var[(i, j)] = ((d - q + 1.0) * psi[(i, j)] * psi[(i, j)]
                + (d - q - 1.0) * psi[(i, i)] * psi[(j, j)])
                / denom;
        }
    }
    Ok(SigmaMoments { mean, var })
}

/// Moments of the one-dimensional variance posterior by adaptive quadrature
/// over theta = log(sigma). `g` is the functional whose posterior mean is
/// requested (e.g. theta itself, or exp(2 theta) for the variance scale).
pub fn quadrature_posterior_1d<G: Fn(f64) -> f64>(
    target: &LogVarianceTarget,
    g: G,
) -> f64 {
    let (num, den) = quadrature_pair(target, &g);
    num / den
}

/// Posterior mean and variance of g(theta) by quadrature.
pub fn quadrature_mean_var<G: Fn(f64) -> f64 + Copy>(
    target: &LogVarianceTarget,
    g: G,
) -> (f64, f64) {
    let mean = quadrature_posterior_1d(target, g);
    let second = quadrature_posterior_1d(target, |t| {
        let v = g(t) - mean;
        v * v
    });
    (mean, second)
}

fn quadrature_pair<G: Fn(f64) -> f64>(target: &LogVarianceTarget, g: &G) -> (f64, f64) {
    // Center at the mode; Laplace width from the local second derivative.
    let mode = target.mode_log();
    let h = 1e-5;
    let f = |t: f64| target.neg_log_density_log(t);
    let curv = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h);
    let width = (1.0 / curv.max(1e-12)).sqrt();
    let f0 = f(mode);
    let mut lo = mode - 10.0 * width;
    let mut hi = mode + 10.0 * width;
    // Expand until the endpoints carry negligible mass.
    while (f0 - f(lo)).exp() > 1e-16 {
        lo -= 5.0 * width;
    }
    while (f0 - f(hi)).exp() > 1e-16 {
        hi += 5.0 * width;
    }
    let integrate = |m: usize| -> (f64, f64) {
        // Composite Simpson with m (even) intervals.
        let dt = (hi - lo) / m as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..=m {
            let t = lo + k as f64 * dt;
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let p = (f0 - f(t)).exp();
            num += w * p * g(t);
            den += w * p;
        }
        (num * dt / 3.0, den * dt / 3.0)
    };
    let mut m = 512;
    let (mut num, mut den) = integrate(m);
    loop {
        m *= 2;
        let (n2, d2) = integrate(m);
        let stable = (n2 / d2 - num / den).abs() <= 1e-10 * (n2 / d2).abs().max(1e-12);
        num = n2;
        den = d2;
        if stable || m >= 1 << 16 {
            break;
        }
    }
    (num, den)
}
