//! Response families: cumulant b, link transform h, and per-observation
//! score in the linear predictor eta. The dispersion is fixed at 1.

use statrs::function::erf::erfc;

pub const SQRT_2PI: f64 = 2.5066282746310002;

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF, clamped away from exact 0 and 1.
pub fn normal_cdf(x: f64) -> f64 {
    let p = 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    p.clamp(1e-300, 1.0 - 1e-16)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link, unit residual variance.
    GaussianLinear,
    /// Binomial counts 0..=M with logit link.
    BinomialLogit(u32),
    /// Binary response with probit link.
    BernoulliProbit,
    /// Count response with log link.
    Poisson,
}

impl Family {
    /// Cumulant b(eta).
    pub fn b(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear => 0.5 * eta * eta,
            Family::BinomialLogit(m) => *m as f64 * softplus(eta),
            Family::BernoulliProbit => -(1.0 - normal_cdf(eta)).ln(),
            Family::Poisson => eta.exp(),
        }
    }

    /// Derivative of the cumulant.
    pub fn b_prime(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear => eta,
            Family::BinomialLogit(m) => *m as f64 * sigmoid(eta),
            Family::BernoulliProbit => {
                let phi = normal_cdf(eta);
                normal_pdf(eta) / (1.0 - phi)
            }
            Family::Poisson => eta.exp(),
        }
    }

    /// Derivative of the link transform h.
    pub fn h_prime(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear | Family::BinomialLogit(_) | Family::Poisson => 1.0,
            Family::BernoulliProbit => {
                let phi = normal_cdf(eta);
                normal_pdf(eta) / (phi * (1.0 - phi))
            }
        }
    }

    /// Mean function mu(eta) = b'(eta) / h'(eta).
    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear => eta,
            Family::BinomialLogit(m) => *m as f64 * sigmoid(eta),
            Family::BernoulliProbit => normal_cdf(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Per-observation score d/d eta log p(y | eta) = y h'(eta) - b'(eta).
    pub fn score_eta(&self, y: f64, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear => y - eta,
            Family::BinomialLogit(m) => y - *m as f64 * sigmoid(eta),
            Family::BernoulliProbit => {
                let phi = normal_cdf(eta);
                normal_pdf(eta) * (y - phi) / (phi * (1.0 - phi))
            }
            Family::Poisson => y - eta.exp(),
        }
    }

    /// Log likelihood of one observation up to a constant in eta.
    pub fn log_lik(&self, y: f64, eta: f64) -> f64 {
        match self {
            Family::GaussianLinear => y * eta - 0.5 * eta * eta,
            Family::BinomialLogit(m) => y * eta - *m as f64 * softplus(eta),
            Family::BernoulliProbit => {
                let phi = normal_cdf(eta);
                y * phi.ln() + (1.0 - y) * (1.0 - phi).ln()
            }
            Family::Poisson => y * eta - eta.exp(),
        }
    }

    /// Response range check.
    pub fn valid_response(&self, y: f64) -> bool {
        match self {
            Family::GaussianLinear => y.is_finite(),
            Family::BinomialLogit(m) => {
                y.fract() == 0.0 && y >= 0.0 && y <= *m as f64
            }
            Family::BernoulliProbit => y == 0.0 || y == 1.0,
            Family::Poisson => y.fract() == 0.0 && y >= 0.0 && y.is_finite(),
        }
    }

    /// Number of binomial trials for data-augmentation purposes (logit only).
    pub fn logit_trials(&self) -> Option<u32> {
        match self {
            Family::BinomialLogit(m) => Some(*m),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use rand::Rng;

    #[test]
    fn mean_relation_all_families() {
        let mut rng = derive_stream(61, &[0]);
        let fams = [
            Family::GaussianLinear,
            Family::BinomialLogit(1),
            Family::BinomialLogit(10),
            Family::BernoulliProbit,
            Family::Poisson,
        ];
        for fam in fams {
            for _ in 0..100 {
                let eta: f64 = rng.random_range(-3.0..3.0);
                let mu = fam.b_prime(eta) / fam.h_prime(eta);
                assert!(
                    (mu - fam.mean(eta)).abs() <= 1e-8 * mu.abs().max(1.0),
                    "{fam:?} mean relation at eta {eta}: {mu} vs {}",
                    fam.mean(eta)
                );
            }
        }
    }

    #[test]
    fn score_matches_log_lik_derivative() {
        let mut rng = derive_stream(62, &[0]);
        let cases = [
            (Family::GaussianLinear, 0.7),
            (Family::BinomialLogit(5), 3.0),
            (Family::BernoulliProbit, 1.0),
            (Family::Poisson, 4.0),
        ];
        for (fam, y) in cases {
            for _ in 0..20 {
                let eta: f64 = rng.random_range(-2.5..2.5);
                let h = 1e-6;
                let fd = (fam.log_lik(y, eta + h) - fam.log_lik(y, eta - h)) / (2.0 * h);
                let s = fam.score_eta(y, eta);
                assert!(
                    (fd - s).abs() <= 1e-5 * s.abs().max(1.0),
                    "{fam:?} score mismatch at eta {eta}: {s} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn logit_score_at_zero() {
        // Single-trial logit with y = 0 at eta = 0 has score -1/2.
        let fam = Family::BinomialLogit(1);
        assert!((fam.score_eta(0.0, 0.0) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn response_validation() {
        assert!(Family::BinomialLogit(10).valid_response(10.0));
        assert!(!Family::BinomialLogit(10).valid_response(11.0));
        assert!(!Family::BernoulliProbit.valid_response(0.5));
        assert!(Family::Poisson.valid_response(7.0));
        assert!(!Family::Poisson.valid_response(-1.0));
    }
}
