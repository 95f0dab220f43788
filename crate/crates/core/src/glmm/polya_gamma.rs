//! Exact Polya-Gamma sampling.
//!
//! PG(1, c) draws use Devroye-style alternating-series rejection on the
//! tilted Jacobi density, with an exponential proposal on (t, inf) and a
//! truncated inverse-Gaussian proposal on (0, t], t = 2/pi. PG(b, c) for
//! integer b is the sum of b independent PG(1, c) draws.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::glmm::family::normal_cdf;

const T: f64 = std::f64::consts::FRAC_2_PI;
const PI: f64 = std::f64::consts::PI;

/// Coefficient a_n(x) of the alternating series for the Jacobi density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x <= 0.0 {
        0.0
    } else if x <= T {
        let c = (2.0 / (PI * x)).powf(1.5);
        c * PI * k * (-2.0 * k * k / x).exp()
    } else {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    }
}

/// Probability of proposing from the exponential tail rather than the
/// truncated inverse Gaussian, for tilt z >= 0.
fn exp_branch_prob(z: f64) -> f64 {
    let k = 0.125 * PI * PI + 0.5 * z * z;
    // p = (pi / (2K)) exp(-K t); q = 2 exp(-z) F_IG(t; mu = 1/z, lambda = 1).
    let log_base = k.ln() + k * T;
    let upper = (PI / 2.0).sqrt() * (T * z - 1.0);
    let lower = -(PI / 2.0).sqrt() * (T * z + 1.0);
    let q_over_p = (4.0 / PI)
        * ((log_base - z + normal_cdf(upper).ln()).exp()
            + (log_base + z + normal_cdf(lower).ln()).exp());
    1.0 / (1.0 + q_over_p)
}

fn sample_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>();
    -(1.0 - u).ln()
}

/// Truncated inverse Gaussian on (0, t] for small tilt (z < 1/t): rejection
/// from a transformed exponential with acceptance exp(-z^2 x / 2).
fn trunc_inv_gauss_small<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    loop {
        let e = loop {
            let e1 = sample_exp(rng);
            let e2 = sample_exp(rng);
            if e1 * e1 <= 2.0 * e2 / T {
                break e1;
            }
        };
        let x = T / (1.0 + e * T).powi(2);
        if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
            return x;
        }
    }
}

/// Truncated inverse Gaussian on (0, t] for large tilt (z >= 1/t): draw
/// unconditional IG(mu = 1/z, lambda = 1) until it lands inside.
fn trunc_inv_gauss_large<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let mu = 1.0 / z;
    loop {
        let nu: f64 = rng.sample(StandardNormal);
        let y = nu * nu;
        let muy = mu * y;
        let mut x = mu + 0.5 * mu * muy - 0.5 * mu * (4.0 * muy + muy * muy).sqrt();
        if rng.random::<f64>() > mu / (mu + x) {
            x = mu * mu / x;
        }
        if x <= T {
            return x;
        }
    }
}

/// One PG(1, c) draw.
pub fn polya_gamma_1<R: Rng + ?Sized>(rng: &mut R, c: f64) -> f64 {
    let z = 0.5 * c.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = exp_branch_prob(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            T + sample_exp(rng) / k
        } else if z < 1.0 / T {
            trunc_inv_gauss_small(rng, z)
        } else {
            trunc_inv_gauss_large(rng, z)
        };
        // Alternating series accept/reject.
        let mut s = series_coef(0, x);
        let threshold = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            let a = series_coef(n, x);
            if n % 2 == 1 {
                s -= a;
                if threshold <= s {
                    return 0.25 * x;
                }
            } else {
                s += a;
                if threshold >= s {
                    break;
                }
            }
        }
    }
}

/// PG(b, c) for integer b >= 1 as a sum of independent PG(1, c) draws.
pub fn polya_gamma_draw<R: Rng + ?Sized>(rng: &mut R, b: u32, c: f64) -> f64 {
    assert!(b >= 1, "Polya-Gamma shape must be a positive integer");
    (0..b).map(|_| polya_gamma_1(rng, c)).sum()
}

/// E[PG(b, c)] = (b / (2c)) tanh(c / 2), with the c -> 0 limit b / 4.
pub fn polya_gamma_mean(b: u32, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b as f64 / 4.0
    } else {
        (b as f64 / (2.0 * c)) * (0.5 * c).tanh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn empirical_mean(b: u32, c: f64, n: usize, seed: u64) -> f64 {
        let mut rng = derive_stream(seed, &[b as u64, c.to_bits()]);
        (0..n).map(|_| polya_gamma_draw(&mut rng, b, c)).sum::<f64>() / n as f64
    }

    #[test]
    fn mean_at_zero_tilt() {
        let m = empirical_mean(1, 0.0, 1_000_000, 71);
        assert!((m - 0.25).abs() / 0.25 < 0.005, "PG(1,0) mean {m}");
    }

    #[test]
    fn mean_at_tilt_two() {
        let expect = 0.25 * 1f64.tanh();
        let m = empirical_mean(1, 2.0, 1_000_000, 72);
        assert!((m - expect).abs() / expect < 0.005, "PG(1,2) mean {m}");
    }

    #[test]
    fn additivity_of_shape() {
        let m3 = empirical_mean(3, 1.0, 300_000, 73);
        let m1 = empirical_mean(1, 1.0, 300_000, 74);
        let rel = (m3 - 3.0 * m1).abs() / (3.0 * m1);
        assert!(rel < 0.01, "additivity error {rel}");
    }

    #[test]
    fn variance_sanity() {
        // Var[PG(1, c)] has a known closed form; check at c = 1:
        // Var = (b / (4 c^3)) (sinh(c) - c) sech^2(c / 2).
        let c: f64 = 1.0;
        let expect_var =
            (1.0 / (4.0 * c * c * c)) * (c.sinh() - c) / (0.5 * c).cosh().powi(2);
        let mut rng = derive_stream(75, &[0]);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = polya_gamma_1(&mut rng, c);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(
            (var - expect_var).abs() / expect_var < 0.02,
            "variance {var} vs {expect_var}"
        );
    }
}
