//! Full-batch Gibbs baseline for mixed models with conjugate blocks.
//!
//! Logit families use Polya-Gamma augmentation, which makes every block
//! (augmentation weights, random effects, fixed effects, precision)
//! an exact conditional draw. Gaussian responses need no augmentation.
//! The sweep output is the flat parameter trace (beta, vech Omega), the
//! same layout the gradient-based samplers use, so summaries compare
//! directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Result, SmldError};
use crate::glmm::family::Family;
use crate::glmm::polya_gamma::polya_gamma_draw;
use crate::glmm::GlmmModel;
use crate::rng::derive_stream;

/// Wishart(df, scale) draw by the Bartlett decomposition.
pub fn wishart_draw(df: f64, scale: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let q = scale.nrows();
    if df <= (q - 1) as f64 {
        return Err(SmldError::Degenerate(format!(
            "Wishart df {df} too small for dimension {q}"
        )));
    }
    let l = scale
        .clone()
        .cholesky()
        .ok_or_else(|| SmldError::Domain("Wishart scale not PD".into()))?
        .l();
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi_sq = Gamma::new(0.5 * (df - i as f64), 2.0)
            .map_err(|e| SmldError::Degenerate(format!("chi-square shape: {e}")))?
            .sample(rng);
        a[(i, i)] = chi_sq.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    Ok(&la * la.transpose())
}

fn gaussian_from_precision(
    prec: DMatrix<f64>,
    lin: &DVector<f64>,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<DVector<f64>> {
    let chol = prec
        .cholesky()
        .ok_or_else(|| SmldError::Domain(format!("{what}: precision not PD")))?;
    let mean = chol.solve(lin);
    let z = DVector::from_fn(lin.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = chol.l().transpose().solve_upper_triangular(&z).unwrap();
    Ok(mean + u)
}

/// One complete trace of `sweeps` Gibbs iterations. Each stored row is the
/// flat parameter (beta, vech Omega) after a full sweep over all blocks.
pub fn run_gibbs(model: &GlmmModel, sweeps: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    run_gibbs_budgeted(model, sweeps, seed, None)
}

/// As [`run_gibbs`], stopping after `max_seconds` of wall time if set;
/// the truncated trace keeps every completed sweep.
pub fn run_gibbs_budgeted(
    model: &GlmmModel,
    sweeps: usize,
    seed: u64,
    max_seconds: Option<f64>,
) -> Result<Vec<DVector<f64>>> {
    match model.family {
        Family::GaussianLinear | Family::BinomialLogit(_) => {}
        _ => {
            return Err(SmldError::Degenerate(
                "Gibbs baseline supports Gaussian and logit families only".into(),
            ))
        }
    }
    let p = model.p();
    let q = model.q();
    let n = model.n_groups();
    let mut rng = derive_stream(seed, &[0x61]);
    let mut beta = DVector::zeros(p);
    let mut omega = DMatrix::identity(q, q);
    let mut gammas = vec![DVector::zeros(q); n];
    let scale_inv = crate::linalg::spd_inverse(&model.priors.v_scale)?;
    let trials = model.family.logit_trials();
    let mut trace = Vec::with_capacity(sweeps);
    let started = std::time::Instant::now();
    for sweep in 0..sweeps {
        if let Some(budget) = max_seconds {
            if sweep > 0 && started.elapsed().as_secs_f64() > budget {
                break;
            }
        }
        // Per-observation augmentation weights and pseudo-responses for the
        // logit case; Gaussian responses use unit weights on y directly.
        let mut beta_prec = DMatrix::identity(p, p) / model.priors.tau_sq;
        let mut beta_lin = DVector::zeros(p);
        for (i, group) in model.data.groups.iter().enumerate() {
            let ni = group.y.len();
            let mut g_prec = omega.clone();
            let mut g_lin = DVector::zeros(q);
            let mut weights = DVector::zeros(ni);
            let mut kappa = DVector::zeros(ni);
            for j in 0..ni {
                let xj = group.x.row(j).transpose();
                let zj = group.z.row(j).transpose();
                let eta = xj.dot(&beta) + zj.dot(&gammas[i]);
                let (w, k) = match trials {
                    Some(m) => (
                        polya_gamma_draw(&mut rng, m, eta),
                        group.y[j] - m as f64 / 2.0,
                    ),
                    None => (1.0, group.y[j]),
                };
                weights[j] = w;
                kappa[j] = k;
                g_prec.syger(w, &zj, &zj, 1.0);
                g_lin.axpy(k - w * xj.dot(&beta), &zj, 1.0);
            }
            for a in 0..q {
                for b in 0..a {
                    g_prec[(b, a)] = g_prec[(a, b)];
                }
            }
            gammas[i] = gaussian_from_precision(g_prec, &g_lin, &mut rng, "random effect")?;
            for j in 0..ni {
                let xj = group.x.row(j).transpose();
                let zj = group.z.row(j).transpose();
                beta_prec.syger(weights[j], &xj, &xj, 1.0);
                beta_lin.axpy(kappa[j] - weights[j] * zj.dot(&gammas[i]), &xj, 1.0);
            }
        }
        for a in 0..p {
            for b in 0..a {
                beta_prec[(b, a)] = beta_prec[(a, b)];
            }
        }
        beta = gaussian_from_precision(beta_prec, &beta_lin, &mut rng, "fixed effects")?;
        // Precision block: Omega | gamma ~ Wishart(nu + n, (V^{-1} + S)^{-1})
        // with S the random-effect scatter.
        let mut scatter = DMatrix::zeros(q, q);
        for g in &gammas {
            scatter.syger(1.0, g, g, 1.0);
        }
        for a in 0..q {
            for b in 0..a {
                scatter[(b, a)] = scatter[(a, b)];
            }
        }
        let post_scale = crate::linalg::spd_inverse(&(&scale_inv + scatter))?;
        omega = wishart_draw(model.priors.nu + n as f64, &post_scale, &mut rng)?;
        trace.push(model.pack(&beta, &omega));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::data::simulate_glmm;
    use crate::glmm::Priors;
    use crate::linalg::mean_cov;

    #[test]
    fn wishart_draw_moments() {
        // Wishart(df, S) mean is df * S; entry variance of W_aa is
        // 2 df S_aa^2.
        let scale = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let df = 7.0;
        let mut rng = derive_stream(91, &[0]);
        let n = 200_000;
        let mut mean = DMatrix::zeros(2, 2);
        let mut sq00 = 0.0;
        for _ in 0..n {
            let w = wishart_draw(df, &scale, &mut rng).unwrap();
            sq00 += w[(0, 0)] * w[(0, 0)];
            mean += w;
        }
        mean /= n as f64;
        let expect = df * &scale;
        let rel = (&mean - &expect).norm() / expect.norm();
        assert!(rel < 0.01, "Wishart mean error {rel}");
        let var00 = sq00 / n as f64 - mean[(0, 0)] * mean[(0, 0)];
        let expect_var = 2.0 * df * scale[(0, 0)] * scale[(0, 0)];
        assert!(
            (var00 - expect_var).abs() / expect_var < 0.03,
            "Wishart variance {var00} vs {expect_var}"
        );
    }

    #[test]
    fn gaussian_gibbs_recovers_truth() {
        // Moderate Gaussian mixed model: posterior means should land near
        // the generating values with plenty of groups.
        let beta_true = DVector::from_vec(vec![1.0, -0.5]);
        let sigma_true = DMatrix::from_element(1, 1, 0.5);
        let data = simulate_glmm(&Family::GaussianLinear, 400, 6, &beta_true, &sigma_true, 92)
            .unwrap();
        let model = GlmmModel::new(
            Family::GaussianLinear,
            data,
            Priors {
                tau_sq: 100.0,
                nu: 2.0,
                v_scale: DMatrix::identity(1, 1),
            },
        )
        .unwrap();
        let trace = run_gibbs(&model, 2_000, 93).unwrap();
        let kept: Vec<_> = trace[500..].to_vec();
        let (mean, _) = mean_cov(&kept);
        assert!((mean[0] - 1.0).abs() < 0.1, "beta0 mean {}", mean[0]);
        assert!((mean[1] + 0.5).abs() < 0.1, "beta1 mean {}", mean[1]);
        // Omega = 1/Sigma = 2; allow sampling noise around the posterior.
        assert!((mean[2] - 2.0).abs() < 0.5, "omega mean {}", mean[2]);
    }

    #[test]
    fn logit_gibbs_recovers_truth() {
        let beta_true = DVector::from_vec(vec![0.8, -0.8]);
        let sigma_true = DMatrix::from_element(1, 1, 0.5);
        let data = simulate_glmm(
            &Family::BinomialLogit(5),
            300,
            8,
            &beta_true,
            &sigma_true,
            94,
        )
        .unwrap();
        let model = GlmmModel::new(
            Family::BinomialLogit(5),
            data,
            Priors {
                tau_sq: 100.0,
                nu: 2.0,
                v_scale: DMatrix::identity(1, 1),
            },
        )
        .unwrap();
        let trace = run_gibbs(&model, 1_500, 95).unwrap();
        let kept: Vec<_> = trace[500..].to_vec();
        let (mean, _) = mean_cov(&kept);
        assert!((mean[0] - 0.8).abs() < 0.15, "beta0 mean {}", mean[0]);
        assert!((mean[1] + 0.8).abs() < 0.15, "beta1 mean {}", mean[1]);
        assert!((mean[2] - 2.0).abs() < 0.7, "omega mean {}", mean[2]);
    }

    #[test]
    fn unsupported_family_rejected() {
        let data = simulate_glmm(
            &Family::Poisson,
            5,
            4,
            &DVector::from_vec(vec![0.1, 0.1]),
            &DMatrix::from_element(1, 1, 0.5),
            96,
        )
        .unwrap();
        let model = GlmmModel::new(
            Family::Poisson,
            data,
            Priors {
                tau_sq: 100.0,
                nu: 2.0,
                v_scale: DMatrix::identity(1, 1),
            },
        )
        .unwrap();
        assert!(run_gibbs(&model, 10, 97).is_err());
    }
}
