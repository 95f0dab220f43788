//! Per-group samplers for the conditional law of the random effect
//! gamma_i given (y_i, theta).
//!
//! Gaussian responses admit an exact Gaussian conditional. Logit families
//! use an exact-conditional Gibbs sweep with Polya-Gamma augmentation.
//! Probit and Poisson use adaptive random-walk Metropolis with a fixed
//! inner burn-in; the step scale targets 40% acceptance and is adapted
//! during burn-in only.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmldError};
use crate::glmm::data::Group;
use crate::glmm::family::Family;
use crate::glmm::polya_gamma::polya_gamma_draw;

/// Mutable per-group inner-chain state carried across outer iterations.
#[derive(Debug, Clone)]
pub struct GroupState {
    pub gamma: DVector<f64>,
    pub rw_log_scale: f64,
    pub initialized: bool,
}

impl GroupState {
    pub fn fresh(q: usize) -> Self {
        GroupState {
            gamma: DVector::zeros(q),
            rw_log_scale: 0.0,
            initialized: false,
        }
    }
}

/// Non-fatal diagnostics from one inner run.
#[derive(Debug, Clone, Default)]
pub struct InnerReport {
    pub acceptance: Option<f64>,
    /// Set when a Metropolis acceptance rate leaves [0.1, 0.7].
    pub convergence_warning: bool,
}

fn chol_or_err(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    m.cholesky()
        .ok_or_else(|| SmldError::Domain(format!("{what}: precision not PD")))
}

/// Draw from Normal(mean, precision^{-1}) given the Cholesky factor of the
/// precision: solve L^T u = z and add the mean.
fn gaussian_from_precision(
    chol: &Cholesky<f64, Dyn>,
    mean: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let q = mean.len();
    let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = chol.l().transpose().solve_upper_triangular(&z).unwrap();
    mean + u
}

/// R draws of gamma_i given (y_i, theta). Exact and independent for the
/// Gaussian family; Markov sweeps otherwise, warm-started from `state`
/// (burn-in applies only when the state has not been initialized yet).
pub fn sample_random_effects(
    family: &Family,
    group: &Group,
    beta: &DVector<f64>,
    omega: &DMatrix<f64>,
    r: usize,
    burn_in: usize,
    state: &mut GroupState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DVector<f64>>, InnerReport)> {
    if r == 0 {
        return Err(SmldError::Degenerate("need at least one inner draw".into()));
    }
    let fixed = &group.x * beta;
    match family {
        Family::GaussianLinear => {
            // gamma | y ~ Normal((Omega + Z'Z)^{-1} Z'(y - X beta),
            //                    (Omega + Z'Z)^{-1}).
            let prec = omega + group.z.transpose() * &group.z;
            let chol = chol_or_err(prec, "gaussian conditional")?;
            let rhs = group.z.transpose() * (&group.y - &fixed);
            let mean = chol.solve(&rhs);
            let draws: Vec<DVector<f64>> = (0..r)
                .map(|_| gaussian_from_precision(&chol, &mean, rng))
                .collect();
            state.gamma = draws[r - 1].clone();
            state.initialized = true;
            Ok((draws, InnerReport::default()))
        }
        Family::BinomialLogit(m) => {
            pg_gibbs(group, &fixed, omega, *m, r, burn_in, state, rng)
        }
        Family::BernoulliProbit | Family::Poisson => {
            random_walk_mh(family, group, &fixed, omega, r, burn_in, state, rng)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pg_gibbs(
    group: &Group,
    fixed: &DVector<f64>,
    omega: &DMatrix<f64>,
    trials: u32,
    r: usize,
    burn_in: usize,
    state: &mut GroupState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DVector<f64>>, InnerReport)> {
    let q = omega.nrows();
    let ni = group.y.len();
    let mut gamma = if state.initialized {
        state.gamma.clone()
    } else {
        DVector::zeros(q)
    };
    let warm = if state.initialized { 0 } else { burn_in };
    let mut draws = Vec::with_capacity(r);
    let half_m = trials as f64 / 2.0;
    for sweep in 0..(warm + r) {
        // omega_j | gamma ~ PG(M, eta_j), then gamma | omega is Gaussian.
        let mut prec = omega.clone();
        let mut lin = DVector::zeros(q);
        for j in 0..ni {
            let zj = group.z.row(j).transpose();
            let eta = fixed[j] + (group.z.row(j) * &gamma)[(0, 0)];
            let w = polya_gamma_draw(rng, trials, eta);
            prec.syger(w, &zj, &zj, 1.0);
            let kappa = group.y[j] - half_m;
            lin.axpy(kappa - w * fixed[j], &zj, 1.0);
        }
        for a in 0..q {
            for b in 0..a {
                prec[(b, a)] = prec[(a, b)];
            }
        }
        let chol = chol_or_err(prec, "logit conditional")?;
        let mean = chol.solve(&lin);
        gamma = gaussian_from_precision(&chol, &mean, rng);
        if sweep >= warm {
            draws.push(gamma.clone());
        }
    }
    state.gamma = gamma;
    state.initialized = true;
    Ok((draws, InnerReport::default()))
}

#[allow(clippy::too_many_arguments)]
fn random_walk_mh(
    family: &Family,
    group: &Group,
    fixed: &DVector<f64>,
    omega: &DMatrix<f64>,
    r: usize,
    burn_in: usize,
    state: &mut GroupState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DVector<f64>>, InnerReport)> {
    let q = omega.nrows();
    let ni = group.y.len();
    let log_target = |gamma: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        for j in 0..ni {
            let eta = fixed[j] + (group.z.row(j) * gamma)[(0, 0)];
            ll += family.log_lik(group.y[j], eta);
        }
        ll - 0.5 * (gamma.transpose() * omega * gamma)[(0, 0)]
    };
    let mut gamma = if state.initialized {
        state.gamma.clone()
    } else {
        DVector::zeros(q)
    };
    let warm = if state.initialized { 0 } else { burn_in };
    let mut lp = log_target(&gamma);
    let mut draws = Vec::with_capacity(r);
    let mut accepted = 0usize;
    for sweep in 0..(warm + r) {
        let scale = state.rw_log_scale.exp();
        let prop = &gamma
            + scale * DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lp_prop = log_target(&prop);
        let accept = (lp_prop - lp) >= rng.random::<f64>().ln();
        if accept {
            gamma = prop;
            lp = lp_prop;
        }
        if sweep < warm {
            // Robbins-Monro adaptation toward 40% acceptance.
            let step = 1.0 / (sweep as f64 + 10.0).sqrt();
            state.rw_log_scale += step * ((accept as u8 as f64) - 0.4);
        } else {
            accepted += accept as usize;
            draws.push(gamma.clone());
        }
    }
    state.gamma = gamma;
    state.initialized = true;
    let acc_rate = accepted as f64 / r as f64;
    Ok((
        draws,
        InnerReport {
            acceptance: Some(acc_rate),
            convergence_warning: !(0.1..=0.7).contains(&acc_rate),
        },
    ))
}
