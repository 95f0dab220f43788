//! Generalized linear mixed models: grouped data, priors, joint-density
//! gradients, and the Fisher-identity stochastic gradient with its Monte
//! Carlo covariance estimators.
//!
//! The parameter vector is theta = (beta, vech(Omega)) with Omega the
//! random-effect precision matrix. The marginal gradient of group i,
//! grad f_i(theta) = -E[grad log p(y_i, gamma_i | theta) | y_i, theta],
//! is estimated by averaging the joint-density gradient over R draws of
//! gamma_i from its conditional law.

pub mod conditional;
pub mod data;
pub mod family;
pub mod polya_gamma;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SmldError};
use crate::glmm::conditional::{sample_random_effects, GroupState};
use crate::glmm::data::GroupedData;
use crate::glmm::family::Family;
use crate::linalg::spd_inverse;
use crate::mirror_maps::MirrorMap;
use crate::rng::derive_stream;
use crate::samplers::{GradOracle, TermGrad};
use crate::vech::{unvech, vech, vech_len};

/// Mean-zero Gaussian prior on beta (variance tau_sq per coordinate) and
/// Wishart(nu, v_scale) prior on the precision Omega.
#[derive(Debug, Clone)]
pub struct Priors {
    pub tau_sq: f64,
    pub nu: f64,
    pub v_scale: DMatrix<f64>,
}

impl Priors {
    pub fn validate(&self, q: usize) -> Result<()> {
        if !(self.tau_sq > 0.0) {
            return Err(SmldError::Degenerate("tau_sq must be positive".into()));
        }
        if self.nu < q as f64 {
            return Err(SmldError::Degenerate(format!(
                "Wishart df {} below dimension {q}",
                self.nu
            )));
        }
        if !crate::linalg::is_pd(&self.v_scale) || self.v_scale.nrows() != q {
            return Err(SmldError::Degenerate("v_scale must be SPD of size q".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlmmModel {
    pub family: Family,
    pub data: GroupedData,
    pub priors: Priors,
}

impl GlmmModel {
    pub fn new(family: Family, data: GroupedData, priors: Priors) -> Result<Self> {
        data.validate_responses(&family)?;
        priors.validate(data.q())?;
        Ok(GlmmModel {
            family,
            data,
            priors,
        })
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn q(&self) -> usize {
        self.data.q()
    }

    pub fn n_groups(&self) -> usize {
        self.data.n_groups()
    }

    /// Flat parameter dimension p + q(q+1)/2.
    pub fn dim(&self) -> usize {
        self.p() + vech_len(self.q())
    }

    /// Barrier geometry: Euclidean block for beta, log-det block for Omega.
    pub fn mirror_map(&self) -> MirrorMap {
        MirrorMap::product(vec![
            MirrorMap::euclidean(self.p()),
            MirrorMap::log_det_pd(self.q()),
        ])
    }

    pub fn pack(&self, beta: &DVector<f64>, omega: &DMatrix<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        theta.rows_mut(0, self.p()).copy_from(beta);
        theta
            .rows_mut(self.p(), vech_len(self.q()))
            .copy_from(&vech(omega));
        theta
    }

    pub fn unpack(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if theta.len() != self.dim() {
            return Err(SmldError::Shape(format!(
                "theta length {} != {}",
                theta.len(),
                self.dim()
            )));
        }
        let beta = theta.rows(0, self.p()).into_owned();
        let omega = unvech(theta.rows(self.p(), vech_len(self.q())).as_slice(), self.q());
        if !crate::linalg::is_pd(&omega) {
            return Err(SmldError::Domain("Omega not positive definite".into()));
        }
        Ok((beta, omega))
    }

    /// Gradient of log p(y_i, gamma | theta) with respect to
    /// (beta, vech Omega) at fixed gamma: the beta block sums the
    /// per-observation scores times covariates; the Omega block is
    /// vech(Omega^{-1}/2 - gamma gamma'/2) in symmetric convention.
    pub fn joint_log_grad(
        &self,
        group_idx: usize,
        gamma: &DVector<f64>,
        beta: &DVector<f64>,
        omega_inv: &DMatrix<f64>,
    ) -> DVector<f64> {
        let g = &self.data.groups[group_idx];
        let p = self.p();
        let mut out = DVector::zeros(self.dim());
        for j in 0..g.y.len() {
            let eta = (g.x.row(j) * beta)[(0, 0)] + (g.z.row(j) * gamma)[(0, 0)];
            let s = self.family.score_eta(g.y[j], eta);
            for c in 0..p {
                out[c] += s * g.x[(j, c)];
            }
        }
        let omega_block = 0.5 * omega_inv - 0.5 * gamma * gamma.transpose();
        out.rows_mut(p, vech_len(self.q()))
            .copy_from(&vech(&omega_block));
        out
    }

    /// Gradient of the negative log prior.
    pub fn grad_prior(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (beta, omega) = self.unpack(theta)?;
        let q = self.q() as f64;
        let omega_inv = spd_inverse(&omega)?;
        let scale_inv = spd_inverse(&self.priors.v_scale)?;
        let omega_block = -((self.priors.nu - q - 1.0) / 2.0) * omega_inv + 0.5 * scale_inv;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.p())
            .copy_from(&(beta / self.priors.tau_sq));
        out.rows_mut(self.p(), vech_len(self.q()))
            .copy_from(&vech(&omega_block));
        Ok(out)
    }
}

/// Fisher-identity gradient estimate for one group from R conditional
/// draws: grad_i = -(1/R) sum_r grad log p(y_i, gamma_r | theta), with the
/// Monte Carlo covariance estimate
/// psi_i = (1/(R(R-1))) sum_r (g_r - g_bar)(g_r - g_bar)'.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_grad(
    model: &GlmmModel,
    group_idx: usize,
    beta: &DVector<f64>,
    omega: &DMatrix<f64>,
    r: usize,
    burn_in: usize,
    state: &mut GroupState,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(DVector<f64>, DMatrix<f64>, bool)> {
    let group = &model.data.groups[group_idx];
    let (draws, report) = sample_random_effects(
        &model.family,
        group,
        beta,
        omega,
        r,
        burn_in,
        state,
        rng,
    )?;
    let omega_inv = spd_inverse(omega)?;
    let d = model.dim();
    let grads: Vec<DVector<f64>> = draws
        .iter()
        .map(|gamma| model.joint_log_grad(group_idx, gamma, beta, &omega_inv))
        .collect();
    let mut mean = DVector::zeros(d);
    for g in &grads {
        mean += g;
    }
    mean /= r as f64;
    let mut psi = DMatrix::zeros(d, d);
    if r >= 2 {
        for g in &grads {
            let c = g - &mean;
            psi.syger(1.0, &c, &c, 1.0);
        }
        for a in 0..d {
            for b in 0..a {
                psi[(b, a)] = psi[(a, b)];
            }
        }
        psi /= (r * (r - 1)) as f64;
    }
    Ok((-mean, psi, report.convergence_warning))
}

/// Full-scan estimator of the total gradient covariance at theta:
/// (1/n) sum_i [ (ghat_i - ghat/n)(ghat_i - ghat/n)' + psi_i / n ]
/// with ghat the sum of the per-group gradient estimates. Fresh inner
/// states and per-(tag, group) random streams make the scan deterministic
/// and parallelizable.
pub fn full_psi_hat(
    model: &GlmmModel,
    theta: &DVector<f64>,
    r: usize,
    burn_in: usize,
    seed: u64,
    tag: u64,
) -> Result<DMatrix<f64>> {
    if r < 2 {
        return Err(SmldError::Degenerate(
            "covariance estimation needs R >= 2".into(),
        ));
    }
    let (beta, omega) = model.unpack(theta)?;
    let n = model.n_groups();
    let d = model.dim();
    let per_group: Vec<(DVector<f64>, DMatrix<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, &[0x9a, tag, i as u64]);
            let mut state = GroupState::fresh(model.q());
            let (g, psi, _) =
                stochastic_grad(model, i, &beta, &omega, r, burn_in, &mut state, &mut rng)?;
            Ok((g, psi))
        })
        .collect::<Result<_>>()?;
    let mut total = DVector::zeros(d);
    for (g, _) in &per_group {
        total += g;
    }
    let mean = &total / n as f64;
    let mut out = DMatrix::zeros(d, d);
    for (g, psi) in &per_group {
        let c = g - &mean;
        out.syger(1.0, &c, &c, 1.0);
        out += psi / n as f64;
    }
    for a in 0..d {
        for b in 0..a {
            out[(b, a)] = out[(a, b)];
        }
    }
    Ok(out / n as f64)
}

/// Gradient oracle over the grouped model, carrying warm-start inner
/// states per group. Randomness is derived per (iteration, group), so
/// results do not depend on evaluation order.
pub struct GlmmOracle {
    pub model: GlmmModel,
    pub r: usize,
    pub burn_in: usize,
    pub inner_seed: u64,
    states: Vec<GroupState>,
    pub warning_count: u64,
}

impl GlmmOracle {
    pub fn new(model: GlmmModel, r: usize, burn_in: usize, inner_seed: u64) -> Self {
        let q = model.q();
        let n = model.n_groups();
        GlmmOracle {
            model,
            r,
            burn_in,
            inner_seed,
            states: vec![GroupState::fresh(q); n],
            warning_count: 0,
        }
    }

    /// Drop all warm-start state (used before correction-time scans).
    pub fn reset_states(&mut self) {
        let q = self.model.q();
        for s in self.states.iter_mut() {
            *s = GroupState::fresh(q);
        }
    }
}

impl GradOracle for GlmmOracle {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn n_terms(&self) -> usize {
        self.model.n_groups()
    }

    fn grad_prior(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.model.grad_prior(theta)
    }

    fn grad_term(&mut self, iter: u64, i: usize, theta: &DVector<f64>) -> Result<TermGrad> {
        let (beta, omega) = self.model.unpack(theta)?;
        let mut rng = derive_stream(self.inner_seed, &[0x5c, iter, i as u64]);
        let (grad, psi, warned) = stochastic_grad(
            &self.model,
            i,
            &beta,
            &omega,
            self.r,
            self.burn_in,
            &mut self.states[i],
            &mut rng,
        )?;
        if warned {
            self.warning_count += 1;
        }
        Ok(TermGrad {
            grad,
            psi: Some(psi),
        })
    }
}
