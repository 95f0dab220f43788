//! Langevin-type Markov kernels and the chain runner.
//!
//! All kernels are instances of one mirrored update
//!     vartheta' = vartheta - eps * drift + sqrt(2 eps) * metric_noise,
//! where the drift is the (mini)batch gradient estimate evaluated at the
//! primal point grad_phi*(vartheta). The Euclidean map recovers the
//! unconstrained algorithms exactly, including bitwise agreement of the
//! full-batch mirrored kernel with the plain unadjusted Langevin step on
//! the same random stream.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmldError};
use crate::mirror_maps::MirrorMap;
use crate::rng::derive_stream;
use crate::trace::{ChainStatus, Trace};

/// One data term's gradient estimate, optionally with the Monte Carlo
/// covariance of the estimate (present for inner-sampled models).
#[derive(Debug, Clone)]
pub struct TermGrad {
    pub grad: DVector<f64>,
    pub psi: Option<DMatrix<f64>>,
}

/// A gradient provider over n data terms plus a prior term.
///
/// Data terms are indexed 0..n_terms. Implementations may hold mutable
/// state (inner-chain warm starts); determinism across thread schedules is
/// the implementor's contract: randomness must be derived from
/// (iteration, term) counters, not from shared stream consumption.
pub trait GradOracle {
    fn dim(&self) -> usize;
    fn n_terms(&self) -> usize;
    fn grad_prior(&mut self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn grad_term(&mut self, iter: u64, i: usize, theta: &DVector<f64>) -> Result<TermGrad>;

    /// Batch evaluation for distinct term indices; overridable for parallel
    /// implementations.
    fn grad_terms(
        &mut self,
        iter: u64,
        idx: &[usize],
        theta: &DVector<f64>,
    ) -> Result<Vec<TermGrad>> {
        idx.iter().map(|&i| self.grad_term(iter, i, theta)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchScheme {
    /// Deterministic sum over all data terms.
    FullScan,
    /// S indices drawn uniformly with replacement, scaled by n/S.
    Replacement(usize),
}

/// Per-step gradient diagnostic returned by the minibatch kernels.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    /// Total drift including the unscaled prior term.
    pub drift: DVector<f64>,
    /// Sampled term indices (empty for full scans).
    pub term_ids: Vec<usize>,
}

/// Drift of the mirrored dynamics at primal point theta:
/// scaled batch data-gradient plus the always-unscaled prior gradient.
pub fn batch_drift<O: GradOracle + ?Sized>(
    oracle: &mut O,
    iter: u64,
    theta: &DVector<f64>,
    batch: &BatchScheme,
    rng_batch: &mut ChaCha8Rng,
) -> Result<GradEstimate> {
    let n = oracle.n_terms();
    let mut drift = oracle.grad_prior(theta)?;
    let term_ids: Vec<usize> = match batch {
        BatchScheme::FullScan => {
            let idx: Vec<usize> = (0..n).collect();
            for tg in oracle.grad_terms(iter, &idx, theta)? {
                drift += &tg.grad;
            }
            Vec::new()
        }
        BatchScheme::Replacement(s) => {
            if *s == 0 || *s > n {
                return Err(SmldError::Shape(format!(
                    "minibatch size {s} out of range for n = {n}"
                )));
            }
            let ids: Vec<usize> = (0..*s).map(|_| rng_batch.random_range(0..n)).collect();
            // Duplicated indices reuse one evaluation (multiplicity-weighted);
            // the estimator stays unbiased and inner-state updates happen
            // once per group per iteration, keeping runs schedule-invariant.
            let mut distinct: Vec<(usize, f64)> = Vec::with_capacity(*s);
            for &i in &ids {
                match distinct.iter_mut().find(|(j, _)| *j == i) {
                    Some((_, c)) => *c += 1.0,
                    None => distinct.push((i, 1.0)),
                }
            }
            let scale = n as f64 / *s as f64;
            let idx: Vec<usize> = distinct.iter().map(|(i, _)| *i).collect();
            let grads = oracle.grad_terms(iter, &idx, theta)?;
            for (tg, (_, mult)) in grads.iter().zip(&distinct) {
                drift.axpy(scale * mult, &tg.grad, 1.0);
            }
            ids
        }
    };
    Ok(GradEstimate { drift, term_ids })
}

/// One mirrored Langevin step; the generic kernel behind all four variants.
pub fn mirror_step<O: GradOracle + ?Sized>(
    map: &MirrorMap,
    oracle: &mut O,
    iter: u64,
    vartheta: &DVector<f64>,
    eps: f64,
    batch: &BatchScheme,
    rng_batch: &mut ChaCha8Rng,
    rng_noise: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, GradEstimate)> {
    let theta = map.grad_phi_star(vartheta)?;
    let est = batch_drift(oracle, iter, &theta, batch, rng_batch)?;
    let z = DVector::from_fn(map.dim(), |_, _| rng_noise.sample::<f64, _>(StandardNormal));
    let noise = map.metric_noise(vartheta, &z, rng_noise)?;
    let mut next = vartheta.clone();
    next.axpy(-eps, &est.drift, 1.0);
    next.axpy((2.0 * eps).sqrt(), &noise, 1.0);
    Ok((next, est))
}

/// Full-batch unconstrained Langevin step.
pub fn ula_step<O: GradOracle + ?Sized>(
    oracle: &mut O,
    theta: &DVector<f64>,
    eps: f64,
    rng_noise: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let map = MirrorMap::euclidean(oracle.dim());
    let mut dummy = rng_noise.clone();
    let (next, _) = mirror_step(
        &map,
        oracle,
        0,
        theta,
        eps,
        &BatchScheme::FullScan,
        &mut dummy,
        rng_noise,
    )?;
    Ok(next)
}

/// Minibatch unconstrained Langevin step (prior term unscaled).
pub fn sgld_step<O: GradOracle + ?Sized>(
    oracle: &mut O,
    theta: &DVector<f64>,
    eps: f64,
    s: usize,
    rng_batch: &mut ChaCha8Rng,
    rng_noise: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let map = MirrorMap::euclidean(oracle.dim());
    let (next, _) = mirror_step(
        &map,
        oracle,
        0,
        theta,
        eps,
        &BatchScheme::Replacement(s),
        rng_batch,
        rng_noise,
    )?;
    Ok(next)
}

/// Full-batch mirrored Langevin step.
pub fn mla_step<O: GradOracle + ?Sized>(
    map: &MirrorMap,
    oracle: &mut O,
    vartheta: &DVector<f64>,
    eps: f64,
    rng_noise: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let mut dummy = rng_noise.clone();
    let (next, _) = mirror_step(
        map,
        oracle,
        0,
        vartheta,
        eps,
        &BatchScheme::FullScan,
        &mut dummy,
        rng_noise,
    )?;
    Ok(next)
}

/// Minibatch mirrored Langevin step; returns the gradient estimate used.
#[allow(clippy::too_many_arguments)]
pub fn smld_step<O: GradOracle + ?Sized>(
    map: &MirrorMap,
    oracle: &mut O,
    iter: u64,
    vartheta: &DVector<f64>,
    eps: f64,
    s: usize,
    rng_batch: &mut ChaCha8Rng,
    rng_noise: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, GradEstimate)> {
    mirror_step(
        map,
        oracle,
        iter,
        vartheta,
        eps,
        &BatchScheme::Replacement(s),
        rng_batch,
        rng_noise,
    )
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub batch: BatchScheme,
    pub n_iters: u64,
    pub seed: u64,
    /// Divergence is declared when the dual infinity norm exceeds this or a
    /// non-finite value appears.
    pub divergence_threshold: f64,
    /// Keep every `store_stride`-th iterate (1 = keep all).
    pub store_stride: u64,
    /// Iteration from which the running primal mean is accumulated.
    pub mean_from: u64,
    /// Optional wall-clock budget; the run truncates cleanly once exceeded.
    pub max_seconds: Option<f64>,
}

impl SamplerConfig {
    pub fn new(step_size: f64, batch: BatchScheme, n_iters: u64, seed: u64) -> Self {
        SamplerConfig {
            step_size,
            batch,
            n_iters,
            seed,
            divergence_threshold: 1e8,
            store_stride: 1,
            mean_from: n_iters / 10,
            max_seconds: None,
        }
    }
}

/// Step-size heuristic eps = S / n^(1+delta) with
/// delta = (delta_min + 1) / 2 and delta_min = log S / log n.
pub fn step_size_rule(n: usize, s: usize) -> f64 {
    let delta_min = (s as f64).ln() / (n as f64).ln();
    let delta = (delta_min + 1.0) / 2.0;
    s as f64 / (n as f64).powf(1.0 + delta)
}

/// Run a mirrored chain from a primal initial point, storing dual
/// coordinates. Divergence (threshold breach, non-finite values, or a
/// domain exit) truncates the trace and is reported as a status, not an
/// error. Deterministic given the config seed.
pub fn run_mirror_chain<O: GradOracle + ?Sized>(
    map: &MirrorMap,
    oracle: &mut O,
    init_primal: &DVector<f64>,
    config: &SamplerConfig,
) -> Result<Trace> {
    if !(config.step_size > 0.0) {
        return Err(SmldError::Degenerate("step size must be positive".into()));
    }
    let dim = map.dim();
    let mut vartheta = map.grad_phi(init_primal)?;
    let mut trace = Trace::empty(dim);
    let stride = config.store_stride.max(1);
    let mut mean_acc = DVector::zeros(dim);
    let mut mean_count = 0u64;

    trace.iters.push(0);
    trace.rows.push(vartheta.clone());
    let started = std::time::Instant::now();

    for k in 0..config.n_iters {
        if let Some(budget) = config.max_seconds {
            if k % 512 == 0 && started.elapsed().as_secs_f64() > budget {
                break;
            }
        }
        let mut rng_batch = derive_stream(config.seed, &[1, k]);
        let mut rng_noise = derive_stream(config.seed, &[2, k]);
        let step = mirror_step(
            map,
            oracle,
            k,
            &vartheta,
            config.step_size,
            &config.batch,
            &mut rng_batch,
            &mut rng_noise,
        );
        let next = match step {
            Ok((next, _)) => next,
            Err(SmldError::Domain(_)) => {
                trace.status = ChainStatus::Diverged { at_iteration: k };
                break;
            }
            Err(e) => return Err(e),
        };
        if !next.iter().all(|v| v.is_finite()) || next.amax() > config.divergence_threshold {
            trace.status = ChainStatus::Diverged { at_iteration: k + 1 };
            break;
        }
        vartheta = next;
        if (k + 1) % stride == 0 {
            trace.iters.push(k + 1);
            trace.rows.push(vartheta.clone());
        }
        if k + 1 >= config.mean_from {
            if let Ok(primal) = map.grad_phi_star(&vartheta) {
                mean_acc += primal;
                mean_count += 1;
            }
        }
    }
    if mean_count > 0 {
        trace.primal_mean = Some(mean_acc / mean_count as f64);
    }
    Ok(trace)
}
