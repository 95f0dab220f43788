//! JSON configuration schema shared by all subcommands, with validation
//! performed before any computation starts.

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use smld_core::glmm::data::GroupedData;
use smld_core::glmm::family::Family;
use smld_core::glmm::{GlmmModel, Priors};
use smld_core::samplers::step_size_rule;
use smld_core::toy_targets::{GaussianWishartTarget, LogVarianceTarget};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    GaussianLinear,
    BinomialLogit { trials: u32 },
    BernoulliProbit,
    Poisson,
}

impl FamilyConfig {
    pub fn to_family(&self) -> Result<Family> {
        Ok(match self {
            FamilyConfig::GaussianLinear => Family::GaussianLinear,
            FamilyConfig::BinomialLogit { trials } => {
                if *trials == 0 {
                    bail!("binomial_logit needs trials >= 1");
                }
                Family::BinomialLogit(*trials)
            }
            FamilyConfig::BernoulliProbit => Family::BernoulliProbit,
            FamilyConfig::Poisson => Family::Poisson,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsConfig {
    pub tau_sq: f64,
    pub nu: f64,
    pub v_scale: Vec<Vec<f64>>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 || rows.iter().any(|row| row.len() != rows[0].len()) {
        bail!("{what}: ragged or empty matrix");
    }
    Ok(DMatrix::from_fn(r, rows[0].len(), |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl PriorsConfig {
    pub fn to_priors(&self) -> Result<Priors> {
        Ok(Priors {
            tau_sq: self.tau_sq,
            nu: self.nu,
            v_scale: matrix_from_rows(&self.v_scale, "priors.v_scale")?,
        })
    }
}

/// Simulation settings for grouped mixed-model data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub family: FamilyConfig,
    pub n_groups: usize,
    pub n_per_group: usize,
    pub beta_true: Vec<f64>,
    pub sigma_true: Vec<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Grouped mixed model; data comes from a CSV path or an inline
    /// simulation block (exactly one of the two).
    Glmm {
        family: FamilyConfig,
        priors: PriorsConfig,
        #[serde(default)]
        data_path: Option<String>,
        #[serde(default)]
        simulate: Option<SimulateConfig>,
    },
    /// Mean-zero multivariate normal likelihood with a conjugate prior on
    /// the precision matrix; data simulated inline.
    GaussianWishart {
        prior_df: f64,
        prior_scale: Vec<Vec<f64>>,
        n: usize,
        sigma_true: Vec<Vec<f64>>,
        data_seed: u64,
    },
    /// One-dimensional unknown-variance model. `parameterization` picks the
    /// sampling coordinate: "sigma_sq" (positive, barrier map) or
    /// "log_sigma" (unconstrained).
    LogVariance {
        n: usize,
        sigma_true: f64,
        data_seed: u64,
        parameterization: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    /// Explicit step size; omit to use the rule S / n^(1+delta).
    #[serde(default)]
    pub step_size: Option<f64>,
    pub batch_size: usize,
    pub n_iters: u64,
    pub seed: u64,
    /// Inner conditional draws per group per step (mixed models only).
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_inner_burn_in")]
    pub inner_burn_in: usize,
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_store_stride")]
    pub store_stride: u64,
    #[serde(default = "default_divergence_threshold")]
    pub divergence_threshold: f64,
}

fn default_r() -> usize {
    200
}
fn default_inner_burn_in() -> usize {
    50
}
fn default_burn_in_fraction() -> f64 {
    0.1
}
fn default_store_stride() -> u64 {
    1
}
fn default_divergence_threshold() -> f64 {
    1e8
}

impl SamplerBlock {
    pub fn validate(&self, n_terms: usize) -> Result<()> {
        if let Some(eps) = self.step_size {
            if !(eps > 0.0) {
                bail!("sampler.step_size must be positive");
            }
        }
        if self.batch_size == 0 || self.batch_size > n_terms {
            bail!(
                "sampler.batch_size {} out of range for n = {n_terms}",
                self.batch_size
            );
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            bail!("sampler.burn_in_fraction must lie in [0, 1)");
        }
        if self.r == 0 {
            bail!("sampler.r must be at least 1");
        }
        Ok(())
    }

    pub fn effective_step_size(&self, n_terms: usize) -> f64 {
        self.step_size
            .unwrap_or_else(|| step_size_rule(n_terms, self.batch_size))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub sampler: SamplerBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    pub model: ModelConfig,
    pub sweeps: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in_fraction")]
    pub burn_in_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoDivergenceConfig {
    pub n: usize,
    pub sigma_true: f64,
    pub data_seed: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
    /// Used when step_size is absent: eps = S / n^exponent.
    #[serde(default = "default_demo_exponent")]
    pub step_exponent: f64,
    pub n_iters: u64,
    pub n_seeds: u64,
    pub seed: u64,
    #[serde(default = "default_init_log_sigma")]
    pub init_log_sigma: f64,
    /// Step size for the barrier chain; defaults to S / n^(1 + delta).
    #[serde(default)]
    pub barrier_step_size: Option<f64>,
}

fn default_demo_exponent() -> f64 {
    1.4
}
fn default_init_log_sigma() -> f64 {
    std::f64::consts::LN_2
}

impl DemoDivergenceConfig {
    pub fn effective_step_size(&self) -> Result<f64> {
        let eps = self
            .step_size
            .unwrap_or_else(|| self.batch_size as f64 / (self.n as f64).powf(self.step_exponent));
        if !(eps > 0.0) {
            bail!("demo step size must be positive");
        }
        Ok(eps)
    }

    pub fn effective_barrier_step_size(&self) -> Result<f64> {
        let eps = self
            .barrier_step_size
            .unwrap_or_else(|| step_size_rule(self.n, self.batch_size));
        if !(eps > 0.0) {
            bail!("demo barrier step size must be positive");
        }
        Ok(eps)
    }
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Materialized model: everything fit/gibbs needs after validation.
pub enum BuiltModel {
    Glmm(GlmmModel),
    GaussianWishart(GaussianWishartTarget),
    LogVariance {
        target: LogVarianceTarget,
        sigma_sq_coordinates: bool,
    },
}

pub fn build_model(model: &ModelConfig) -> Result<BuiltModel> {
    match model {
        ModelConfig::Glmm {
            family,
            priors,
            data_path,
            simulate,
        } => {
            let fam = family.to_family()?;
            let data = match (data_path, simulate) {
                (Some(path), None) => GroupedData::read_csv(Path::new(path))
                    .with_context(|| format!("reading data {path}"))?,
                (None, Some(sim)) => simulate_grouped(sim)?,
                _ => bail!("glmm model needs exactly one of data_path or simulate"),
            };
            Ok(BuiltModel::Glmm(GlmmModel::new(
                fam,
                data,
                priors.to_priors()?,
            )?))
        }
        ModelConfig::GaussianWishart {
            prior_df,
            prior_scale,
            n,
            sigma_true,
            data_seed,
        } => {
            let scale = matrix_from_rows(prior_scale, "prior_scale")?;
            let sigma = matrix_from_rows(sigma_true, "sigma_true")?;
            Ok(BuiltModel::GaussianWishart(GaussianWishartTarget::simulate(
                *n, &sigma, *prior_df, scale, *data_seed,
            )?))
        }
        ModelConfig::LogVariance {
            n,
            sigma_true,
            data_seed,
            parameterization,
        } => {
            let sigma_sq_coordinates = match parameterization.as_str() {
                "sigma_sq" => true,
                "log_sigma" => false,
                other => bail!("unknown parameterization {other:?}"),
            };
            if !(*sigma_true > 0.0) {
                bail!("sigma_true must be positive");
            }
            Ok(BuiltModel::LogVariance {
                target: LogVarianceTarget::simulate(*n, *sigma_true, *data_seed),
                sigma_sq_coordinates,
            })
        }
    }
}

pub fn simulate_grouped(sim: &SimulateConfig) -> Result<GroupedData> {
    let fam = sim.family.to_family()?;
    let beta = DVector::from_vec(sim.beta_true.clone());
    let sigma = matrix_from_rows(&sim.sigma_true, "sigma_true")?;
    Ok(smld_core::glmm::data::simulate_glmm(
        &fam,
        sim.n_groups,
        sim.n_per_group,
        &beta,
        &sigma,
        sim.seed,
    )?)
}
