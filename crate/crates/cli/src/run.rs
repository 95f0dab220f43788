//! Subcommand implementations. Each writes its outputs under `--out` and
//! returns the process exit code: 0 for success, 2 for a diverged chain,
//! 3 for a correction failure (raw outputs are still written).

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::json;
use std::path::Path;
use std::time::Instant;

use smld_core::correction::{build_correction, rescale_trace, CorrectionResult};
use smld_core::glmm::{full_psi_hat, GlmmModel, GlmmOracle};
use smld_core::linalg::mean_cov;
use smld_core::mirror_maps::MirrorMap;
use smld_core::oracles::gibbs::run_gibbs_budgeted;
use smld_core::oracles::{quadrature_mean_var, wishart_posterior_moments, ConjugatePosterior};
use smld_core::samplers::{
    run_mirror_chain, BatchScheme, GradOracle, SamplerConfig,
};
use smld_core::summary::{batch_means, glmm_derived, summarize};
use smld_core::toy_targets::{
    GaussianWishartOracle, LogVarianceLogOracle, LogVarianceSigmaSqOracle,
};
use smld_core::trace::{write_csv_rows, ChainStatus, RunManifest, Trace};
use smld_core::vech::vech;

use crate::config::{
    build_model, matrix_to_rows, BuiltModel, DemoDivergenceConfig, FitConfig, GibbsConfig,
    OracleConfig, SimulateConfig,
};

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub fn cmd_simulate(mut cfg: SimulateConfig, out: &Path, seed: Option<u64>) -> Result<i32> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_out(out)?;
    let data = crate::config::simulate_grouped(&cfg)?;
    let path = out.join("data.csv");
    data.write_csv(&path)?;
    write_json(
        &out.join("simulate.json"),
        &json!({
            "n_groups": data.n_groups(),
            "n_rows": data.groups.iter().map(|g| g.y.len()).sum::<usize>(),
            "p": data.p(),
            "q": data.q(),
            "seed": cfg.seed,
            "data_path": path.display().to_string(),
        }),
    )?;
    Ok(0)
}

/// Per-term exact-gradient population covariance for toy oracles.
fn exact_psi<O: GradOracle>(oracle: &mut O, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = oracle.n_terms();
    let idx: Vec<usize> = (0..n).collect();
    let grads = oracle.grad_terms(0, &idx, theta)?;
    let d = theta.len();
    let mut mean = DVector::zeros(d);
    for g in &grads {
        mean += &g.grad;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for g in &grads {
        let c = &g.grad - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    Ok(cov / n as f64)
}

struct FitPieces {
    map: MirrorMap,
    init_primal: DVector<f64>,
    n_terms: usize,
    glmm: Option<GlmmModel>,
}

fn fit_pieces(model: &BuiltModel) -> FitPieces {
    match model {
        BuiltModel::Glmm(m) => FitPieces {
            map: m.mirror_map(),
            init_primal: m.pack(&DVector::zeros(m.p()), &DMatrix::identity(m.q(), m.q())),
            n_terms: m.n_groups(),
            glmm: Some(m.clone()),
        },
        BuiltModel::GaussianWishart(t) => FitPieces {
            map: MirrorMap::log_det_pd(t.q()),
            init_primal: vech(&DMatrix::identity(t.q(), t.q())),
            n_terms: t.n(),
            glmm: None,
        },
        BuiltModel::LogVariance {
            target,
            sigma_sq_coordinates,
        } => FitPieces {
            map: if *sigma_sq_coordinates {
                MirrorMap::log_barrier_positive()
            } else {
                MirrorMap::euclidean(1)
            },
            init_primal: DVector::from_vec(vec![if *sigma_sq_coordinates { 1.0 } else { 0.0 }]),
            n_terms: target.n(),
            glmm: None,
        },
    }
}

fn primal_summary(
    map: &MirrorMap,
    rows: &[DVector<f64>],
    glmm: Option<&GlmmModel>,
) -> Result<serde_json::Value> {
    let mut primal = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for r in rows {
        match map.grad_phi_star(r) {
            Ok(p) => primal.push(p),
            Err(_) => dropped += 1,
        }
    }
    if primal.is_empty() {
        bail!("no stored samples map into the domain");
    }
    let coords = summarize(&primal)?;
    let mcse: Vec<serde_json::Value> = (0..primal[0].len())
        .map(|j| {
            let col: Vec<f64> = primal.iter().map(|row| row[j]).collect();
            match batch_means(&col) {
                Ok(m) => json!({"mcse": m.mcse, "ess": m.ess}),
                Err(_) => serde_json::Value::Null,
            }
        })
        .collect();
    let derived = match glmm {
        Some(m) => serde_json::to_value(glmm_derived(&primal, m.p(), m.q())?)?,
        None => serde_json::Value::Null,
    };
    Ok(json!({
        "coordinates": coords,
        "mcse": mcse,
        "derived": derived,
        "dropped_from_domain": dropped,
    }))
}

fn correction_report(
    corr: &CorrectionResult,
    step_size: f64,
    n_terms: usize,
    batch_size: usize,
    dropped: usize,
) -> serde_json::Value {
    json!({
        "step_size": step_size,
        "n_terms": n_terms,
        "batch_size": batch_size,
        "lyapunov_residual": corr.lyapunov_residual,
        "dual_mean": corr.dual_mean.as_slice(),
        "dual_cov_raw": matrix_to_rows(&corr.dual_cov_raw),
        "dual_cov_corrected": matrix_to_rows(&corr.dual_cov_corrected),
        "transform": matrix_to_rows(&corr.transform),
        "dropped_corrected_samples": dropped,
    })
}

pub fn cmd_fit(
    mut cfg: FitConfig,
    out: &Path,
    seed: Option<u64>,
    max_seconds: Option<f64>,
) -> Result<i32> {
    if let Some(s) = seed {
        cfg.sampler.seed = s;
    }
    ensure_out(out)?;
    let model = build_model(&cfg.model)?;
    let pieces = fit_pieces(&model);
    cfg.sampler.validate(pieces.n_terms)?;
    let eps = cfg.sampler.effective_step_size(pieces.n_terms);
    let mut config = SamplerConfig::new(
        eps,
        BatchScheme::Replacement(cfg.sampler.batch_size),
        cfg.sampler.n_iters,
        cfg.sampler.seed,
    );
    config.store_stride = cfg.sampler.store_stride;
    config.divergence_threshold = cfg.sampler.divergence_threshold;
    config.max_seconds = max_seconds;

    let started = Instant::now();
    let inner_seed = cfg.sampler.seed.wrapping_add(0x517c_c1b7_2722_0a95);
    let mut glmm_oracle = pieces
        .glmm
        .as_ref()
        .map(|m| GlmmOracle::new(m.clone(), cfg.sampler.r, cfg.sampler.inner_burn_in, inner_seed));
    let trace: Trace = match &model {
        BuiltModel::Glmm(_) => run_mirror_chain(
            &pieces.map,
            glmm_oracle.as_mut().unwrap(),
            &pieces.init_primal,
            &config,
        )?,
        BuiltModel::GaussianWishart(t) => run_mirror_chain(
            &pieces.map,
            &mut GaussianWishartOracle::new(t.clone()),
            &pieces.init_primal,
            &config,
        )?,
        BuiltModel::LogVariance {
            target,
            sigma_sq_coordinates,
        } => {
            if *sigma_sq_coordinates {
                run_mirror_chain(
                    &pieces.map,
                    &mut LogVarianceSigmaSqOracle::new(target.clone()),
                    &pieces.init_primal,
                    &config,
                )?
            } else {
                run_mirror_chain(
                    &pieces.map,
                    &mut LogVarianceLogOracle::new(target.clone()),
                    &pieces.init_primal,
                    &config,
                )?
            }
        }
    };

    trace.write_csv(&out.join("trace_raw.csv"))?;
    let config_echo = serde_json::to_value(&cfg)?;
    let manifest = RunManifest {
        seed: cfg.sampler.seed,
        status: trace.status.clone(),
        n_iterations: trace.iters.last().copied().unwrap_or(0),
        stored_rows: trace.rows.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        config_echo,
    };
    write_json(&out.join("manifest.json"), &serde_json::to_value(&manifest)?)?;

    if let ChainStatus::Diverged { at_iteration } = trace.status {
        write_json(
            &out.join("summary.json"),
            &json!({
                "status": {"diverged_at": at_iteration},
                "raw": serde_json::Value::Null,
                "corrected": serde_json::Value::Null,
            }),
        )?;
        eprintln!("chain diverged at iteration {at_iteration}");
        return Ok(2);
    }

    let rows = trace.post_burn_in(cfg.sampler.burn_in_fraction);
    let raw_summary = primal_summary(&pieces.map, rows, pieces.glmm.as_ref())?;

    // Correction: gradient-noise covariance at the dual mean, Lyapunov
    // solve, affine rescale of the stored trace.
    let correction = (|| -> Result<(CorrectionResult, Vec<DVector<f64>>, usize)> {
        let (dual_mean, _) = mean_cov(rows);
        let theta_hat = pieces.map.grad_phi_star(&dual_mean)?;
        let psi = match &model {
            BuiltModel::Glmm(m) => full_psi_hat(
                m,
                &theta_hat,
                cfg.sampler.r,
                cfg.sampler.inner_burn_in,
                inner_seed.wrapping_add(1),
                0,
            )?,
            BuiltModel::GaussianWishart(t) => {
                exact_psi(&mut GaussianWishartOracle::new(t.clone()), &theta_hat)?
            }
            BuiltModel::LogVariance {
                target,
                sigma_sq_coordinates,
            } => {
                if *sigma_sq_coordinates {
                    exact_psi(&mut LogVarianceSigmaSqOracle::new(target.clone()), &theta_hat)?
                } else {
                    exact_psi(&mut LogVarianceLogOracle::new(target.clone()), &theta_hat)?
                }
            }
        };
        let corr = build_correction(
            &pieces.map,
            rows,
            eps,
            pieces.n_terms,
            cfg.sampler.batch_size,
            &psi,
        )?;
        let rescaled = rescale_trace(&pieces.map, &corr, rows);
        Ok((corr, rescaled.rows, rescaled.dropped))
    })();

    match correction {
        Ok((corr, corrected_rows, dropped)) => {
            if dropped * 100 > rows.len() {
                eprintln!(
                    "warning: {dropped} of {} corrected samples left the domain",
                    rows.len()
                );
            }
            let idx: Vec<u64> = (0..corrected_rows.len() as u64).collect();
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(out.join("trace_corrected.csv"))
                    .context("creating trace_corrected.csv")?,
            );
            write_csv_rows(&mut file, &idx, &corrected_rows, pieces.map.dim())?;
            write_json(
                &out.join("correction.json"),
                &correction_report(&corr, eps, pieces.n_terms, cfg.sampler.batch_size, dropped),
            )?;
            let corrected_summary =
                primal_summary(&pieces.map, &corrected_rows, pieces.glmm.as_ref())?;
            write_json(
                &out.join("summary.json"),
                &json!({
                    "status": "completed",
                    "raw": raw_summary,
                    "corrected": corrected_summary,
                    "inner_warning_count": glmm_oracle.as_ref().map(|o| o.warning_count),
                }),
            )?;
            Ok(0)
        }
        Err(e) => {
            write_json(
                &out.join("summary.json"),
                &json!({
                    "status": format!("correction_failed: {e:#}"),
                    "raw": raw_summary,
                    "corrected": serde_json::Value::Null,
                }),
            )?;
            eprintln!("correction failed: {e:#}");
            Ok(3)
        }
    }
}

pub fn cmd_gibbs(
    mut cfg: GibbsConfig,
    out: &Path,
    seed: Option<u64>,
    max_seconds: Option<f64>,
) -> Result<i32> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_out(out)?;
    let model = match build_model(&cfg.model)? {
        BuiltModel::Glmm(m) => m,
        _ => bail!("the gibbs command requires a glmm model"),
    };
    let started = Instant::now();
    let rows = run_gibbs_budgeted(&model, cfg.sweeps, cfg.seed, max_seconds)?;
    let iters: Vec<u64> = (1..=rows.len() as u64).collect();
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(out.join("trace.csv")).context("creating trace.csv")?,
    );
    write_csv_rows(&mut file, &iters, &rows, model.dim())?;
    let skip = (rows.len() as f64 * cfg.burn_in_fraction).floor() as usize;
    let kept = &rows[skip.min(rows.len())..];
    let coords = summarize(kept)?;
    let mcse: Vec<serde_json::Value> = (0..model.dim())
        .map(|j| {
            let col: Vec<f64> = kept.iter().map(|row| row[j]).collect();
            match batch_means(&col) {
                Ok(m) => json!({"mcse": m.mcse, "ess": m.ess}),
                Err(_) => serde_json::Value::Null,
            }
        })
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "status": "completed",
            "sweeps": cfg.sweeps,
            "sweeps_completed": rows.len(),
            "seed": cfg.seed,
            "wall_seconds": started.elapsed().as_secs_f64(),
            "coordinates": coords,
            "mcse": mcse,
            "derived": glmm_derived(kept, model.p(), model.q())?,
        }),
    )?;
    Ok(0)
}

pub fn cmd_oracle(cfg: OracleConfig, out: &Path) -> Result<i32> {
    ensure_out(out)?;
    let value = match build_model(&cfg.model)? {
        BuiltModel::GaussianWishart(t) => {
            let conj = ConjugatePosterior::from_target(&t)?;
            let m = wishart_posterior_moments(&t)?;
            json!({
                "model": "gaussian_wishart",
                "posterior_df": conj.df,
                "posterior_scale": matrix_to_rows(&conj.scale),
                "sigma_mean": matrix_to_rows(&m.mean),
                "sigma_var": matrix_to_rows(&m.var),
            })
        }
        BuiltModel::LogVariance { target, .. } => {
            let (m_log, v_log) = quadrature_mean_var(&target, |t| t);
            let (m_v, v_v) = quadrature_mean_var(&target, |t| (2.0 * t).exp());
            json!({
                "model": "log_variance",
                "log_sigma": {"mean": m_log, "var": v_log},
                "sigma_sq": {"mean": m_v, "var": v_v},
            })
        }
        BuiltModel::Glmm(_) => bail!("no closed-form oracle for glmm models"),
    };
    write_json(&out.join("oracle.json"), &value)?;
    Ok(0)
}

pub fn cmd_demo_divergence(
    mut cfg: DemoDivergenceConfig,
    out: &Path,
    seed: Option<u64>,
    max_seconds: Option<f64>,
) -> Result<i32> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_out(out)?;
    let eps = cfg.effective_step_size()?;
    let eps_barrier = cfg.effective_barrier_step_size()?;
    let target =
        smld_core::toy_targets::LogVarianceTarget::simulate(cfg.n, cfg.sigma_true, cfg.data_seed);
    let (quad_mean, quad_var) = quadrature_mean_var(&target, |t| (2.0 * t).exp());
    let per_chain_budget = max_seconds.map(|t| t / (2.0 * cfg.n_seeds as f64));

    let mut report_seeds = Vec::new();
    let mut n_diverged = 0usize;
    let mut n_completed = 0usize;
    let mut pooled = 0.0;
    for k in 0..cfg.n_seeds {
        let chain_seed = cfg.seed.wrapping_add(k);
        let mut config =
            SamplerConfig::new(eps, BatchScheme::Replacement(cfg.batch_size), cfg.n_iters, chain_seed);
        config.store_stride = cfg.n_iters.max(1);
        config.max_seconds = per_chain_budget;

        let unconstrained = run_mirror_chain(
            &MirrorMap::euclidean(1),
            &mut LogVarianceLogOracle::new(target.clone()),
            &DVector::from_vec(vec![cfg.init_log_sigma]),
            &config,
        )?;
        let mut barrier_config = SamplerConfig::new(
            eps_barrier,
            BatchScheme::Replacement(cfg.batch_size),
            cfg.n_iters,
            chain_seed,
        );
        barrier_config.store_stride = config.store_stride;
        barrier_config.max_seconds = per_chain_budget;
        let barrier = run_mirror_chain(
            &MirrorMap::log_barrier_positive(),
            &mut LogVarianceSigmaSqOracle::new(target.clone()),
            &DVector::from_vec(vec![(2.0 * cfg.init_log_sigma).exp()]),
            &barrier_config,
        )?;
        if matches!(unconstrained.status, ChainStatus::Diverged { .. }) {
            n_diverged += 1;
        }
        if barrier.status == ChainStatus::Completed {
            n_completed += 1;
            if let Some(m) = &barrier.primal_mean {
                pooled += m[0];
            }
        }
        report_seeds.push(json!({
            "seed": chain_seed,
            "log_scale_status": unconstrained.status,
            "barrier_status": barrier.status,
            "barrier_sigma_sq_mean": barrier.primal_mean.as_ref().map(|m| m[0]),
        }));
    }
    let pooled_mean = pooled / n_completed.max(1) as f64;
    write_json(
        &out.join("report.json"),
        &json!({
            "step_size": eps,
            "barrier_step_size": eps_barrier,
            "n_iters": cfg.n_iters,
            "seeds": report_seeds,
            "n_log_scale_diverged": n_diverged,
            "n_barrier_completed": n_completed,
            "barrier_pooled_sigma_sq_mean": pooled_mean,
            "quadrature": {"sigma_sq_mean": quad_mean, "sigma_sq_var": quad_var},
        }),
    )?;
    Ok(0)
}
