//! Posterior summaries: per-coordinate moments and equal-tailed credible
//! intervals, batch-means Monte Carlo standard errors, and derived mixed
//! model quantities (random-effect scales, correlations, odds ratios).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmldError};
use crate::linalg::spd_inverse;
use crate::vech::{unvech, vech_len};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordSummary {
    pub mean: f64,
    pub variance: f64,
    /// Equal-tailed 95% interval from empirical quantiles.
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Empirical quantile by linear interpolation on the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn summarize_scalar(samples: &[f64]) -> Result<CoordSummary> {
    if samples.is_empty() {
        return Err(SmldError::Degenerate("empty sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(CoordSummary {
        mean,
        variance,
        ci_lower: quantile(&sorted, 0.025),
        ci_upper: quantile(&sorted, 0.975),
    })
}

/// Column-wise summaries of a stack of equally sized vectors.
pub fn summarize(rows: &[DVector<f64>]) -> Result<Vec<CoordSummary>> {
    if rows.is_empty() {
        return Err(SmldError::Degenerate("empty trace".into()));
    }
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            summarize_scalar(&col)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mcse {
    pub mcse: f64,
    pub ess: f64,
}

/// Batch-means Monte Carlo standard error of the sample mean, using
/// floor(sqrt(n)) batches; ESS follows as sample variance over mcse^2.
pub fn batch_means(samples: &[f64]) -> Result<Mcse> {
    let n = samples.len();
    if n < 16 {
        return Err(SmldError::Degenerate(
            "batch means needs at least 16 samples".into(),
        ));
    }
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch_len = n / n_batches;
    let used = n_batches * batch_len;
    let grand = samples[..used].iter().sum::<f64>() / used as f64;
    let mut ss = 0.0;
    for b in 0..n_batches {
        let m = samples[b * batch_len..(b + 1) * batch_len]
            .iter()
            .sum::<f64>()
            / batch_len as f64;
        ss += (m - grand) * (m - grand);
    }
    let var_batch_means = ss / (n_batches - 1) as f64;
    let mcse = (var_batch_means / n_batches as f64).sqrt();
    let sample_var = samples[..used]
        .iter()
        .map(|v| (v - grand) * (v - grand))
        .sum::<f64>()
        / (used - 1) as f64;
    let ess = if mcse > 0.0 {
        sample_var / (mcse * mcse)
    } else {
        used as f64
    };
    Ok(Mcse { mcse, ess })
}

/// Derived mixed-model summaries computed sample by sample from primal
/// rows laid out as (beta, vech Omega).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmmDerived {
    /// Marginal random-effect standard deviations sqrt(Sigma_aa),
    /// Sigma = Omega^{-1}.
    pub sigma_sd: Vec<CoordSummary>,
    /// Pairwise random-effect correlations in vech order, diagonal skipped.
    pub sigma_corr: Vec<CoordSummary>,
    /// exp(beta_k) per coordinate (odds ratios under a logit link).
    pub odds_ratio: Vec<CoordSummary>,
}

pub fn glmm_derived(rows: &[DVector<f64>], p: usize, q: usize) -> Result<GlmmDerived> {
    if rows.is_empty() {
        return Err(SmldError::Degenerate("empty trace".into()));
    }
    let d = p + vech_len(q);
    if rows[0].len() != d {
        return Err(SmldError::Shape("row length does not match (p, q)".into()));
    }
    let mut sds: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); q];
    let mut corrs: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); q * (q - 1) / 2];
    let mut ors: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); p];
    for r in rows {
        let omega = unvech(r.rows(p, vech_len(q)).as_slice(), q);
        let sigma: DMatrix<f64> = spd_inverse(&omega)?;
        for a in 0..q {
            sds[a].push(sigma[(a, a)].sqrt());
        }
        let mut k = 0;
        for b in 0..q {
            for a in (b + 1)..q {
                corrs[k].push(sigma[(a, b)] / (sigma[(a, a)] * sigma[(b, b)]).sqrt());
                k += 1;
            }
        }
        for c in 0..p {
            ors[c].push(r[c].exp());
        }
    }
    Ok(GlmmDerived {
        sigma_sd: sds.iter().map(|v| summarize_scalar(v)).collect::<Result<_>>()?,
        sigma_corr: corrs
            .iter()
            .map(|v| summarize_scalar(v))
            .collect::<Result<_>>()?,
        odds_ratio: ors.iter().map(|v| summarize_scalar(v)).collect::<Result<_>>()?,
    })
}
