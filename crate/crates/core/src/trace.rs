//! Chain output storage and CSV serialization.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mirror_maps::MirrorMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainStatus {
    Completed,
    Diverged { at_iteration: u64 },
}

/// Stored chain states in dual coordinates, one row per stored iteration.
#[derive(Debug, Clone)]
pub struct Trace {
    pub dim: usize,
    /// Iteration index of each stored row.
    pub iters: Vec<u64>,
    pub rows: Vec<DVector<f64>>,
    pub status: ChainStatus,
    /// Running mean of the primal iterates from `mean_from` onward,
    /// accumulated over every iteration regardless of storage stride.
    pub primal_mean: Option<DVector<f64>>,
}

impl Trace {
    /// Stored rows after discarding the leading `frac` of them.
    pub fn post_burn_in(&self, frac: f64) -> &[DVector<f64>] {
        let skip = (self.rows.len() as f64 * frac).floor() as usize;
        &self.rows[skip.min(self.rows.len())..]
    }

    /// Map stored dual rows to primal coordinates, skipping rows that fall
    /// outside the domain; returns the primal rows and the skipped count.
    pub fn primal_rows(&self, map: &MirrorMap) -> (Vec<DVector<f64>>, usize) {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut dropped = 0usize;
        for r in &self.rows {
            match map.grad_phi_star(r) {
                Ok(p) => out.push(p),
                Err(_) => dropped += 1,
            }
        }
        (out, dropped)
    }

    /// Write rows as CSV with header `iter,coord_0,...,coord_{dim-1}`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_csv_rows(&mut file, &self.iters, &self.rows, self.dim)
    }
}

/// Shared CSV writer used for raw, corrected, and baseline traces.
pub fn write_csv_rows<W: Write>(
    out: &mut W,
    iters: &[u64],
    rows: &[DVector<f64>],
    dim: usize,
) -> std::io::Result<()> {
    write!(out, "iter")?;
    for j in 0..dim {
        write!(out, ",coord_{j}")?;
    }
    writeln!(out)?;
    for (it, row) in iters.iter().zip(rows) {
        write!(out, "{it}")?;
        for j in 0..dim {
            // {:?} prints f64 with round-trip precision.
            write!(out, ",{:?}", row[j])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Sidecar manifest describing a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub status: ChainStatus,
    pub n_iterations: u64,
    pub stored_rows: usize,
    pub wall_seconds: f64,
    pub config_echo: serde_json::Value,
}

impl Trace {
    pub fn empty(dim: usize) -> Self {
        Trace {
            dim,
            iters: Vec::new(),
            rows: Vec::new(),
            status: ChainStatus::Completed,
            primal_mean: None,
        }
    }
}

/// Convenience: primal rows of the post-burn-in portion.
pub fn primal_post_burn_in(
    trace: &Trace,
    map: &MirrorMap,
    frac: f64,
) -> Result<(Vec<DVector<f64>>, usize)> {
    let rows = trace.post_burn_in(frac);
    let mut out = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for r in rows {
        match map.grad_phi_star(r) {
            Ok(p) => out.push(p),
            Err(_) => dropped += 1,
        }
    }
    Ok((out, dropped))
}
