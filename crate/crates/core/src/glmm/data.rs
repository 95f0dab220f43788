//! Grouped data containers, delimited-text I/O, and synthetic data
//! generation.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmldError};
use crate::glmm::family::Family;
use crate::linalg::matrix_sqrt;
use crate::rng::derive_stream;

#[derive(Debug, Clone)]
pub struct Group {
    pub y: DVector<f64>,
    /// Fixed-effect design, n_i x p.
    pub x: DMatrix<f64>,
    /// Random-effect design, n_i x q.
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupedData {
    pub groups: Vec<Group>,
    p: usize,
    q: usize,
}

impl GroupedData {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(SmldError::Shape("no groups".into()));
        }
        let p = groups[0].x.ncols();
        let q = groups[0].z.ncols();
        for (i, g) in groups.iter().enumerate() {
            let ni = g.y.len();
            if ni == 0 {
                return Err(SmldError::Shape(format!("group {i} has no observations")));
            }
            if g.x.nrows() != ni || g.z.nrows() != ni || g.x.ncols() != p || g.z.ncols() != q {
                return Err(SmldError::Shape(format!(
                    "group {i} has inconsistent design dimensions"
                )));
            }
        }
        Ok(GroupedData { groups, p, q })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Fail fast on responses outside the family's range.
    pub fn validate_responses(&self, family: &Family) -> Result<()> {
        for (i, g) in self.groups.iter().enumerate() {
            for (j, &y) in g.y.iter().enumerate() {
                if !family.valid_response(y) {
                    return Err(SmldError::Degenerate(format!(
                        "response {y} at group {i}, observation {j} invalid for {family:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write as delimited text: group_id, y, x_0.., z_0.. with header.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "group_id,y")?;
        for j in 0..self.p {
            write!(out, ",x_{j}")?;
        }
        for j in 0..self.q {
            write!(out, ",z_{j}")?;
        }
        writeln!(out)?;
        for (gid, g) in self.groups.iter().enumerate() {
            for r in 0..g.y.len() {
                write!(out, "{gid},{:?}", g.y[r])?;
                for j in 0..self.p {
                    write!(out, ",{:?}", g.x[(r, j)])?;
                }
                for j in 0..self.q {
                    write!(out, ",{:?}", g.z[(r, j)])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Read the format written by `write_csv`. Rows must be grouped by
    /// contiguous group_id; p and q are inferred from the header.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| SmldError::Shape(format!("cannot open {}: {e}", path.display())))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| SmldError::Shape("empty data file".into()))?
            .map_err(|e| SmldError::Shape(e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let p = cols.iter().filter(|c| c.starts_with("x_")).count();
        let q = cols.iter().filter(|c| c.starts_with("z_")).count();
        if cols.len() != 2 + p + q || cols[0] != "group_id" || cols[1] != "y" {
            return Err(SmldError::Shape(format!("unexpected header: {header}")));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| SmldError::Shape(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols.len() {
                return Err(SmldError::Shape(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    cols.len()
                )));
            }
            let gid: usize = fields[0]
                .parse()
                .map_err(|_| SmldError::Shape(format!("bad group_id on row {}", lineno + 2)))?;
            let vals: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| SmldError::Shape(format!("bad number on row {}", lineno + 2)))
                })
                .collect::<Result<_>>()?;
            rows.push((gid, vals));
        }
        let mut groups: Vec<Group> = Vec::new();
        let mut i = 0;
        while i < rows.len() {
            let gid = rows[i].0;
            let mut j = i;
            while j < rows.len() && rows[j].0 == gid {
                j += 1;
            }
            let ni = j - i;
            let mut y = DVector::zeros(ni);
            let mut x = DMatrix::zeros(ni, p);
            let mut z = DMatrix::zeros(ni, q);
            for (r, (_, vals)) in rows[i..j].iter().enumerate() {
                y[r] = vals[0];
                for c in 0..p {
                    x[(r, c)] = vals[1 + c];
                }
                for c in 0..q {
                    z[(r, c)] = vals[1 + p + c];
                }
            }
            groups.push(Group { y, x, z });
            i = j;
        }
        GroupedData::new(groups)
    }
}

/// Simulate grouped data: covariates are an intercept column plus standard
/// normal entries (for both designs), random effects are Normal(0,
/// sigma_true), responses follow the family at eta = x'beta + z'gamma.
pub fn simulate_glmm(
    family: &Family,
    n_groups: usize,
    n_per_group: usize,
    beta_true: &DVector<f64>,
    sigma_true: &DMatrix<f64>,
    seed: u64,
) -> Result<GroupedData> {
    let p = beta_true.len();
    let q = sigma_true.nrows();
    let root = matrix_sqrt(sigma_true)?;
    let mut groups = Vec::with_capacity(n_groups);
    for i in 0..n_groups {
        let mut rng = derive_stream(seed, &[0x51, i as u64]);
        let mut x = DMatrix::zeros(n_per_group, p);
        let mut z = DMatrix::zeros(n_per_group, q);
        for r in 0..n_per_group {
            x[(r, 0)] = 1.0;
            for c in 1..p {
                x[(r, c)] = rng.sample::<f64, _>(StandardNormal);
            }
            z[(r, 0)] = 1.0;
            for c in 1..q {
                z[(r, c)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let gamma = &root
            * DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::zeros(n_per_group);
        for r in 0..n_per_group {
            let eta = (x.row(r) * beta_true)[(0, 0)] + (z.row(r) * &gamma)[(0, 0)];
            y[r] = draw_response(family, eta, &mut rng)?;
        }
        groups.push(Group { y, x, z });
    }
    GroupedData::new(groups)
}

fn draw_response<R: Rng>(family: &Family, eta: f64, rng: &mut R) -> Result<f64> {
    Ok(match family {
        Family::GaussianLinear => eta + rng.sample::<f64, _>(StandardNormal),
        Family::BinomialLogit(m) => {
            let p = family.mean(eta) / *m as f64;
            (0..*m).filter(|_| rng.random::<f64>() < p).count() as f64
        }
        Family::BernoulliProbit => {
            if rng.random::<f64>() < family.mean(eta) {
                1.0
            } else {
                0.0
            }
        }
        Family::Poisson => {
            let lambda = eta.exp();
            if !(lambda.is_finite() && lambda < 1e9) {
                return Err(SmldError::Degenerate(format!(
                    "Poisson rate overflow at eta {eta}"
                )));
            }
            let d = rand_distr::Poisson::new(lambda.max(1e-12))
                .map_err(|e| SmldError::Degenerate(e.to_string()))?;
            rng.sample::<f64, _>(d)
        }
    })
}
