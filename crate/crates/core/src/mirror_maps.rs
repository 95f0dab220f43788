//! Barrier functions and their mirror maps.
//!
//! A mirror map bundles a strictly convex barrier phi, its gradient
//! (the map to dual coordinates), the conjugate gradient (the inverse map),
//! and the metric action used to generate position-dependent noise.
//! Supported parameter spaces: unconstrained vectors, positive scalars with
//! a log barrier, positive-definite matrices with a log-det barrier, and
//! products of these. Symmetric matrices travel as vech vectors
//! (lower triangle, column-major, unit weights).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmldError};
use crate::linalg::matrix_sqrt;
use crate::vech::{dup_weights, unvech, vech, vech_indices, vech_len};

#[derive(Debug, Clone)]
pub enum MapKind {
    /// phi(x) = ||x||^2 / 2; the mirror map is the identity.
    Euclidean(usize),
    /// phi(s) = -log s on s > 0; the mirror map is s -> -1/s.
    LogBarrierPositive,
    /// phi(M) = -log det M on the q x q PD cone; the mirror map is M -> -M^{-1}.
    LogDetPd(usize),
    /// Concatenated segments with block-diagonal metric.
    Product(Vec<MirrorMap>),
}

#[derive(Debug, Clone)]
pub struct MirrorMap {
    kind: MapKind,
}

/// A leaf segment together with its offset into the flat coordinate vector.
struct Segment<'a> {
    kind: &'a MapKind,
    offset: usize,
    len: usize,
}

impl MirrorMap {
    pub fn euclidean(dim: usize) -> Self {
        MirrorMap {
            kind: MapKind::Euclidean(dim),
        }
    }

    pub fn log_barrier_positive() -> Self {
        MirrorMap {
            kind: MapKind::LogBarrierPositive,
        }
    }

    pub fn log_det_pd(q: usize) -> Self {
        assert!(q >= 1);
        MirrorMap {
            kind: MapKind::LogDetPd(q),
        }
    }

    pub fn product(parts: Vec<MirrorMap>) -> Self {
        MirrorMap {
            kind: MapKind::Product(parts),
        }
    }

    /// Flat coordinate dimension.
    pub fn dim(&self) -> usize {
        match &self.kind {
            MapKind::Euclidean(d) => *d,
            MapKind::LogBarrierPositive => 1,
            MapKind::LogDetPd(q) => vech_len(*q),
            MapKind::Product(parts) => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    fn segments(&self) -> Vec<Segment<'_>> {
        fn collect<'a>(map: &'a MirrorMap, offset: &mut usize, out: &mut Vec<Segment<'a>>) {
            match &map.kind {
                MapKind::Product(parts) => {
                    for p in parts {
                        collect(p, offset, out);
                    }
                }
                leaf => {
                    let len = map.dim();
                    out.push(Segment {
                        kind: leaf,
                        offset: *offset,
                        len,
                    });
                    *offset += len;
                }
            }
        }
        let mut out = Vec::new();
        let mut offset = 0;
        collect(self, &mut offset, &mut out);
        out
    }

    fn check_len(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(SmldError::Shape(format!(
                "{what}: expected length {}, got {}",
                self.dim(),
                v.len()
            )));
        }
        Ok(())
    }

    /// Barrier value phi(theta).
    pub fn phi(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_len(theta, "phi")?;
        let mut total = 0.0;
        for seg in self.segments() {
            let x = theta.rows(seg.offset, seg.len);
            total += match seg.kind {
                MapKind::Euclidean(_) => 0.5 * x.norm_squared(),
                MapKind::LogBarrierPositive => {
                    let s = x[0];
                    if s <= 0.0 {
                        return Err(SmldError::Domain("phi: nonpositive scalar".into()));
                    }
                    -s.ln()
                }
                MapKind::LogDetPd(q) => {
                    let omega = unvech(x.as_slice(), *q);
                    let (eigvals, tr) = pd_eigvals(&omega, "phi")?;
                    let _ = tr;
                    -eigvals.iter().map(|l| l.ln()).sum::<f64>()
                }
                MapKind::Product(_) => unreachable!(),
            };
        }
        Ok(total)
    }

    /// Mirror map: theta -> vartheta = grad phi(theta).
    pub fn grad_phi(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(theta, "grad_phi")?;
        let mut out = DVector::zeros(self.dim());
        for seg in self.segments() {
            let x = theta.rows(seg.offset, seg.len);
            match seg.kind {
                MapKind::Euclidean(_) => out.rows_mut(seg.offset, seg.len).copy_from(&x),
                MapKind::LogBarrierPositive => {
                    let s = x[0];
                    if s <= 0.0 || !s.is_finite() {
                        return Err(SmldError::Domain(format!(
                            "grad_phi: nonpositive scalar {s}"
                        )));
                    }
                    out[seg.offset] = -1.0 / s;
                }
                MapKind::LogDetPd(q) => {
                    let omega = unvech(x.as_slice(), *q);
                    let inv = pd_inverse(&omega, "grad_phi")?;
                    out.rows_mut(seg.offset, seg.len).copy_from(&(-vech(&inv)));
                }
                MapKind::Product(_) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Conjugate gradient: vartheta -> theta = grad phi*(vartheta),
    /// the inverse of grad_phi.
    pub fn grad_phi_star(&self, vartheta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(vartheta, "grad_phi_star")?;
        let mut out = DVector::zeros(self.dim());
        for seg in self.segments() {
            let v = vartheta.rows(seg.offset, seg.len);
            match seg.kind {
                MapKind::Euclidean(_) => out.rows_mut(seg.offset, seg.len).copy_from(&v),
                MapKind::LogBarrierPositive => {
                    let t = v[0];
                    if t >= 0.0 || !t.is_finite() {
                        return Err(SmldError::Domain(format!(
                            "grad_phi_star: dual scalar {t} not negative"
                        )));
                    }
                    out[seg.offset] = -1.0 / t;
                }
                MapKind::LogDetPd(q) => {
                    let neg = -unvech(v.as_slice(), *q);
                    let omega = pd_inverse(&neg, "grad_phi_star")?;
                    out.rows_mut(seg.offset, seg.len).copy_from(&vech(&omega));
                }
                MapKind::Product(_) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Metric noise action at a dual point: returns a vector whose covariance
    /// equals `metric_matrix(vartheta)`. Unconstrained and positive-scalar
    /// segments consume the caller's standard normal vector `z`; log-det
    /// segments draw an internal symmetric Gaussian matrix W (all entries
    /// standard normal) and return vech(sqrt(S) W sqrt(S)) with S the primal
    /// covariance block.
    pub fn metric_noise(
        &self,
        vartheta: &DVector<f64>,
        z: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        self.check_len(vartheta, "metric_noise")?;
        self.check_len(z, "metric_noise z")?;
        let mut out = DVector::zeros(self.dim());
        for seg in self.segments() {
            let v = vartheta.rows(seg.offset, seg.len);
            match seg.kind {
                MapKind::Euclidean(_) => out
                    .rows_mut(seg.offset, seg.len)
                    .copy_from(&z.rows(seg.offset, seg.len)),
                MapKind::LogBarrierPositive => {
                    let t = v[0];
                    if t >= 0.0 {
                        return Err(SmldError::Domain("metric_noise: dual scalar".into()));
                    }
                    // Primal covariance block is -t = 1/s.
                    out[seg.offset] = z[seg.offset] * (-t);
                }
                MapKind::LogDetPd(q) => {
                    let sigma = -unvech(v.as_slice(), *q);
                    let (_, _) = pd_eigvals(&sigma, "metric_noise")?;
                    let root = matrix_sqrt(&sigma)?;
                    let mut w = DMatrix::zeros(*q, *q);
                    for j in 0..*q {
                        for i in j..*q {
                            let g: f64 = rng.sample(StandardNormal);
                            w[(i, j)] = g;
                            w[(j, i)] = g;
                        }
                    }
                    let noise = &root * w * &root;
                    out.rows_mut(seg.offset, seg.len).copy_from(&vech(&noise));
                }
                MapKind::Product(_) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Dense covariance of `metric_noise` at a dual point, in flat
    /// coordinates. Block-diagonal across segments. For the log-det segment
    /// with primal covariance S and symmetric root T = sqrt(S):
    /// entry ((ab),(cd)) = S_ac S_bd + S_ad S_bc - sum_i T_ai T_bi T_ci T_di,
    /// reflecting the unit-variance diagonal of the internal W.
    pub fn metric_matrix(&self, vartheta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(vartheta, "metric_matrix")?;
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for seg in self.segments() {
            let v = vartheta.rows(seg.offset, seg.len);
            match seg.kind {
                MapKind::Euclidean(n) => {
                    for k in 0..*n {
                        out[(seg.offset + k, seg.offset + k)] = 1.0;
                    }
                }
                MapKind::LogBarrierPositive => {
                    let t = v[0];
                    if t >= 0.0 {
                        return Err(SmldError::Domain("metric_matrix: dual scalar".into()));
                    }
                    out[(seg.offset, seg.offset)] = t * t;
                }
                MapKind::LogDetPd(q) => {
                    let sigma = -unvech(v.as_slice(), *q);
                    pd_eigvals(&sigma, "metric_matrix")?;
                    let root = matrix_sqrt(&sigma)?;
                    let idx = vech_indices(*q);
                    for (r, &(a, b)) in idx.iter().enumerate() {
                        for (c, &(cc, dd)) in idx.iter().enumerate() {
                            let mut quartic = 0.0;
                            for i in 0..*q {
                                quartic +=
                                    root[(a, i)] * root[(b, i)] * root[(cc, i)] * root[(dd, i)];
                            }
                            out[(seg.offset + r, seg.offset + c)] = sigma[(a, cc)]
                                * sigma[(b, dd)]
                                + sigma[(a, dd)] * sigma[(b, cc)]
                                - quartic;
                        }
                    }
                }
                MapKind::Product(_) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Hessian of the barrier at the primal point grad_phi*(vartheta),
    /// expressed in duplication-weighted vech coordinates, where it is
    /// symmetric positive definite. For the log-det segment with primal
    /// covariance S the entries are
    /// ((aa),(cc)) = S_ac^2, ((aa),(cd)) = sqrt(2) S_ac S_ad,
    /// ((ab),(cd)) = S_ac S_bd + S_ad S_bc for off-diagonal pairs.
    pub fn mirror_hessian_weighted(&self, vartheta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(vartheta, "mirror_hessian_weighted")?;
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for seg in self.segments() {
            let v = vartheta.rows(seg.offset, seg.len);
            match seg.kind {
                MapKind::Euclidean(n) => {
                    for k in 0..*n {
                        out[(seg.offset + k, seg.offset + k)] = 1.0;
                    }
                }
                MapKind::LogBarrierPositive => {
                    let t = v[0];
                    if t >= 0.0 {
                        return Err(SmldError::Domain(
                            "mirror_hessian_weighted: dual scalar".into(),
                        ));
                    }
                    out[(seg.offset, seg.offset)] = t * t;
                }
                MapKind::LogDetPd(q) => {
                    let sigma = -unvech(v.as_slice(), *q);
                    pd_eigvals(&sigma, "mirror_hessian_weighted")?;
                    let idx = vech_indices(*q);
                    let sqrt2 = std::f64::consts::SQRT_2;
                    for (r, &(a, b)) in idx.iter().enumerate() {
                        for (c, &(cc, dd)) in idx.iter().enumerate() {
                            let val = match (a == b, cc == dd) {
                                (true, true) => sigma[(a, cc)] * sigma[(a, cc)],
                                (true, false) => sqrt2 * sigma[(a, cc)] * sigma[(a, dd)],
                                (false, true) => sqrt2 * sigma[(a, cc)] * sigma[(b, cc)],
                                (false, false) => {
                                    sigma[(a, cc)] * sigma[(b, dd)] + sigma[(a, dd)] * sigma[(b, cc)]
                                }
                            };
                            out[(seg.offset + r, seg.offset + c)] = val;
                        }
                    }
                }
                MapKind::Product(_) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Duplication weights per flat coordinate: 1 everywhere except
    /// off-diagonal vech coordinates of log-det segments, which get sqrt(2).
    pub fn dup_weights(&self) -> DVector<f64> {
        let mut out = DVector::from_element(self.dim(), 1.0);
        for seg in self.segments() {
            if let MapKind::LogDetPd(q) = seg.kind {
                for (k, w) in dup_weights(*q).into_iter().enumerate() {
                    out[seg.offset + k] = w;
                }
            }
        }
        out
    }

    /// Whether a dual vector lies in the dual domain.
    pub fn dual_valid(&self, vartheta: &DVector<f64>) -> bool {
        vartheta.len() == self.dim()
            && vartheta.iter().all(|v| v.is_finite())
            && self.grad_phi_star(vartheta).is_ok()
    }
}

/// Eigenvalues of a symmetric matrix required to be PD under the crate
/// threshold (min eigenvalue > 1e-12 * trace).
fn pd_eigvals(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SmldError::Domain(format!("{what}: non-finite entries")));
    }
    let es = m.clone().symmetric_eigen();
    let tr = m.trace();
    let min = es.eigenvalues.min();
    if !(tr > 0.0) || min <= 1e-12 * tr {
        return Err(SmldError::Domain(format!(
            "{what}: matrix not positive definite (min eig {min}, trace {tr})"
        )));
    }
    Ok((es.eigenvalues.iter().copied().collect(), tr))
}

fn pd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SmldError::Domain(format!("{what}: non-finite entries")));
    }
    let es = m.clone().symmetric_eigen();
    let tr = m.trace();
    let min = es.eigenvalues.min();
    if !(tr > 0.0) || min <= 1e-12 * tr {
        return Err(SmldError::Domain(format!(
            "{what}: matrix not positive definite (min eig {min}, trace {tr})"
        )));
    }
    let inv_d = DMatrix::from_diagonal(&es.eigenvalues.map(|l| 1.0 / l));
    Ok(&es.eigenvectors * inv_d * es.eigenvectors.transpose())
}
