//! Python bindings for the mirror Langevin sampling library: mirror maps,
//! the chain runner on the built-in toy posteriors, the Lyapunov-based
//! variance correction, and the Polya-Gamma sampler.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use smld_core::correction;
use smld_core::glmm::polya_gamma;
use smld_core::mirror_maps;
use smld_core::oracles::quadrature_mean_var;
use smld_core::rng::derive_stream;
use smld_core::samplers::{self, BatchScheme, SamplerConfig};
use smld_core::toy_targets::{
    GaussianWishartOracle, GaussianWishartTarget, LogVarianceLogOracle,
    LogVarianceSigmaSqOracle, LogVarianceTarget,
};
use smld_core::trace::ChainStatus;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 || rows.iter().any(|row| row.len() != rows[0].len()) {
        return Err(PyValueError::new_err("ragged or empty matrix"));
    }
    Ok(DMatrix::from_fn(r, rows[0].len(), |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Strictly convex barrier and its dual machinery. Construct via the
/// static methods `euclidean`, `log_barrier_positive`, `log_det_pd`, or
/// `product`.
#[pyclass(name = "MirrorMap", from_py_object)]
#[derive(Clone)]
struct PyMirrorMap {
    inner: mirror_maps::MirrorMap,
}

#[pymethods]
impl PyMirrorMap {
    #[staticmethod]
    fn euclidean(dim: usize) -> Self {
        PyMirrorMap {
            inner: mirror_maps::MirrorMap::euclidean(dim),
        }
    }

    #[staticmethod]
    fn log_barrier_positive() -> Self {
        PyMirrorMap {
            inner: mirror_maps::MirrorMap::log_barrier_positive(),
        }
    }

    #[staticmethod]
    fn log_det_pd(q: usize) -> Self {
        PyMirrorMap {
            inner: mirror_maps::MirrorMap::log_det_pd(q),
        }
    }

    #[staticmethod]
    fn product(parts: Vec<PyMirrorMap>) -> Self {
        PyMirrorMap {
            inner: mirror_maps::MirrorMap::product(parts.into_iter().map(|p| p.inner).collect()),
        }
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Primal point -> dual point.
    fn grad_phi(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .grad_phi(&to_vector(theta))
            .map_err(err)?
            .as_slice()
            .to_vec())
    }

    /// Dual point -> primal point (inverse of grad_phi).
    fn grad_phi_star(&self, vartheta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .grad_phi_star(&to_vector(vartheta))
            .map_err(err)?
            .as_slice()
            .to_vec())
    }

    /// Covariance of the metric noise injected at a dual point.
    fn metric_matrix(&self, vartheta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_matrix(
            &self.inner.metric_matrix(&to_vector(vartheta)).map_err(err)?,
        ))
    }

    fn dual_valid(&self, vartheta: Vec<f64>) -> bool {
        self.inner.dual_valid(&to_vector(vartheta))
    }
}

/// eps = S / n^(1 + delta) with delta = (log S / log n + 1) / 2.
#[pyfunction]
fn step_size_rule(n_terms: usize, batch_size: usize) -> f64 {
    samplers::step_size_rule(n_terms, batch_size)
}

/// E[PG(b, c)] = (b / 2c) tanh(c / 2).
#[pyfunction]
fn polya_gamma_mean(b: u32, c: f64) -> f64 {
    polya_gamma::polya_gamma_mean(b, c)
}

/// Draw `n` Polya-Gamma PG(b, c) variates with a reproducible stream.
#[pyfunction]
fn polya_gamma_sample(b: u32, c: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = derive_stream(seed, &[0x70]);
    (0..n).map(|_| polya_gamma::polya_gamma_draw(&mut rng, b, c)).collect()
}

/// Solve X J^{-1} V + V J^{-1} X = 2 Gamma for symmetric PD inputs.
#[pyfunction]
fn lyapunov_solve(
    j: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let x = correction::lyapunov_solve(&to_matrix(j)?, &to_matrix(v)?, &to_matrix(gamma)?)
        .map_err(err)?;
    Ok(from_matrix(&x))
}

fn chain_result(
    py: Python<'_>,
    map: &mirror_maps::MirrorMap,
    trace: smld_core::trace::Trace,
) -> PyResult<Py<pyo3::types::PyDict>> {
    use pyo3::types::PyDict;
    let d = PyDict::new(py);
    match trace.status {
        ChainStatus::Completed => d.set_item("status", "completed")?,
        ChainStatus::Diverged { at_iteration } => {
            d.set_item("status", "diverged")?;
            d.set_item("diverged_at", at_iteration)?;
        }
    }
    d.set_item(
        "primal_mean",
        trace.primal_mean.as_ref().map(|m| m.as_slice().to_vec()),
    )?;
    let (primal, dropped) = trace.primal_rows(map);
    d.set_item(
        "primal_rows",
        primal.iter().map(|r| r.as_slice().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item("dropped_rows", dropped)?;
    d.set_item(
        "dual_rows",
        trace.rows.iter().map(|r| r.as_slice().to_vec()).collect::<Vec<_>>(),
    )?;
    Ok(d.into())
}

/// Run the mirrored chain on the one-dimensional variance posterior.
/// `sigma_sq_coordinates` selects the positive barrier parameterization;
/// otherwise the chain runs unconstrained in log(sigma).
#[pyfunction]
#[pyo3(signature = (n, sigma_true, data_seed, step_size, batch_size, n_iters, seed,
                    sigma_sq_coordinates=true, store_stride=1))]
#[allow(clippy::too_many_arguments)]
fn fit_variance_toy(
    py: Python<'_>,
    n: usize,
    sigma_true: f64,
    data_seed: u64,
    step_size: f64,
    batch_size: usize,
    n_iters: u64,
    seed: u64,
    sigma_sq_coordinates: bool,
    store_stride: u64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let target = LogVarianceTarget::simulate(n, sigma_true, data_seed);
    let mut config = SamplerConfig::new(
        step_size,
        BatchScheme::Replacement(batch_size),
        n_iters,
        seed,
    );
    config.store_stride = store_stride;
    let (map, init) = if sigma_sq_coordinates {
        (mirror_maps::MirrorMap::log_barrier_positive(), vec![1.0])
    } else {
        (mirror_maps::MirrorMap::euclidean(1), vec![0.0])
    };
    let trace = if sigma_sq_coordinates {
        samplers::run_mirror_chain(
            &map,
            &mut LogVarianceSigmaSqOracle::new(target),
            &to_vector(init),
            &config,
        )
    } else {
        samplers::run_mirror_chain(
            &map,
            &mut LogVarianceLogOracle::new(target),
            &to_vector(init),
            &config,
        )
    }
    .map_err(err)?;
    chain_result(py, &map, trace)
}

/// Posterior mean and variance of sigma^2 (or log sigma) for the variance
/// toy, by adaptive quadrature.
#[pyfunction]
#[pyo3(signature = (n, sigma_true, data_seed, of_sigma_sq=true))]
fn variance_toy_oracle(
    n: usize,
    sigma_true: f64,
    data_seed: u64,
    of_sigma_sq: bool,
) -> (f64, f64) {
    let target = LogVarianceTarget::simulate(n, sigma_true, data_seed);
    if of_sigma_sq {
        quadrature_mean_var(&target, |t| (2.0 * t).exp())
    } else {
        quadrature_mean_var(&target, |t| t)
    }
}

/// Run the mirrored chain on the conjugate covariance toy and apply the
/// Lyapunov variance correction; returns raw and corrected dual moments.
#[pyfunction]
#[pyo3(signature = (n, sigma_true, prior_df, prior_scale, data_seed, step_size, batch_size,
                    n_iters, seed, burn_in_fraction=0.1, store_stride=1))]
#[allow(clippy::too_many_arguments)]
fn fit_covariance_toy(
    py: Python<'_>,
    n: usize,
    sigma_true: Vec<Vec<f64>>,
    prior_df: f64,
    prior_scale: Vec<Vec<f64>>,
    data_seed: u64,
    step_size: f64,
    batch_size: usize,
    n_iters: u64,
    seed: u64,
    burn_in_fraction: f64,
    store_stride: u64,
) -> PyResult<Py<pyo3::types::PyDict>> {
    use pyo3::types::PyDict;
    let target = GaussianWishartTarget::simulate(
        n,
        &to_matrix(sigma_true)?,
        prior_df,
        to_matrix(prior_scale)?,
        data_seed,
    )
    .map_err(err)?;
    let q = target.q();
    let map = mirror_maps::MirrorMap::log_det_pd(q);
    let mut config = SamplerConfig::new(
        step_size,
        BatchScheme::Replacement(batch_size),
        n_iters,
        seed,
    );
    config.store_stride = store_stride;
    let init = smld_core::vech::vech(&DMatrix::identity(q, q));
    let mut oracle = GaussianWishartOracle::new(target);
    let trace = samplers::run_mirror_chain(&map, &mut oracle, &init, &config).map_err(err)?;
    let d = PyDict::new(py);
    if let ChainStatus::Diverged { at_iteration } = trace.status {
        d.set_item("status", "diverged")?;
        d.set_item("diverged_at", at_iteration)?;
        return Ok(d.into());
    }
    let rows = trace.post_burn_in(burn_in_fraction);
    let (mean, _) = smld_core::linalg::mean_cov(rows);
    let theta_hat = map.grad_phi_star(&mean).map_err(err)?;
    let idx: Vec<usize> = (0..oracle_terms(&oracle)).collect();
    let grads = smld_core::samplers::GradOracle::grad_terms(&mut oracle, 0, &idx, &theta_hat)
        .map_err(err)?;
    let dim = theta_hat.len();
    let mut gmean = DVector::zeros(dim);
    for g in &grads {
        gmean += &g.grad;
    }
    gmean /= grads.len() as f64;
    let mut psi = DMatrix::zeros(dim, dim);
    for g in &grads {
        let c = &g.grad - &gmean;
        psi += &c * c.transpose();
    }
    psi /= grads.len() as f64;
    let corr = correction::build_correction(&map, rows, step_size, n, batch_size, &psi)
        .map_err(err)?;
    d.set_item("status", "completed")?;
    d.set_item("dual_mean", corr.dual_mean.as_slice().to_vec())?;
    d.set_item("dual_cov_raw", from_matrix(&corr.dual_cov_raw))?;
    d.set_item("dual_cov_corrected", from_matrix(&corr.dual_cov_corrected))?;
    d.set_item("lyapunov_residual", corr.lyapunov_residual)?;
    Ok(d.into())
}

fn oracle_terms(oracle: &GaussianWishartOracle) -> usize {
    smld_core::samplers::GradOracle::n_terms(oracle)
}

#[pymodule]
fn smld(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMirrorMap>()?;
    m.add_function(wrap_pyfunction!(step_size_rule, m)?)?;
    m.add_function(wrap_pyfunction!(polya_gamma_mean, m)?)?;
    m.add_function(wrap_pyfunction!(polya_gamma_sample, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_solve, m)?)?;
    m.add_function(wrap_pyfunction!(fit_variance_toy, m)?)?;
    m.add_function(wrap_pyfunction!(variance_toy_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_covariance_toy, m)?)?;
    Ok(())
}
