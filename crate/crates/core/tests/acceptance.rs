//! End-to-end acceptance checks for the full pipeline: each test exercises
//! one quantitative claim at its stated tolerance and prints a single
//! PASS/FAIL line (run with `--nocapture` to see them).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use smld_core::correction::{build_correction, lyapunov_residual, lyapunov_solve};
use smld_core::glmm::conditional::GroupState;
use smld_core::glmm::data::simulate_glmm;
use smld_core::glmm::family::Family;
use smld_core::glmm::polya_gamma::{polya_gamma_draw, polya_gamma_mean};
use smld_core::glmm::{full_psi_hat, stochastic_grad, GlmmModel, GlmmOracle, Priors};
use smld_core::linalg::{mean_cov, random_spd, spd_inverse};
use smld_core::mirror_maps::MirrorMap;
use smld_core::oracles::gibbs::run_gibbs;
use smld_core::oracles::{finite_diff_grad, quadrature_mean_var, wishart_posterior_moments};
use smld_core::rng::derive_stream;
use smld_core::samplers::{
    run_mirror_chain, step_size_rule, BatchScheme, GradOracle, SamplerConfig,
};
use smld_core::summary::batch_means;
use smld_core::toy_targets::{
    GaussianWishartOracle, GaussianWishartTarget, LogVarianceLogOracle, LogVarianceSigmaSqOracle,
    LogVarianceTarget,
};
use smld_core::trace::ChainStatus;
use smld_core::vech::vech;

fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name} failed: {detail}");
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Batch-means standard error of the mean with a fixed batch count, for
/// chains whose autocorrelation length exceeds sqrt(n)-sized batches.
fn mcse_long_batches(col: &[f64], n_batches: usize) -> f64 {
    let len = col.len() / n_batches;
    let grand = col[..len * n_batches].iter().sum::<f64>() / (len * n_batches) as f64;
    let mut var = 0.0;
    for b in 0..n_batches {
        let m = col[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64;
        var += (m - grand) * (m - grand);
    }
    var /= (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

/// Population covariance (divide by n) of per-term gradients at theta.
fn per_term_grad_cov(oracle: &mut GaussianWishartOracle, theta: &DVector<f64>) -> DMatrix<f64> {
    let n = oracle.n_terms();
    let idx: Vec<usize> = (0..n).collect();
    let grads = oracle.grad_terms(0, &idx, theta).unwrap();
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
    cov / n as f64
}

#[test]
fn acceptance_01_conjugate_toy_mean_and_variance_errors() {
    let sigma_true = DMatrix::from_row_slice(2, 2, &[1.5, 0.25, 0.25, 1.5]);
    let n = 5000usize;
    let s = 5usize;
    let eps = s as f64 / (n as f64).powf(1.3);
    let k = (20.0 / eps).ceil() as u64;
    let map = MirrorMap::log_det_pd(2);
    let n_datasets = 10;
    // Per vech entry (11), (21), (22): absolute errors across datasets.
    let mut mean_errs = vec![Vec::new(); 3];
    let mut raw_var_errs = vec![Vec::new(); 3];
    let mut corr_var_errs = vec![Vec::new(); 3];
    for ds in 0..n_datasets {
        let target = GaussianWishartTarget::simulate(
            n,
            &sigma_true,
            2.0,
            DMatrix::identity(2, 2),
            1000 + ds,
        )
        .unwrap();
        let moments = wishart_posterior_moments(&target).unwrap();
        let mut oracle = GaussianWishartOracle::new(target);
        let config = SamplerConfig::new(eps, BatchScheme::Replacement(s), k, 2000 + ds);
        let init = vech(&DMatrix::identity(2, 2));
        let trace = run_mirror_chain(&map, &mut oracle, &init, &config).unwrap();
        assert_eq!(trace.status, ChainStatus::Completed, "chain diverged");
        let rows = trace.post_burn_in(0.1);
        let (dual_mean, dual_cov) = mean_cov(rows);
        // Dual coordinates are -vech(Sigma), so Sigma moments read off
        // directly (mean negated, covariance unchanged).
        let theta_hat = map.grad_phi_star(&dual_mean).unwrap();
        let psi = per_term_grad_cov(&mut oracle, &theta_hat);
        let corr = build_correction(&map, rows, eps, n, s, &psi).unwrap();
        let entries = [(0usize, 0usize, 0usize), (1, 1, 0), (2, 1, 1)];
        for (j, a, b) in entries {
            mean_errs[j].push((-dual_mean[j] - moments.mean[(a, b)]).abs());
            raw_var_errs[j].push((dual_cov[(j, j)] - moments.var[(a, b)]).abs());
            corr_var_errs[j].push((corr.dual_cov_corrected[(j, j)] - moments.var[(a, b)]).abs());
        }
    }
    let mean_med: Vec<f64> = mean_errs.iter_mut().map(|v| median(v)).collect();
    let raw_med: Vec<f64> = raw_var_errs.iter_mut().map(|v| median(v)).collect();
    let corr_med: Vec<f64> = corr_var_errs.iter_mut().map(|v| median(v)).collect();
    let pass_mean = mean_med.iter().all(|e| *e <= 5e-3);
    // Diagonal entries are vech indices 0 and 2.
    let pass_raw = [0usize, 2].iter().all(|&j| (0.05..=0.15).contains(&raw_med[j]));
    let pass_corr = corr_med.iter().all(|e| *e <= 5e-4);
    report(
        "01 conjugate toy moments",
        pass_mean && pass_raw && pass_corr,
        &format!(
            "median mean errs {mean_med:?} (<=5e-3), raw var errs {raw_med:?} \
             (diag in [0.05,0.15]), corrected var errs {corr_med:?} (<=5e-4)"
        ),
    );
}

#[test]
fn acceptance_02_log_variance_divergence_vs_barrier_stability() {
    let n = 1000usize;
    let s = 5usize;
    let eps = s as f64 / (n as f64).powf(1.4);
    let n_iters = 5_000_000u64;
    let target = LogVarianceTarget::simulate(n, 1.0, 300);
    let (quad_mean, quad_var) = quadrature_mean_var(&target, |t| (2.0 * t).exp());

    let mut n_diverged = 0usize;
    for seed in 0..20u64 {
        let mut oracle = LogVarianceLogOracle::new(target.clone());
        let map = MirrorMap::euclidean(1);
        let mut config =
            SamplerConfig::new(eps, BatchScheme::Replacement(s), n_iters, 400 + seed);
        config.store_stride = 100_000;
        let init = DVector::from_vec(vec![2f64.ln()]);
        let trace = run_mirror_chain(&map, &mut oracle, &init, &config).unwrap();
        if matches!(trace.status, ChainStatus::Diverged { .. }) {
            n_diverged += 1;
        }
    }

    // The mirrored chain runs at its own step rule eps = S / n^(1 + delta);
    // the aggressive S / n^1.4 above is what breaks the unconstrained chain.
    let eps_barrier = step_size_rule(n, s);
    let mut n_completed = 0usize;
    let mut pooled_mean = 0.0;
    for seed in 0..20u64 {
        let mut oracle = LogVarianceSigmaSqOracle::new(target.clone());
        let map = MirrorMap::log_barrier_positive();
        let mut config =
            SamplerConfig::new(eps_barrier, BatchScheme::Replacement(s), n_iters, 500 + seed);
        config.store_stride = 100_000;
        let init = DVector::from_vec(vec![4.0]);
        let trace = run_mirror_chain(&map, &mut oracle, &init, &config).unwrap();
        if trace.status == ChainStatus::Completed {
            n_completed += 1;
            pooled_mean += trace.primal_mean.unwrap()[0];
        }
    }
    pooled_mean /= n_completed.max(1) as f64;
    let mean_dev = (pooled_mean - quad_mean).abs() / quad_var.sqrt();
    let pass = n_diverged >= 1 && n_completed == 20 && mean_dev <= 3.0;
    report(
        "02 divergence dichotomy",
        pass,
        &format!(
            "unconstrained log-scale chains diverged {n_diverged}/20, barrier chains \
             completed {n_completed}/20, pooled sigma^2 mean {pooled_mean:.4} vs \
             quadrature {quad_mean:.4} ({mean_dev:.2} posterior SDs)"
        ),
    );
}

/// Closed-form per-group marginal gradient and inner-estimator covariance
/// for a GaussianLinear group with q = 1: the conditional of gamma is
/// Normal(m, c) with c = 1/(omega + z'z), m = c z'(y - X beta), and the
/// joint score is affine in (gamma, gamma^2), so all moments are explicit.
fn gaussian_group_exact(
    model: &GlmmModel,
    i: usize,
    beta: &DVector<f64>,
    omega: f64,
    r: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let g = &model.data.groups[i];
    let p = model.p();
    let ni = g.y.len();
    let mut ztz = 0.0;
    let mut ztr = 0.0;
    let mut a: DVector<f64> = DVector::zeros(p);
    let mut bcoef: DVector<f64> = DVector::zeros(p);
    for j in 0..ni {
        let zj = g.z[(j, 0)];
        let resid = g.y[j] - (g.x.row(j) * beta)[(0, 0)];
        ztz += zj * zj;
        ztr += zj * resid;
        for c in 0..p {
            a[c] += resid * g.x[(j, c)];
            bcoef[c] -= zj * g.x[(j, c)];
        }
    }
    let cvar = 1.0 / (omega + ztz);
    let m = cvar * ztr;
    let mut grad = DVector::zeros(p + 1);
    for c in 0..p {
        grad[c] = -(a[c] + bcoef[c] * m);
    }
    grad[p] = -(0.5 / omega - 0.5 * (m * m + cvar));
    let mut cov = DMatrix::zeros(p + 1, p + 1);
    for c in 0..p {
        for d in 0..p {
            cov[(c, d)] = bcoef[c] * bcoef[d] * cvar;
        }
        cov[(c, p)] = -bcoef[c] * m * cvar;
        cov[(p, c)] = cov[(c, p)];
    }
    cov[(p, p)] = 0.5 * cvar * cvar + m * m * cvar;
    (grad, cov / r as f64)
}

#[test]
fn acceptance_03_gradient_noise_estimator_unbiased() {
    let beta = DVector::from_vec(vec![0.5]);
    let omega = 1.2f64;
    let data = simulate_glmm(
        &Family::GaussianLinear,
        3,
        4,
        &beta,
        &DMatrix::from_element(1, 1, 1.0 / omega),
        310,
    )
    .unwrap();
    let model = GlmmModel::new(
        Family::GaussianLinear,
        data,
        Priors {
            tau_sq: 100.0,
            nu: 2.0,
            v_scale: DMatrix::identity(1, 1),
        },
    )
    .unwrap();
    let theta = model.pack(&beta, &DMatrix::from_element(1, 1, omega));
    let r = 5usize;

    // Brute force: exact per-group marginal gradients and estimator
    // covariances combined into the population-level noise covariance.
    let n = 3;
    let mut grads = Vec::new();
    let mut psis = Vec::new();
    for i in 0..n {
        let (g, psi) = gaussian_group_exact(&model, i, &beta, omega, r);
        grads.push(g);
        psis.push(psi);
    }
    let mut total = DVector::zeros(2);
    for g in &grads {
        total += g;
    }
    let gbar = total / n as f64;
    let mut exact = DMatrix::zeros(2, 2);
    for i in 0..n {
        let c = &grads[i] - &gbar;
        exact += c.clone() * c.transpose() + &psis[i];
    }
    exact /= n as f64;

    let reps = 10_000u64;
    let mut acc = DMatrix::zeros(2, 2);
    for rep in 0..reps {
        acc += full_psi_hat(&model, &theta, r, 0, 320, rep).unwrap();
    }
    let estimate = acc / reps as f64;
    let rel = (&estimate - &exact).norm() / exact.norm();
    report(
        "03 gradient noise estimator unbiased",
        rel <= 0.05,
        &format!("relative Frobenius error {rel:.4} over {reps} replicates (<=0.05)"),
    );
}

#[test]
fn acceptance_04_conditional_mc_gradient_matches_marginal() {
    let data = simulate_glmm(
        &Family::GaussianLinear,
        1,
        6,
        &DVector::from_vec(vec![0.5, -0.5]),
        &DMatrix::from_element(1, 1, 0.8),
        330,
    )
    .unwrap();
    let model = GlmmModel::new(
        Family::GaussianLinear,
        data,
        Priors {
            tau_sq: 100.0,
            nu: 2.0,
            v_scale: DMatrix::identity(1, 1),
        },
    )
    .unwrap();
    let marginal_neg_log = |t: &DVector<f64>| -> f64 {
        let (beta, omega) = model.unpack(t).unwrap();
        let g = &model.data.groups[0];
        let m = DMatrix::identity(g.y.len(), g.y.len())
            + &g.z * spd_inverse(&omega).unwrap() * g.z.transpose();
        let r = &g.y - &g.x * &beta;
        let chol = m.cholesky().unwrap();
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        0.5 * log_det + 0.5 * (r.transpose() * chol.solve(&r))[(0, 0)]
    };
    let mut point_rng = derive_stream(331, &[0]);
    let mut worst: f64 = 0.0;
    let mut all_pass = true;
    for point in 0..20u64 {
        let beta = DVector::from_vec(vec![
            point_rng.random_range(-1.0..1.0),
            point_rng.random_range(-1.0..1.0),
        ]);
        let omega = DMatrix::from_element(1, 1, point_rng.random_range(0.5..2.0));
        let theta = model.pack(&beta, &omega);
        let exact = finite_diff_grad(marginal_neg_log, &theta, 1e-6);
        let mut state = GroupState::fresh(1);
        let mut rng = derive_stream(332, &[point]);
        let (grad, psi, _) =
            stochastic_grad(&model, 0, &beta, &omega, 2000, 0, &mut state, &mut rng).unwrap();
        for kdx in 0..3 {
            let se = psi[(kdx, kdx)].sqrt().max(1e-12);
            let z = (grad[kdx] - exact[kdx]).abs() / se;
            worst = worst.max(z);
            if z > 3.0 {
                all_pass = false;
            }
        }
    }
    report(
        "04 conditional MC gradient",
        all_pass,
        &format!("worst |z| over 20 points x 3 coordinates = {worst:.2} (<=3)"),
    );
}

#[test]
fn acceptance_05_lyapunov_solver_residuals() {
    let mut rng = derive_stream(340, &[0]);
    let mut worst: f64 = 0.0;
    for d in [2usize, 3, 6, 20] {
        for _ in 0..25 {
            let j = random_spd(d, &mut rng);
            let v = random_spd(d, &mut rng);
            let g = random_spd(d, &mut rng);
            let x = lyapunov_solve(&j, &v, &g).unwrap();
            worst = worst.max(lyapunov_residual(&j, &v, &g, &x).unwrap());
        }
    }
    report(
        "05 Lyapunov solver",
        worst <= 1e-10,
        &format!("worst relative residual {worst:.2e} over 100 random SPD triples (<=1e-10)"),
    );
}

#[test]
fn acceptance_06_excess_variance_scales_with_step_size() {
    let sigma_true = DMatrix::from_row_slice(2, 2, &[1.5, 0.25, 0.25, 1.5]);
    let n = 5000usize;
    let s = 5usize;
    let eps0 = s as f64 / (n as f64).powf(1.3);
    let map = MirrorMap::log_det_pd(2);
    let target =
        GaussianWishartTarget::simulate(n, &sigma_true, 2.0, DMatrix::identity(2, 2), 350)
            .unwrap();
    let moments = wishart_posterior_moments(&target).unwrap();
    let exact_diag = moments.var[(0, 0)] + moments.var[(1, 1)];
    // Average diagonal excess variance over a few chain seeds per step size.
    // Levels are eps0/4, eps0/2, eps0 so the largest step is the reference
    // setting; smaller steps stay in the linear-response regime where the
    // 1:2:4 law holds (the quadratic remainder is visible above eps0).
    let mut excess = [0.0f64; 3];
    for (level, mult) in [0.25f64, 0.5, 1.0].iter().enumerate() {
        let eps = eps0 * mult;
        let k = (20.0 / eps).ceil() as u64;
        let mut acc = 0.0;
        let n_seeds = 3u64;
        for seed in 0..n_seeds {
            let mut oracle = GaussianWishartOracle::new(target.clone());
            let config = SamplerConfig::new(
                eps,
                BatchScheme::Replacement(s),
                k,
                360 + 10 * level as u64 + seed,
            );
            let init = vech(&DMatrix::identity(2, 2));
            let trace = run_mirror_chain(&map, &mut oracle, &init, &config).unwrap();
            assert_eq!(trace.status, ChainStatus::Completed);
            let (_, dual_cov) = mean_cov(trace.post_burn_in(0.1));
            acc += dual_cov[(0, 0)] + dual_cov[(2, 2)] - exact_diag;
        }
        excess[level] = acc / n_seeds as f64;
    }
    let r2 = excess[1] / excess[0];
    let r4 = excess[2] / excess[0];
    let pass = (r2 - 2.0).abs() <= 0.5 && (r4 - 4.0).abs() <= 1.0;
    report(
        "06 step-size scaling of excess variance",
        pass,
        &format!("excess {excess:?}, ratios 1:{r2:.2}:{r4:.2} vs 1:2:4 within 25%"),
    );
}

#[test]
fn acceptance_07_glmm_agrees_with_gibbs_baseline() {
    let family = Family::BinomialLogit(1);
    let beta_true = DVector::from_vec(vec![1.0, -1.0]);
    let sigma_true = DMatrix::from_element(1, 1, 0.5);
    let n = 2000usize;
    let s = 5usize;
    let r = 200usize;
    let data = simulate_glmm(&family, n, 10, &beta_true, &sigma_true, 370).unwrap();
    let model = GlmmModel::new(
        family,
        data,
        Priors {
            tau_sq: 100.0,
            nu: 2.0,
            v_scale: DMatrix::identity(1, 1),
        },
    )
    .unwrap();
    let map = model.mirror_map();
    let dim = model.dim();

    // Baseline: full-batch data-augmentation Gibbs.
    let gibbs = run_gibbs(&model, 10_000, 371).unwrap();
    let gibbs_kept = &gibbs[2000..];
    let (gibbs_mean, gibbs_cov) = mean_cov(gibbs_kept);
    let gibbs_se: Vec<f64> = (0..dim)
        .map(|j| {
            let col: Vec<f64> = gibbs_kept.iter().map(|row| row[j]).collect();
            batch_means(&col).unwrap().mcse
        })
        .collect();

    // Minibatch mirrored chain with inner conditional sampling. The chain
    // mean carries an O(eps) discretization shift that the covariance
    // correction does not touch, so the comparison against the unbiased
    // Gibbs baseline runs at a step below the default rule (~2.6e-5 here)
    // with a proportionally longer chain.
    let eps = 1e-5;
    let n_iters = 300_000u64;
    let mut oracle = GlmmOracle::new(model.clone(), r, 50, 372);
    let mut config = SamplerConfig::new(eps, BatchScheme::Replacement(s), n_iters, 373);
    config.mean_from = n_iters / 3;
    let init = model.pack(&DVector::zeros(2), &DMatrix::identity(1, 1));
    let trace = run_mirror_chain(&map, &mut oracle, &init, &config).unwrap();
    assert_eq!(trace.status, ChainStatus::Completed, "mirrored chain diverged");

    // Correction at the post-burn-in dual mean.
    let rows = trace.post_burn_in(1.0 / 3.0);
    let (dual_mean, _) = mean_cov(rows);
    let theta_hat = map.grad_phi_star(&dual_mean).unwrap();
    let psi = full_psi_hat(&model, &theta_hat, r, 50, 374, 0).unwrap();
    let corr = build_correction(&map, rows, eps, n, s, &psi).unwrap();
    let rescaled = smld_core::correction::rescale_trace(&map, &corr, rows);
    assert!(
        rescaled.dropped < rows.len() / 100,
        "too many corrected samples left the domain"
    );
    let primal: Vec<DVector<f64>> = rescaled
        .rows
        .iter()
        .map(|v| map.grad_phi_star(v).unwrap())
        .collect();
    let (smld_mean, smld_cov) = mean_cov(&primal);
    // The mirrored chain decorrelates over thousands of iterations, so the
    // default sqrt(n) batching would use batches far shorter than the
    // autocorrelation length and understate the standard error. Use 20 long
    // batches instead.
    let smld_se: Vec<f64> = (0..dim)
        .map(|j| {
            let col: Vec<f64> = primal.iter().map(|row| row[j]).collect();
            mcse_long_batches(&col, 20)
        })
        .collect();

    let mut worst_z: f64 = 0.0;
    let mut worst_logvar: f64 = 0.0;
    for j in 0..dim {
        let se = (smld_se[j] * smld_se[j] + gibbs_se[j] * gibbs_se[j]).sqrt();
        worst_z = worst_z.max((smld_mean[j] - gibbs_mean[j]).abs() / se);
        worst_logvar = worst_logvar
            .max((smld_cov[(j, j)].ln() - gibbs_cov[(j, j)].ln()).abs());
    }
    let pass = worst_z <= 3.0 && worst_logvar <= 0.5;
    report(
        "07 mixed model vs Gibbs baseline",
        pass,
        &format!(
            "means {:?} vs {:?}, worst mean |z| {worst_z:.2} (<=3), worst |Delta log var| \
             {worst_logvar:.2} (<=0.5), inner warnings {}",
            smld_mean.as_slice(),
            gibbs_mean.as_slice(),
            oracle.warning_count
        ),
    );
}

#[test]
fn acceptance_08_polya_gamma_moments() {
    let mut worst: f64 = 0.0;
    let mut all_pass = true;
    for &b in &[1u32, 3] {
        for &c in &[0.1f64, 1.0, 4.0] {
            let mut rng = derive_stream(380, &[b as u64, c.to_bits()]);
            let n = 1_000_000usize;
            let mean: f64 =
                (0..n).map(|_| polya_gamma_draw(&mut rng, b, c)).sum::<f64>() / n as f64;
            let expect = polya_gamma_mean(b, c);
            let rel = (mean - expect).abs() / expect;
            worst = worst.max(rel);
            if rel > 0.005 {
                all_pass = false;
            }
        }
    }
    report(
        "08 Polya-Gamma moments",
        all_pass,
        &format!("worst relative mean error {worst:.5} over 6 (b, c) settings (<=0.005)"),
    );
}
