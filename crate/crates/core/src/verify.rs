//! Oracle cross-checks of every closed form, runnable from the library or the CLI.
//!
//! Each check draws its own instances from a fixed seed, so a run is reproducible
//! and independent of thread count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{exact_correlation, holdout_mask, sample_bernoulli, BernoulliModel, GaussianDataModel};
use crate::ease::{train_ease, train_ease_from_gram};
use crate::error::{Error, Result};
use crate::lae_bound::{
    correlations_from_holdout, kl_divergence, log_mgf_prior, optimal_posterior, posterior_objective, true_risk_closed,
    BoundSettings, GaussianPosterior, GaussianPrior, PriorMgf, SampleMoments,
};
use crate::mlr_bound::{convergence_condition_gaussian, PsiEvaluator};
use crate::oracle::{
    bound_validity_frequency, direct_eq6_log_mgf, ease_kkt_solve, enumerate_lae_expectations, iterative_posterior,
    mc_log_mgf, mc_psi, sample_prior,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(Error::InvalidArgument(format!("verify level must be quick or full, got {other:?}"))),
        }
    }
}

/// Sample sizes for the suite.
#[derive(Debug, Clone)]
pub struct Scale {
    pub mgf_samples: usize,
    /// Fraction of the MGF domain threshold at which the sampled MGF is compared.
    /// Below 0.25 the estimator has finite variance.
    pub mgf_lambda_fraction: f64,
    pub psi_inner_samples: usize,
    pub perturbations: usize,
    /// `None` skips the bound-validity frequency check.
    pub validity_trials: Option<usize>,
}

impl Scale {
    pub fn for_level(level: Level) -> Self {
        match level {
            Level::Quick => Scale {
                mgf_samples: 100_000,
                mgf_lambda_fraction: 0.2,
                psi_inner_samples: 20_000,
                perturbations: 200,
                validity_trials: None,
            },
            Level::Full => Scale {
                mgf_samples: 1_000_000,
                mgf_lambda_fraction: 0.2,
                psi_inner_samples: 200_000,
                perturbations: 1000,
                validity_trials: Some(200),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {} ({:.1}s)", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail, self.seconds)
    }
}

type Outcome = (bool, String);
pub type Check = fn(&Scale) -> Result<Outcome>;

/// Run one check; an error counts as a failure with the message as detail.
pub fn run_check(name: &str, check: Check, scale: &Scale) -> CheckResult {
    let start = Instant::now();
    let (pass, detail) = check(scale).unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name: name.to_owned(), pass, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Named checks in suite order.
pub fn checks(scale: &Scale) -> Vec<(&'static str, Check)> {
    let mut list: Vec<(&'static str, Check)> = vec![
        ("holdout-moments-vs-enumeration", holdout_moments_exact),
        ("true-risk-vs-enumeration", true_risk_exact),
        ("posterior-optimality", posterior_optimality),
        ("log-mgf-vs-monte-carlo", log_mgf_monte_carlo),
        ("zero-diag-mgf-inequality", zero_diag_mgf_inequality),
        ("psi-exact-vs-nested-monte-carlo", psi_monte_carlo),
        ("psi-convergence-in-m", psi_convergence_trend),
        ("bound-validity-frequency", bound_validity),
        ("ease-vs-kkt", ease_kkt),
        ("kl-entrywise", kl_entrywise),
    ];
    if scale.validity_trials.is_none() {
        list.retain(|(name, _)| *name != "bound-validity-frequency");
    }
    list
}

pub fn run_suite(level: Level) -> Vec<CheckResult> {
    let scale = Scale::for_level(level);
    checks(&scale).into_iter().map(|(name, check)| run_check(name, check, &scale)).collect()
}

fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn zero_diag(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.fill_diagonal(0.0);
    m
}

pub fn holdout_moments_exact(_: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = 2 + k % 5;
        let model = BernoulliModel::random_table(n, &mut rng)?;
        let hh = exact_correlation(&model);
        for p in [0.3, 0.5, 0.7] {
            let corr = correlations_from_holdout(&hh, p, None)?;
            let e = enumerate_lae_expectations(&model, p)?;
            for (a, b) in [(&corr.sigma_xx, &e.sigma_xx), (&corr.sigma_xy, &e.sigma_xy), (&corr.sigma_yy, &e.sigma_yy)]
            {
                worst = worst.max((a - b).amax());
            }
        }
    }
    Ok((worst <= 1e-12, format!("20 models x 3 p, max entry-wise diff {worst:.2e}")))
}

pub fn true_risk_exact(_: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = 2 + k % 5;
        let p = [0.3, 0.5, 0.7][k % 3];
        let model = BernoulliModel::random_table(n, &mut rng)?;
        let corr = correlations_from_holdout(&exact_correlation(&model), p, None)?;
        let w = gauss(n, n, &mut rng) * 0.5;
        let closed = true_risk_closed(&corr, &w)?;
        let exact = enumerate_lae_expectations(&model, p)?.true_risk(&w)?;
        worst = worst.max((closed - exact).abs() / exact.abs().max(1.0));
    }
    Ok((worst <= 1e-12, format!("20 (model, W) pairs, max diff {worst:.2e} (relative above 1)")))
}

pub fn posterior_optimality(scale: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut beaten = 0usize;
    let mut worst_rel = 0.0f64;
    let mut cases = 0;
    for k in 0..20 {
        let n = 2 + k % 4;
        let m = 3 + k % 8;
        let model = BernoulliModel::random_table(n, &mut rng)?;
        let h = sample_bernoulli(&model, m, 100 + k as u64)?;
        let split = holdout_mask(&h, 0.5, 200 + k as u64)?;
        let sample = SampleMoments::from_holdout(&split)?;
        let sigma = 0.2 + 0.8 * rng.random::<f64>();
        let lambda = 0.5 + 4.5 * rng.random::<f64>();
        for zd in [false, true] {
            cases += 1;
            let prior = GaussianPrior::new(zero_diag(gauss(n, n, &mut rng) * 0.3), sigma, zd)?;
            let post = optimal_posterior(&sample, &prior, lambda)?;
            let best = posterior_objective(&post, &prior, &sample, lambda)?;
            for _ in 0..scale.perturbations {
                let step = 10f64.powf(-3.0 + 2.0 * rng.random::<f64>());
                let mut du = gauss(n, n, &mut rng) * step;
                if zd {
                    du.fill_diagonal(0.0);
                }
                let ds = DVector::from_fn(n, |_, _| (step * rng.sample::<f64, _>(StandardNormal)).exp());
                let other = GaussianPosterior::new(&post.mean + du, post.col_var.component_mul(&ds), zd)?;
                if posterior_objective(&other, &prior, &sample, lambda)? < best {
                    beaten += 1;
                }
            }
            let reference = iterative_posterior(&sample, &prior, lambda, 200_000)?;
            let ref_obj = posterior_objective(&reference, &prior, &sample, lambda)?;
            let rel_mean = (&post.mean - &reference.mean).norm() / post.mean.norm().max(1e-300);
            let rel_var = (&post.col_var - &reference.col_var).abs().component_div(&post.col_var).max();
            let rel_obj = (best - ref_obj).abs() / best.abs();
            worst_rel = worst_rel.max(rel_mean).max(rel_var).max(rel_obj);
        }
    }
    Ok((
        beaten == 0 && worst_rel <= 1e-5,
        format!(
            "{cases} cases x {} perturbations, {beaten} improved; max relative gap to iterative minimizer {worst_rel:.2e}",
            scale.perturbations
        ),
    ))
}

pub fn log_mgf_monte_carlo(scale: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_z = 0.0f64;
    let mut zs = Vec::new();
    for k in 0..10 {
        let n = 2 + k % 3;
        let model = BernoulliModel::random_table(n, &mut rng)?;
        let corr = correlations_from_holdout(&exact_correlation(&model), 0.5, None)?;
        let sigma = 0.1 + 0.4 * rng.random::<f64>();
        let prior = GaussianPrior::new(gauss(n, n, &mut rng) * 0.3, sigma, false)?;
        let lambda = scale.mgf_lambda_fraction * PriorMgf::new(&prior, &corr)?.threshold();
        let closed = log_mgf_prior(&prior, &corr, lambda)?.value;
        let est = mc_log_mgf(&prior, &corr, lambda, scale.mgf_samples, 500 + k as u64)?;
        let z = est.z_score(closed);
        zs.push(format!("{z:+.2}"));
        worst_z = worst_z.max(z.abs());
    }
    Ok((
        worst_z <= 5.0,
        format!(
            "10 instances at {} x threshold, z-scores [{}], max |z| {worst_z:.2}",
            scale.mgf_lambda_fraction,
            zs.join(" ")
        ),
    ))
}

pub fn zero_diag_mgf_inequality(_: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut min_slack = f64::INFINITY;
    for k in 0..100 {
        let n = 2 + k % 19;
        let model = if n <= 10 {
            BernoulliModel::random_table(n, &mut rng)?
        } else {
            BernoulliModel::factorized((0..n).map(|_| 0.05 + 0.5 * rng.random::<f64>()).collect())?
        };
        let p = 0.3 + 0.4 * rng.random::<f64>();
        let corr = correlations_from_holdout(&exact_correlation(&model), p, None)?;
        let sigma = 10f64.powf(-3.0 + 3.0 * rng.random::<f64>());
        let prior = GaussianPrior::new(zero_diag(gauss(n, n, &mut rng) * 0.3), sigma, true)?;
        let lambda = (0.05 + 0.9 * rng.random::<f64>()) * PriorMgf::new(&prior, &corr)?.threshold();
        let upper = log_mgf_prior(&prior, &corr, lambda)?.value;
        let direct = direct_eq6_log_mgf(&prior, &corr, lambda)?;
        min_slack = min_slack.min((upper - direct) / upper.abs().max(1.0));
    }
    Ok((min_slack >= -1e-9, format!("100 instances (n up to 20), min slack {min_slack:.3e}")))
}

fn regression_model(rng: &mut ChaCha8Rng) -> Result<GaussianDataModel> {
    let a = gauss(3, 3, rng);
    let e = gauss(2, 2, rng) * 0.5;
    GaussianDataModel::new(
        DVector::from_fn(3, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal)),
        &a * a.transpose() / 3.0,
        gauss(2, 3, rng),
        &e * e.transpose() + DMatrix::identity(2, 2) * 0.1,
    )
}

pub fn psi_monte_carlo(scale: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = 5;
    let mut worst_z = 0.0f64;
    let mut upper_ok = true;
    let mut mean_aware_ok = true;
    let mut details = Vec::new();
    for k in 0..5 {
        let model = regression_model(&mut rng)?;
        let prior = GaussianPrior::new(&model.w_star + gauss(2, 3, &mut rng) * 0.2, 0.3, false)?;
        let samples = sample_prior(&prior, 8, 700 + k);
        let eval = PsiEvaluator::new(&model, &samples)?;
        let lambda = 0.05 + 0.1 * rng.random::<f64>();
        let exact = eval.exact(lambda, m)?;
        let est = mc_psi(&model, &samples, lambda, m, scale.psi_inner_samples, 800 + k)?;
        let z = est.z_score(exact);
        worst_z = worst_z.max(z.abs());
        for mm in [1usize, 2, 5, 10, 100, 1000] {
            for l in [lambda, 0.5, 1.0] {
                let value = eval.exact(l, mm)?;
                upper_ok &= value <= eval.upper(l, mm)?;
                mean_aware_ok &= value <= eval.upper_with_mean(l, mm)?;
            }
        }
        details.push(format!("{z:+.2}"));
    }
    Ok((
        worst_z <= 5.0 && upper_ok,
        format!(
            "z-scores [{}]; psi_exact <= psi_upper everywhere: {upper_ok}; <= mean-aware upper: {mean_aware_ok}",
            details.join(" ")
        ),
    ))
}

pub fn psi_convergence_trend(_: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = regression_model(&mut rng)?;
    let u0 = &model.w_star + gauss(2, 3, &mut rng) * 0.2;
    let sigma = 0.3;
    let probe = convergence_condition_gaussian(&model, &u0, sigma, 1e-9)?;
    let lambda = (0.5 * probe.threshold).min(1.0);
    let cond = convergence_condition_gaussian(&model, &u0, sigma, lambda)?;
    let prior = GaussianPrior::new(u0, sigma, false)?;
    let eval = PsiEvaluator::new(&model, &sample_prior(&prior, 64, 900))?;
    let values =
        [10usize, 100, 1000, 10_000, 1_000_000].iter().map(|&m| eval.exact(lambda, m)).collect::<Result<Vec<f64>>>()?;
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let last = values[values.len() - 1];
    Ok((
        cond.holds && decreasing && last < 1e-3,
        format!(
            "lambda {lambda:.3} (threshold {:.3}), values {}",
            cond.threshold,
            values.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")
        ),
    ))
}

pub fn bound_validity(scale: &Scale) -> Result<Outcome> {
    let trials = scale.validity_trials.unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = BernoulliModel::random_table(5, &mut rng)?;
    // prior centred on EASE fitted to an independent draw
    let pilot = sample_bernoulli(&model, 200, 10)?;
    let prior_mean = train_ease(&pilot, 10.0)?.weights;
    let settings = BoundSettings { delta: 0.05, ..Default::default() };
    let freq = bound_validity_frequency(&model, 0.5, &prior_mean, &settings, 200, trials, 11)?;
    Ok((
        freq.passes(),
        format!(
            "{} violations in {} trials, fraction {:.3} vs tolerance {:.3}",
            freq.violations, freq.trials, freq.fraction, freq.tolerance
        ),
    ))
}

pub fn ease_kkt(_: &Scale) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut diag_zero = true;
    for seed in 0..5u64 {
        let q: Vec<f64> = (0..5).map(|i| 0.2 + 0.1 * ((i as u64 + seed) % 5) as f64).collect();
        let h = sample_bernoulli(&BernoulliModel::factorized(q)?, 30, seed)?;
        let g = h.gram();
        for gamma in [0.5, 5.0, 50.0] {
            let w = train_ease_from_gram(&g, gamma)?.weights;
            diag_zero &= (0..5).all(|i| w[(i, i)] == 0.0);
            worst = worst.max((w - ease_kkt_solve(&g, gamma)?).amax());
        }
    }
    Ok((diag_zero && worst <= 1e-6, format!("15 toys, diagonal exactly zero: {diag_zero}, max entry diff {worst:.2e}")))
}

pub fn kl_entrywise(_: &Scale) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut zero_ok = true;
    for k in 0..20 {
        let n = 2 + k % 5;
        for zd in [false, true] {
            let sigma = 0.05 + rng.random::<f64>();
            let prior = GaussianPrior::new(zero_diag(gauss(n, n, &mut rng)), sigma, zd)?;
            let mean = zero_diag(gauss(n, n, &mut rng));
            let s = DVector::from_fn(n, |_, _| 0.01 + rng.random::<f64>());
            let post = GaussianPosterior::new(mean.clone(), s.clone(), zd)?;
            let v0 = sigma * sigma;
            let mut reference = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if zd && i == j {
                        continue;
                    }
                    reference +=
                        0.5 * ((v0 / s[j]).ln() + (s[j] + (mean[(i, j)] - prior.mean[(i, j)]).powi(2)) / v0 - 1.0);
                }
            }
            let kl = kl_divergence(&post, &prior)?;
            worst = worst.max((kl - reference).abs() / reference.abs().max(1.0));
            let same = GaussianPosterior::new(prior.mean.clone(), DVector::from_element(n, v0), zd)?;
            zero_ok &= kl_divergence(&same, &prior)? == 0.0;
        }
    }
    Ok((worst <= 1e-10 && zero_ok, format!("40 cases, max diff {worst:.2e}, zero at rho = pi: {zero_ok}")))
}
