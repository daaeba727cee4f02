//! Brute-force and Monte Carlo references for the closed forms elsewhere in the crate.
//!
//! Every routine is deterministic in its seed: sampling is split into fixed-size
//! chunks, each driven by its own ChaCha stream, and reduced in chunk order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{holdout_mask, sample_bernoulli, BernoulliModel, GaussianDataModel, MAX_ENUMERATION_DIM};
use crate::error::{Error, Result};
use crate::lae_bound::{
    compute_bound_with_correlations, expected_true_risk, optimal_posterior, BoundSettings, CorrelationTriple,
    GaussianPosterior, GaussianPrior, SampleMoments,
};
use crate::numerics::{log_sum_exp, psd_sqrt, sym_eig};

const CHUNK: usize = 4096;

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Draw `samples` values, chunk by chunk, in a thread-count-independent order.
fn parallel_draws<F>(samples: usize, seed: u64, draw: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = chunk_rng(seed, c);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl EstimateWithError {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, stderr: (var / n as f64).sqrt(), samples: n }
    }

    /// `|mean − target| ≤ k·stderr`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }

    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.stderr
    }
}

/// Log-mean-exp of `values` with its leave-one-out jackknife standard error.
pub fn log_mean_exp_jackknife(values: &[f64]) -> EstimateWithError {
    let n = values.len();
    let log_sum = log_sum_exp(values);
    let mean = log_sum - (n as f64).ln();
    if n < 2 {
        return EstimateWithError { mean, stderr: 0.0, samples: n };
    }
    // θ_i − const = ln(1 − e^{v_i − log_sum})
    let loo: Vec<f64> = values.iter().map(|&v| (-(v - log_sum).exp()).ln_1p()).collect();
    let avg = loo.iter().sum::<f64>() / n as f64;
    let ss: f64 = loo.iter().map(|t| (t - avg).powi(2)).sum();
    let stderr = ((n - 1) as f64 / n as f64 * ss).sqrt();
    EstimateWithError { mean, stderr, samples: n }
}

/// Data generator for Monte Carlo risk estimates.
#[derive(Debug, Clone, Copy)]
pub enum Generator<'a> {
    Gaussian(&'a GaussianDataModel),
    /// `h ∼ model`, `x = δ⊙h`, `y = (1−δ)⊙h` with `P(δ_i = 1 | h_i = 1) = p`.
    Lae {
        model: &'a BernoulliModel,
        p: f64,
    },
}

/// Sample mean and standard error of `‖y − Wx‖²`.
pub fn mc_true_risk(
    generator: Generator<'_>,
    w: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("at least 1000 samples required, got {samples}")));
    }
    let values: Vec<f64> = match generator {
        Generator::Gaussian(model) => {
            model.validate()?;
            if w.shape() != model.w_star.shape() {
                return Err(Error::Dimension(format!(
                    "W is {:?}, model expects {:?}",
                    w.shape(),
                    model.w_star.shape()
                )));
            }
            let root_x = psd_sqrt(&model.sigma_x)?;
            let root_e = psd_sqrt(&model.sigma_e)?;
            let (n, p) = (model.input_dim(), model.output_dim());
            parallel_draws(samples, seed, |rng| {
                let x = &root_x * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) + &model.mu_x;
                let e = &root_e * DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                (&model.w_star * &x + e - w * &x).norm_squared()
            })
        }
        Generator::Lae { model, p } => {
            let n = model.dim();
            if w.shape() != (n, n) {
                return Err(Error::Dimension(format!("W is {:?}, model has {n} items", w.shape())));
            }
            let chunks = samples.div_ceil(CHUNK);
            let per_chunk: Vec<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| -> Result<Vec<f64>> {
                    let len = CHUNK.min(samples - c * CHUNK);
                    let chunk_seed = seed.wrapping_add((c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let h = sample_bernoulli(model, len, chunk_seed)?;
                    let split = holdout_mask(&h, p, chunk_seed ^ 0x0005_DEEC_E66D)?;
                    Ok((0..len)
                        .map(|u| {
                            let mut r = DVector::<f64>::zeros(n);
                            for &i in split.input.user_items(u) {
                                r += w.column(i);
                            }
                            for &i in split.target.user_items(u) {
                                r[i] -= 1.0;
                            }
                            r.norm_squared()
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            per_chunk.concat()
        }
    };
    Ok(EstimateWithError::from_values(&values))
}

/// Exact moments of the masked autoencoder pair, summed over every `(h, δ)` outcome.
#[derive(Debug, Clone)]
pub struct LaeEnumeration {
    n: usize,
    p: f64,
    table: Vec<f64>,
    pub sigma_xx: DMatrix<f64>,
    pub sigma_xy: DMatrix<f64>,
    pub sigma_yy: DMatrix<f64>,
}

fn bits(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&i| (k >> i) & 1 == 1)
}

impl LaeEnumeration {
    /// Visit every outcome `(weight, x-bits, y-bits)` with nonzero weight.
    fn for_each_outcome(&self, mut f: impl FnMut(f64, usize, usize)) {
        let q = 1.0 - self.p;
        for (h, &mass) in self.table.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let ones = h.count_ones() as i32;
            // all subsets of h, including h itself and the empty set
            let mut sub = h;
            loop {
                let kept = sub.count_ones() as i32;
                let weight = mass * self.p.powi(kept) * q.powi(ones - kept);
                if weight != 0.0 {
                    f(weight, sub, h & !sub);
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & h;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Exact `E‖y − Wx‖²`.
    pub fn true_risk(&self, w: &DMatrix<f64>) -> Result<f64> {
        if w.shape() != (self.n, self.n) {
            return Err(Error::Dimension(format!("W is {:?}, model has {} items", w.shape(), self.n)));
        }
        let mut total = 0.0;
        let mut r = DVector::<f64>::zeros(self.n);
        self.for_each_outcome(|weight, x, y| {
            r.fill(0.0);
            for i in bits(self.n, x) {
                r += w.column(i);
            }
            for i in bits(self.n, y) {
                r[i] -= 1.0;
            }
            total += weight * r.norm_squared();
        });
        Ok(total)
    }

    pub fn correlations(&self, jitter: Option<f64>) -> Result<CorrelationTriple> {
        CorrelationTriple::from_moments(self.sigma_xx.clone(), self.sigma_xy.clone(), self.sigma_yy.clone(), jitter)
    }
}

pub fn enumerate_lae_expectations(model: &BernoulliModel, p: f64) -> Result<LaeEnumeration> {
    let n = model.dim();
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::Capacity(format!("enumeration supports n <= {MAX_ENUMERATION_DIM}, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    let mut out = LaeEnumeration {
        n,
        p,
        table: model.to_table()?,
        sigma_xx: DMatrix::zeros(n, n),
        sigma_xy: DMatrix::zeros(n, n),
        sigma_yy: DMatrix::zeros(n, n),
    };
    let (mut sxx, mut sxy, mut syy) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n));
    out.for_each_outcome(|weight, x, y| {
        for a in bits(n, x) {
            for b in bits(n, x) {
                sxx[(a, b)] += weight;
            }
            for b in bits(n, y) {
                sxy[(a, b)] += weight;
            }
        }
        for a in bits(n, y) {
            for b in bits(n, y) {
                syy[(a, b)] += weight;
            }
        }
    });
    out.sigma_xx = sxx;
    out.sigma_xy = sxy;
    out.sigma_yy = syy;
    Ok(out)
}

/// `ln E_π[e^{λ·R_true(W)}]` by direct prior sampling.
pub fn mc_log_mgf(
    prior: &GaussianPrior,
    corr: &CorrelationTriple,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    if samples < 10_000 {
        return Err(Error::InvalidArgument(format!("at least 10000 samples required, got {samples}")));
    }
    if prior.mean.shape() != (corr.output_dim(), corr.input_dim()) {
        return Err(Error::Dimension(format!("prior mean {:?} vs correlations", prior.mean.shape())));
    }
    let values = parallel_draws(samples, seed, |rng| {
        let w = prior.sample(rng);
        lambda * ((&w * &corr.sqrt_xx + &corr.b).norm_squared() + corr.c_log)
    });
    Ok(log_mean_exp_jackknife(&values))
}

/// Minimal sampler for `(x, y)` columns with precomputed square roots.
struct RegressionSampler {
    root_x: DMatrix<f64>,
    root_e: DMatrix<f64>,
    mu_x: DVector<f64>,
    w_star: DMatrix<f64>,
}

impl RegressionSampler {
    fn new(model: &GaussianDataModel) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            root_x: psd_sqrt(&model.sigma_x)?,
            root_e: psd_sqrt(&model.sigma_e)?,
            mu_x: model.mu_x.clone(),
            w_star: model.w_star.clone(),
        })
    }

    fn draw(&self, m: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, p) = (self.mu_x.len(), self.w_star.nrows());
        let mut x = &self.root_x * DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut col in x.column_iter_mut() {
            col += &self.mu_x;
        }
        let y = &self.w_star * &x + &self.root_e * DMatrix::from_fn(p, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        (x, y)
    }
}

/// `ln (1/K)Σ_k E_{S∼D^m}[e^{λ(R_true(W_k) − R_emp(W_k))}]` with the inner expectation sampled.
///
/// The standard error propagates the per-`W_k` sampling variances through the log by the delta method.
pub fn mc_psi(
    model: &GaussianDataModel,
    prior_samples: &[DMatrix<f64>],
    lambda: f64,
    m: usize,
    inner_samples: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    if prior_samples.is_empty() || inner_samples < 2 || m == 0 {
        return Err(Error::InvalidArgument("need prior samples, m >= 1 and at least 2 inner samples".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let sampler = RegressionSampler::new(model)?;
    let per_w: Vec<Vec<f64>> = prior_samples
        .iter()
        .enumerate()
        .map(|(k, w)| -> Result<Vec<f64>> {
            if w.shape() != model.w_star.shape() {
                return Err(Error::Dimension(format!("prior sample {k} is {:?}", w.shape())));
            }
            let diff = &model.w_star - w;
            let true_risk = (&diff * &model.sigma_x * diff.transpose() + &model.sigma_e).trace()
                + (&diff * &model.mu_x).norm_squared();
            let stream_seed = seed.wrapping_add((k as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            Ok(parallel_draws(inner_samples, stream_seed, |rng| {
                let (x, y) = sampler.draw(m, rng);
                let emp = (&y - w * &x).norm_squared() / m as f64;
                lambda * (true_risk - emp)
            }))
        })
        .collect::<Result<_>>()?;
    let shift = per_w.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = per_w.len() as f64;
    let (mut total, mut var) = (0.0, 0.0);
    for values in &per_w {
        let scaled: Vec<f64> = values.iter().map(|v| (v - shift).exp()).collect();
        let est = EstimateWithError::from_values(&scaled);
        total += est.mean / k;
        var += est.stderr * est.stderr / (k * k);
    }
    Ok(EstimateWithError { mean: shift + total.ln(), stderr: var.sqrt() / total, samples: inner_samples * per_w.len() })
}

/// Draw `count` prior samples from an entry-wise Gaussian prior.
pub fn sample_prior(prior: &GaussianPrior, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| prior.sample(&mut rng)).collect()
}

/// Exact zero-diagonal log-MGF from one eigendecomposition per row.
///
/// Row `i` of `W` moves only in the coordinates `j ≠ i`, so its residual
/// `μⁱ + σΣ_{j≠i} z_j s_j` (with `s_j` the j-th column of `Σ_xx^{1/2}`) is Gaussian with
/// covariance `A⁽ⁱ⁾ = σ²(Σ_xx − s_i s_iᵀ)`.
pub fn direct_eq6_log_mgf(prior: &GaussianPrior, corr: &CorrelationTriple, lambda: f64) -> Result<f64> {
    if !prior.zero_diag {
        return Err(Error::InvalidArgument("direct evaluation needs a zero-diagonal prior".into()));
    }
    let n = corr.input_dim();
    if n > 50 {
        return Err(Error::Capacity(format!("direct evaluation supports n <= 50, got {n}")));
    }
    if prior.mean.shape() != (n, n) || corr.output_dim() != n {
        return Err(Error::Dimension(format!("prior mean {:?} vs {n} items", prior.mean.shape())));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let var = prior.variance();
    let mu = &prior.mean * &corr.sqrt_xx + &corr.b;
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let s = corr.sqrt_xx.column(i);
            let a = (&corr.sigma_xx - s * s.transpose()) * var;
            let decomp = sym_eig(&a)?;
            let top = decomp.top().max(0.0);
            let threshold = if top > 0.0 { 1.0 / (2.0 * top) } else { f64::INFINITY };
            if !(lambda < threshold) {
                return Ok((f64::NAN, threshold));
            }
            let proj = &decomp.eigenvectors * mu.row(i).transpose();
            let mut value = 0.0;
            for (j, &eta) in decomp.eigenvalues.iter().enumerate() {
                let eta = eta.max(0.0);
                let scale = 2.0 * lambda * eta;
                value += lambda * proj[j] * proj[j] / (1.0 - scale) - 0.5 * (-scale).ln_1p();
            }
            Ok((value, threshold))
        })
        .collect::<Result<_>>()?;
    let threshold = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if rows.iter().any(|r| r.0.is_nan()) {
        return Err(Error::LambdaDomain { lambda, threshold });
    }
    Ok(lambda * corr.c_log + rows.iter().map(|r| r.0).sum::<f64>())
}

/// Reference EASE weights from one reduced normal-equation solve per row.
///
/// Row `a` minimizes `‖H_{a*} − W_{a*}H‖² + γ‖W_{a*}‖²` over `W_{aa} = 0`, i.e.
/// `(G + γI)_{−a,−a}·w = G_{−a,a}`.
pub fn ease_kkt_solve(gram: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if gram.ncols() != n || n < 2 {
        return Err(Error::Dimension(format!("gram must be square with n >= 2, got {:?}", gram.shape())));
    }
    let mut w = DMatrix::zeros(n, n);
    for a in 0..n {
        let idx: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        let sys = DMatrix::from_fn(n - 1, n - 1, |r, c| gram[(idx[r], idx[c])] + if r == c { gamma } else { 0.0 });
        let rhs = DVector::from_fn(n - 1, |r, _| gram[(idx[r], a)]);
        let sol = sys.lu().solve(&rhs).ok_or(Error::Singular { min_eigenvalue: 0.0, threshold: 0.0 })?;
        for (r, &b) in idx.iter().enumerate() {
            w[(a, b)] = sol[r];
        }
    }
    Ok(w)
}

/// Iterative minimizer of `E_ρ[R_emp] + KL(ρ‖π)/λ`, independent of the closed form.
///
/// Accelerated projected gradient on the mean (the projection zeroes the diagonal),
/// and a Newton iteration on `ln s_j` for each column variance.
pub fn iterative_posterior(
    sample: &SampleMoments,
    prior: &GaussianPrior,
    lambda: f64,
    max_iter: usize,
) -> Result<GaussianPosterior> {
    let n = sample.input_dim();
    let m = sample.m as f64;
    let var0 = prior.variance();
    let curvature = 1.0 / (lambda * var0);
    let top = sym_eig(&sample.xx)?.top().max(0.0);
    let lipschitz = 2.0 * top / m + curvature;
    let step = 1.0 / lipschitz;
    let kappa = lipschitz / curvature;
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let project = |mut u: DMatrix<f64>| {
        if prior.zero_diag {
            u.fill_diagonal(0.0);
        }
        u
    };
    let gradient = |u: &DMatrix<f64>| (u * &sample.xx - &sample.yx) * (2.0 / m) + (u - &prior.mean) * curvature;

    let mut u = project(prior.mean.clone());
    let mut prev = u.clone();
    let scale = 1.0 + (&sample.yx / m).amax() + curvature * prior.mean.amax();
    for _ in 0..max_iter {
        if project(gradient(&u)).amax() <= 1e-13 * scale {
            break;
        }
        let look = &u + (&u - &prev) * momentum;
        let next = project(&look - gradient(&look) * step);
        prev = std::mem::replace(&mut u, next);
    }

    let count = if prior.zero_diag { n as f64 - 1.0 } else { prior.mean.nrows() as f64 };
    let col_var = DVector::from_fn(n, |j, _| {
        // f(t) = a·e^t + b·(e^t/σ² − t), with a = c·xx_jj/m, b = c/(2λ)
        let a = count * sample.xx[(j, j)] / m;
        let b = count / (2.0 * lambda);
        let mut t = var0.ln();
        for _ in 0..200 {
            let e = t.exp();
            let g = (a + b / var0) * e - b;
            let h = (a + b / var0) * e;
            let dt = (g / h).clamp(-5.0, 5.0);
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        t.exp()
    });
    GaussianPosterior::new(u, col_var, prior.zero_diag)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValidityFrequency {
    pub trials: usize,
    pub violations: usize,
    pub fraction: f64,
    /// `δ + 3·sqrt(δ(1−δ)/trials)`
    pub tolerance: f64,
}

impl ValidityFrequency {
    pub fn passes(&self) -> bool {
        self.fraction <= self.tolerance
    }
}

/// How often the grid bound fails over regenerated datasets.
///
/// The prior mean must not depend on the datasets. Each trial draws `m` users,
/// masks them, computes the bound with the exact population correlations, and
/// counts a violation when the exact expected true risk of the selected posterior
/// exceeds the selected right-hand side.
pub fn bound_validity_frequency(
    model: &BernoulliModel,
    p: f64,
    prior_mean: &DMatrix<f64>,
    settings: &BoundSettings,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<ValidityFrequency> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let corr = enumerate_lae_expectations(model, p)?.correlations(settings.jitter)?;
    let prior = GaussianPrior::new(prior_mean.clone(), settings.sigma, settings.zero_diag)?;
    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let trial_seed = seed.wrapping_add((t as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            let h = sample_bernoulli(model, m, trial_seed)?;
            let split = holdout_mask(&h, p, trial_seed ^ 0x2545_F491_4F6C_DD1D)?;
            let sample = SampleMoments::from_holdout(&split)?;
            let report = compute_bound_with_correlations(&corr, p, &sample, prior_mean, settings)?;
            let best = report.best();
            let post = optimal_posterior(&sample, &prior, best.lambda)?;
            let lh = expected_true_risk(&post, &corr)?;
            Ok(lh > best.rh.unwrap_or(f64::INFINITY))
        })
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|&&v| v).count();
    let delta = settings.delta;
    Ok(ValidityFrequency {
        trials,
        violations,
        fraction: violations as f64 / trials as f64,
        tolerance: delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::exact_correlation;
    use crate::lae_bound::{correlations_from_holdout, log_mgf_prior, true_risk_closed};
    use approx::assert_relative_eq;

    fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn jackknife_constant_values() {
        let e = log_mean_exp_jackknife(&[2.0; 100]);
        assert_relative_eq!(e.mean, 2.0, max_relative = 1e-14);
        assert!(e.stderr < 1e-12);
    }

    #[test]
    fn point_mass_risk_is_exact() {
        let model = BernoulliModel::point_mass(&[0, 0, 0]).unwrap();
        let w = DMatrix::from_element(3, 3, 0.3);
        let est = mc_true_risk(Generator::Lae { model: &model, p: 0.5 }, &w, 2000, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn gaussian_risk_at_w_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = gauss(2, 2, &mut rng);
        let model = GaussianDataModel::new(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            gauss(2, 3, &mut rng),
            &e * e.transpose() + DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap();
        let est = mc_true_risk(Generator::Gaussian(&model), &model.w_star.clone(), 200_000, 3).unwrap();
        assert!(est.agrees_with(model.sigma_e.trace(), 5.0));
    }

    #[test]
    fn lae_risk_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = BernoulliModel::random_table(3, &mut rng).unwrap();
        let w = gauss(3, 3, &mut rng) * 0.5;
        let corr = correlations_from_holdout(&exact_correlation(&model), 0.5, None).unwrap();
        let est = mc_true_risk(Generator::Lae { model: &model, p: 0.5 }, &w, 400_000, 5).unwrap();
        assert!(est.agrees_with(true_risk_closed(&corr, &w).unwrap(), 5.0));
    }

    #[test]
    fn stderr_halves_when_samples_quadruple() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = BernoulliModel::random_table(3, &mut rng).unwrap();
        let w = gauss(3, 3, &mut rng);
        let g = Generator::Lae { model: &model, p: 0.5 };
        let a = mc_true_risk(g, &w, 50_000, 7).unwrap();
        let b = mc_true_risk(g, &w, 200_000, 7).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn seed_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = BernoulliModel::random_table(3, &mut rng).unwrap();
        let corr = correlations_from_holdout(&exact_correlation(&model), 0.5, None).unwrap();
        let prior = GaussianPrior::new(DMatrix::zeros(3, 3), 0.2, true).unwrap();
        let a = mc_log_mgf(&prior, &corr, 0.5, 20_000, 9).unwrap();
        let b = mc_log_mgf(&prior, &corr, 0.5, 20_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn point_mass_enumeration() {
        let model = BernoulliModel::point_mass(&[1, 0]).unwrap();
        let e = enumerate_lae_expectations(&model, 0.5).unwrap();
        assert_eq!(e.sigma_xx, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]));
        assert_eq!(e.sigma_yy, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]));
        assert_eq!(e.sigma_xy, DMatrix::zeros(2, 2));
    }

    #[test]
    fn enumeration_vanishing_holdout() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = BernoulliModel::random_table(4, &mut rng).unwrap();
        let hh = exact_correlation(&model);
        let e = enumerate_lae_expectations(&model, 0.999).unwrap();
        assert!(e.sigma_yy.amax() <= 2e-3 * hh.amax());
    }

    #[test]
    fn enumeration_capacity() {
        let model = BernoulliModel::factorized(vec![0.5; 13]).unwrap();
        assert!(matches!(enumerate_lae_expectations(&model, 0.5), Err(Error::Capacity(_))));
    }

    #[test]
    fn degenerate_prior_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = BernoulliModel::random_table(3, &mut rng).unwrap();
        let corr = correlations_from_holdout(&exact_correlation(&model), 0.5, None).unwrap();
        let mut u0 = gauss(3, 3, &mut rng) * 0.3;
        u0.fill_diagonal(0.0);
        let prior = GaussianPrior::new(u0.clone(), 1e-6, true).unwrap();
        let lambda = 2.0;
        let target = lambda * true_risk_closed(&corr, &u0).unwrap();
        assert_relative_eq!(direct_eq6_log_mgf(&prior, &corr, lambda).unwrap(), target, max_relative = 1e-3);
        let est = mc_log_mgf(&prior, &corr, lambda, 10_000, 12).unwrap();
        assert!((est.mean - target).abs() <= 1e-6 * target.abs().max(1.0) + est.stderr);
    }

    #[test]
    fn direct_eq6_matches_zero_diag_sampling_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = BernoulliModel::random_table(3, &mut rng).unwrap();
        let corr = correlations_from_holdout(&exact_correlation(&model), 0.5, None).unwrap();
        let mut u0 = gauss(3, 3, &mut rng) * 0.3;
        u0.fill_diagonal(0.0);
        let prior = GaussianPrior::new(u0, 0.5, true).unwrap();
        let lambda = 0.5 / (2.0 * sym_eig(&(&corr.sigma_xx * 0.25)).unwrap().top());
        let direct = direct_eq6_log_mgf(&prior, &corr, lambda).unwrap();
        let est = mc_log_mgf(&prior, &corr, lambda, 1_000_000, 14).unwrap();
        assert!(est.agrees_with(direct, 5.0), "{} vs {direct} (se {})", est.mean, est.stderr);
        let upper = log_mgf_prior(&prior, &corr, lambda).unwrap();
        assert!(direct <= upper.value + 1e-9);
        assert!(est.mean <= upper.value + 5.0 * est.stderr);
    }

    #[test]
    fn mc_psi_small_lambda_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = GaussianDataModel::new(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            gauss(1, 2, &mut rng),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let samples = vec![gauss(1, 2, &mut rng)];
        let est = mc_psi(&model, &samples, 1e-6, 5, 20_000, 16).unwrap();
        assert!(est.mean.abs() < 1e-6 + 5.0 * est.stderr);
    }

    #[test]
    fn ease_kkt_matches_closed_form() {
        let h = sample_bernoulli(&BernoulliModel::factorized(vec![0.3, 0.5, 0.4, 0.6, 0.2]).unwrap(), 40, 17).unwrap();
        let g = h.gram();
        let a = crate::ease::train_ease_from_gram(&g, 7.0).unwrap().weights;
        let b = ease_kkt_solve(&g, 7.0).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn iterative_posterior_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = gauss(3, 8, &mut rng);
        let y = gauss(3, 8, &mut rng);
        let sample = SampleMoments::from_dense(&x, &y).unwrap();
        for zd in [false, true] {
            let mut u0 = gauss(3, 3, &mut rng) * 0.2;
            u0.fill_diagonal(0.0);
            let prior = GaussianPrior::new(u0, 0.5, zd).unwrap();
            let closed = optimal_posterior(&sample, &prior, 2.0).unwrap();
            let iter = iterative_posterior(&sample, &prior, 2.0, 100_000).unwrap();
            assert!((&closed.mean - &iter.mean).norm() <= 1e-8 * closed.mean.norm().max(1.0));
            assert!((&closed.col_var - &iter.col_var).amax() <= 1e-12 * closed.col_var.amax());
        }
    }
}
