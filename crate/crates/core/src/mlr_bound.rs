//! PAC-Bayes machinery for multivariate linear regression with Gaussian data.
//!
//! Prior expectations are averages over caller-supplied samples of `W ∼ π`,
//! combined in the log domain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::GaussianDataModel;
use crate::error::{Error, Result};
use crate::lae_bound::GaussianPosterior;
use crate::numerics::{log_mean_exp, sym_eig, SpectralDecomposition};

/// Moments of the prediction error `y − Wx = (W* − W)x + e`.
#[derive(Debug, Clone)]
pub struct ErrorMoments {
    /// `(W* − W)μ_x`
    pub mu_w: DVector<f64>,
    /// `(W* − W)Σ_x(W* − W)ᵀ + Σ_e`
    pub sigma_w: DMatrix<f64>,
    pub decomposition: SpectralDecomposition,
    /// `S·Σ_W^{−1/2}·μ_W`
    pub b: DVector<f64>,
}

impl ErrorMoments {
    /// `E‖y − Wx‖² = tr(Σ_W) + μ_Wᵀμ_W`.
    pub fn true_risk(&self) -> f64 {
        self.sigma_w.trace() + self.mu_w.norm_squared()
    }

    /// `(S·μ_W)_i² = b_i²·η_i`, without the inverse square root.
    fn projected_mean_sq(&self) -> DVector<f64> {
        (&self.decomposition.eigenvectors * &self.mu_w).map(|v| v * v)
    }
}

/// `E_{W∼ρ} E‖y − Wx‖²` for a Gaussian posterior: risk at the mean plus `c·Σ_j s_j·M_jj`, `M = Σ_x + μ_xμ_xᵀ`.
pub fn expected_true_risk_gaussian(model: &GaussianDataModel, post: &GaussianPosterior) -> Result<f64> {
    let base = error_moments(model, &post.mean)?.true_risk();
    let second = model.second_moment();
    let spread: f64 = post.col_var.iter().enumerate().map(|(j, s)| s * second[(j, j)]).sum();
    Ok(base + post.entries_per_column() * spread)
}

pub fn error_moments(model: &GaussianDataModel, w: &DMatrix<f64>) -> Result<ErrorMoments> {
    if w.shape() != model.w_star.shape() {
        return Err(Error::Dimension(format!("W is {:?}, model expects {:?}", w.shape(), model.w_star.shape())));
    }
    let diff = &model.w_star - w;
    let mu_w = &diff * &model.mu_x;
    let mut sigma_w = &diff * &model.sigma_x * diff.transpose() + &model.sigma_e;
    sigma_w = (&sigma_w + sigma_w.transpose()) * 0.5;
    let decomposition = sym_eig(&sigma_w)?;
    if decomposition.bottom() <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "error covariance is not positive definite (eigenvalue {:e}); sigma_e must be PD",
            decomposition.bottom()
        )));
    }
    let proj = &decomposition.eigenvectors * &mu_w;
    let b = proj.zip_map(&decomposition.eigenvalues, |v, e| v / e.sqrt());
    Ok(ErrorMoments { mu_w, sigma_w, decomposition, b })
}

/// `x − ln(1 + x)` without cancellation for small `x`.
fn x_minus_ln1p(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        x2 * (0.5 - x / 3.0 + x2 / 4.0 - x2 * x / 5.0)
    } else {
        x - x.ln_1p()
    }
}

fn check_lambda_m(lambda: f64, m: usize) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    Ok(())
}

/// Per-sample error moments for a fixed set of prior draws, reusable across `λ` and `m`.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    moments: Vec<ErrorMoments>,
}

impl PsiEvaluator {
    pub fn new(model: &GaussianDataModel, prior_samples: &[DMatrix<f64>]) -> Result<Self> {
        if prior_samples.is_empty() {
            return Err(Error::InvalidArgument("at least one prior sample is required".into()));
        }
        model.validate()?;
        let moments = prior_samples.par_iter().map(|w| error_moments(model, w)).collect::<Result<_>>()?;
        Ok(Self { moments })
    }

    pub fn moments(&self) -> &[ErrorMoments] {
        &self.moments
    }

    /// `ln f_m(W)` for one sample.
    ///
    /// `λ(trΣ_W + μᵀμ) − Σ λm·b_i²η_i/(m + 2λη_i) − (m/2)Σ ln(1 + 2λη_i/m)`, regrouped per
    /// eigen-direction as `λ·q_i·2λη_i/(m + 2λη_i) + (m/2)(x_i − ln(1 + x_i))` with `x_i = 2λη_i/m`.
    fn log_integrand(em: &ErrorMoments, lambda: f64, m: f64) -> f64 {
        let q = em.projected_mean_sq();
        em.decomposition
            .eigenvalues
            .iter()
            .zip(q.iter())
            .map(|(&eta, &q)| {
                let two_le = 2.0 * lambda * eta;
                lambda * q * two_le / (m + two_le) + 0.5 * m * x_minus_ln1p(two_le / m)
            })
            .sum()
    }

    pub fn exact(&self, lambda: f64, m: usize) -> Result<f64> {
        check_lambda_m(lambda, m)?;
        let m = m as f64;
        let logs: Vec<f64> = self.moments.iter().map(|em| Self::log_integrand(em, lambda, m)).collect();
        Ok(log_mean_exp(&logs))
    }

    pub fn upper(&self, lambda: f64, m: usize) -> Result<f64> {
        check_lambda_m(lambda, m)?;
        let logs: Vec<f64> =
            self.moments.iter().map(|em| 2.0 * lambda * lambda * em.sigma_w.norm_squared() / m as f64).collect();
        Ok(log_mean_exp(&logs))
    }

    /// `ln E_π exp(2λ²(‖Σ_W‖²_F + μ_WᵀΣ_Wμ_W)/m)`, which also covers the mean term.
    pub fn upper_with_mean(&self, lambda: f64, m: usize) -> Result<f64> {
        check_lambda_m(lambda, m)?;
        let logs: Vec<f64> = self
            .moments
            .iter()
            .map(|em| {
                let quad = em.mu_w.dot(&(&em.sigma_w * &em.mu_w));
                2.0 * lambda * lambda * (em.sigma_w.norm_squared() + quad) / m as f64
            })
            .collect();
        Ok(log_mean_exp(&logs))
    }
}

/// `Ψ(λ, m) = ln E_π E_S[e^{λ(R_true − R_emp)}]`, exact in `S`, sample-averaged in `π`.
pub fn psi_exact(model: &GaussianDataModel, prior_samples: &[DMatrix<f64>], lambda: f64, m: usize) -> Result<f64> {
    check_lambda_m(lambda, m)?;
    PsiEvaluator::new(model, prior_samples)?.exact(lambda, m)
}

/// `ln E_π exp(2λ²‖Σ_W‖²_F/m)`.
///
/// Dominates [`psi_exact`] when `μ_W = 0`; with a nonzero error mean it can fall
/// below it, see [`psi_upper_with_mean`].
pub fn psi_upper(model: &GaussianDataModel, prior_samples: &[DMatrix<f64>], lambda: f64, m: usize) -> Result<f64> {
    check_lambda_m(lambda, m)?;
    PsiEvaluator::new(model, prior_samples)?.upper(lambda, m)
}

/// `ln E_π exp(2λ²(‖Σ_W‖²_F + μ_WᵀΣ_Wμ_W)/m)`, an upper bound on [`psi_exact`] for any `μ_x`.
pub fn psi_upper_with_mean(
    model: &GaussianDataModel,
    prior_samples: &[DMatrix<f64>],
    lambda: f64,
    m: usize,
) -> Result<f64> {
    check_lambda_m(lambda, m)?;
    PsiEvaluator::new(model, prior_samples)?.upper_with_mean(lambda, m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCondition {
    pub holds: bool,
    /// `1/(2ν₁σ²)` with `ν₁` the top eigenvalue of `Σ_x + μ_xμ_xᵀ`.
    pub threshold: f64,
    /// `ln E_π exp(λ‖(W* − W)(Σ_x + μ_xμ_xᵀ)^{1/2}‖²_F)` for `π = N̄(U₀, σ²J)`, when finite.
    pub log_value: Option<f64>,
}

/// Whether `Ψ(λ, m) → 0` is guaranteed for the entry-wise Gaussian prior `N̄(U₀, σ²J)`.
///
/// With `Σ_x + μ_xμ_xᵀ = QᵀΛQ` and `d_i` the i-th row of `W* − U₀`, the value is
/// `Σ_i Σ_j [λν_j(Q_{j*}·d_i)²/(1 − 2λσ²ν_j) − ½ln(1 − 2λσ²ν_j)]`.
pub fn convergence_condition_gaussian(
    model: &GaussianDataModel,
    u0: &DMatrix<f64>,
    sigma: f64,
    lambda: f64,
) -> Result<ConvergenceCondition> {
    if !(sigma > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma and lambda must be positive, got {sigma}, {lambda}")));
    }
    if u0.shape() != model.w_star.shape() {
        return Err(Error::Dimension(format!("U0 is {:?}, model expects {:?}", u0.shape(), model.w_star.shape())));
    }
    let decomp = sym_eig(&model.second_moment())?;
    let nu: Vec<f64> = decomp.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let var = sigma * sigma;
    let threshold = if nu[0] > 0.0 { 1.0 / (2.0 * nu[0] * var) } else { f64::INFINITY };
    let holds = lambda < threshold;
    if !holds {
        return Ok(ConvergenceCondition { holds, threshold, log_value: None });
    }
    // rows of `proj` are d_i expressed in the eigenbasis
    let proj = (&model.w_star - u0) * decomp.eigenvectors.transpose();
    let mut log_value = 0.0;
    for (j, &nu_j) in nu.iter().enumerate() {
        let scale = 2.0 * lambda * var * nu_j;
        let shrink = 1.0 - scale;
        let mean_sq = proj.column(j).norm_squared();
        log_value += lambda * nu_j * mean_sq / shrink - 0.5 * proj.nrows() as f64 * (-scale).ln_1p();
    }
    Ok(ConvergenceCondition { holds, threshold, log_value: Some(log_value) })
}

/// `emp + (KL + ln(1/δ) + Ψ)/λ`.
pub fn alquier_rhs(emp_risk: f64, kl: f64, delta: f64, psi: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("kl must be nonnegative, got {kl}")));
    }
    Ok(emp_risk + (kl - delta.ln() + psi) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_regression;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_model(p: usize, n: usize, seed: u64) -> GaussianDataModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gauss(n, n, &mut rng);
        let e = gauss(p, p, &mut rng) * 0.5;
        GaussianDataModel::new(
            gauss(n, 1, &mut rng).column(0).into_owned() * 0.5,
            &a * a.transpose() / n as f64,
            gauss(p, n, &mut rng),
            &e * e.transpose() + DMatrix::identity(p, p) * 0.1,
        )
        .unwrap()
    }

    #[test]
    fn moments_at_w_star() {
        let model = random_model(2, 3, 1);
        let em = error_moments(&model, &model.w_star).unwrap();
        assert!(em.mu_w.amax() < 1e-15);
        assert!((&em.sigma_w - &model.sigma_e).amax() < 1e-15);
    }

    #[test]
    fn b_norm_matches_mahalanobis() {
        let model = random_model(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = gauss(3, 4, &mut rng);
        let em = error_moments(&model, &w).unwrap();
        let inv = em.sigma_w.clone().try_inverse().unwrap();
        let maha = (em.mu_w.transpose() * inv * &em.mu_w)[(0, 0)];
        assert_relative_eq!(em.b.norm_squared(), maha, max_relative = 1e-8);
    }

    #[test]
    fn true_risk_matches_sampling() {
        let model = random_model(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = gauss(2, 3, &mut rng);
        let em = error_moments(&model, &w).unwrap();
        let (x, y) = sample_regression(&model, 1_000_000, 6).unwrap();
        let resid = &y - &w * &x;
        let per: Vec<f64> = resid.column_iter().map(|c| c.norm_squared()).collect();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (per.len() - 1) as f64;
        let se = (var / per.len() as f64).sqrt();
        assert!((mean - em.true_risk()).abs() < 5.0 * se);
    }

    #[test]
    fn sigma_e_must_be_pd() {
        let mut model = random_model(2, 2, 7);
        model.sigma_e = DMatrix::zeros(2, 2);
        assert!(matches!(error_moments(&model, &model.w_star.clone()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn psi_single_sample_at_w_star() {
        let mut model = random_model(2, 3, 8);
        model.mu_x.fill(0.0);
        let (lambda, m) = (0.7, 9usize);
        let eta = sym_eig(&model.sigma_e).unwrap().eigenvalues;
        let expected = lambda * model.sigma_e.trace()
            - 0.5 * m as f64 * eta.iter().map(|e| (2.0 * lambda * e / m as f64).ln_1p()).sum::<f64>();
        let got = psi_exact(&model, &[model.w_star.clone()], lambda, m).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-10);
        let upper = psi_upper(&model, &[model.w_star.clone()], lambda, m).unwrap();
        assert_relative_eq!(
            upper,
            2.0 * lambda * lambda * model.sigma_e.norm_squared() / m as f64,
            max_relative = 1e-12
        );
    }

    #[test]
    fn psi_scalar_output_form() {
        let (sx, se) = (0.8f64, 0.3f64);
        let model = GaussianDataModel::new(
            DVector::zeros(3),
            DMatrix::identity(3, 3) * (sx * sx),
            DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0]),
            DMatrix::from_element(1, 1, se * se),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = gauss(1, 3, &mut rng);
        let (lambda, m) = (1.3, 7usize);
        let v = sx * sx * (&model.w_star - &w).norm_squared() + se * se;
        let half_m = m as f64 / 2.0;
        let expected = lambda * v - half_m * (1.0 + lambda * v / half_m).ln();
        assert_relative_eq!(psi_exact(&model, &[w], lambda, m).unwrap(), expected, max_relative = 1e-10);
    }

    fn random_prior_samples(model: &GaussianDataModel, count: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
        (0..count).map(|_| &model.w_star + gauss(model.output_dim(), model.input_dim(), rng) * 0.3).collect()
    }

    #[test]
    fn psi_exact_below_upper_for_centred_inputs() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut model = random_model(1 + seed as usize % 3, 2 + seed as usize % 3, seed);
            model.mu_x.fill(0.0);
            let eval = PsiEvaluator::new(&model, &random_prior_samples(&model, 5, &mut rng)).unwrap();
            let lambda = 0.1 + rng.random::<f64>();
            for m in [1usize, 3, 10, 100, 1000] {
                assert!(eval.exact(lambda, m).unwrap() <= eval.upper(lambda, m).unwrap() + 1e-12, "seed {seed} m {m}");
            }
        }
    }

    #[test]
    fn psi_exact_below_mean_aware_upper_and_monotone() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let model = random_model(1 + seed as usize % 3, 2 + seed as usize % 3, seed);
            let eval = PsiEvaluator::new(&model, &random_prior_samples(&model, 5, &mut rng)).unwrap();
            let lambda = 0.1 + rng.random::<f64>();
            let mut prev = f64::INFINITY;
            for m in [1usize, 3, 10, 100, 1000] {
                let exact = eval.exact(lambda, m).unwrap();
                assert!(exact <= eval.upper_with_mean(lambda, m).unwrap() + 1e-12, "seed {seed} m {m}");
                assert!(exact <= prev + 1e-12);
                prev = exact;
            }
        }
    }

    #[test]
    fn frobenius_upper_misses_the_mean_term() {
        // scalar output, Σ_x = 0: Σ_W = σ_e², μ_W = (w* − w)μ_x
        let model = GaussianDataModel::new(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 0.01),
        )
        .unwrap();
        let samples = [DMatrix::zeros(1, 1)];
        let (lambda, m) = (1.0, 10);
        let exact = psi_exact(&model, &samples, lambda, m).unwrap();
        assert!(exact > psi_upper(&model, &samples, lambda, m).unwrap());
        assert!(exact <= psi_upper_with_mean(&model, &samples, lambda, m).unwrap());
    }

    #[test]
    fn psi_upper_scales_as_inverse_m() {
        let model = random_model(2, 2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..4).map(|_| gauss(2, 2, &mut rng)).collect();
        let eval = PsiEvaluator::new(&model, &samples).unwrap();
        let a = eval.upper(0.5, 1_000_000).unwrap();
        let b = eval.upper(0.5, 2_000_000).unwrap();
        assert_relative_eq!(a / b, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn psi_argument_errors() {
        let model = random_model(1, 2, 12);
        let s = [model.w_star.clone()];
        assert!(psi_exact(&model, &s, 0.0, 5).is_err());
        assert!(psi_exact(&model, &s, 1.0, 0).is_err());
        assert!(psi_exact(&model, &[], 1.0, 5).is_err());
    }

    #[test]
    fn convergence_threshold_identity() {
        let model = GaussianDataModel::new(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let u0 = DMatrix::zeros(1, 2);
        let c = convergence_condition_gaussian(&model, &u0, 1.0, 0.4).unwrap();
        assert!(c.holds);
        assert_relative_eq!(c.threshold, 0.5);
        let c = convergence_condition_gaussian(&model, &u0, 1.0, 0.6).unwrap();
        assert!(!c.holds && c.log_value.is_none());
    }

    #[test]
    fn convergence_value_centred_prior() {
        let model = random_model(3, 2, 13);
        let (sigma, lambda) = (0.4, 0.2);
        let c = convergence_condition_gaussian(&model, &model.w_star.clone(), sigma, lambda).unwrap();
        assert!(c.holds);
        let nu = sym_eig(&model.second_moment()).unwrap().eigenvalues;
        let expected = -0.5 * 3.0 * nu.iter().map(|v| (1.0 - 2.0 * lambda * sigma * sigma * v).ln()).sum::<f64>();
        assert_relative_eq!(c.log_value.unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn convergence_value_matches_sampling() {
        let model = random_model(2, 2, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let u0 = &model.w_star + gauss(2, 2, &mut rng) * 0.3;
        let sigma = 0.3;
        let probe = convergence_condition_gaussian(&model, &u0, sigma, 1e-9).unwrap();
        let lambda = 0.1 * probe.threshold;
        let c = convergence_condition_gaussian(&model, &u0, sigma, lambda).unwrap();
        let root = crate::numerics::psd_sqrt(&model.second_moment()).unwrap();
        let draws = 1_000_000;
        let values: Vec<f64> = (0..draws)
            .map(|_| {
                let w = &u0 + gauss(2, 2, &mut rng) * sigma;
                (lambda * ((&model.w_star - w) * &root).norm_squared()).exp()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / draws as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let closed = c.log_value.unwrap().exp();
        assert!((mean - closed).abs() < 5.0 * se, "{mean} vs {closed} (se {se})");
    }

    #[test]
    fn alquier_examples() {
        assert_relative_eq!(alquier_rhs(0.0, 0.0, (-1.0f64).exp(), 0.0, 1.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(alquier_rhs(5.0, 0.0, 0.01, 0.0, 100.0).unwrap(), 5.04605, epsilon = 1e-5);
        let a = alquier_rhs(1.0, 2.0, 0.1, 0.5, 2.0).unwrap();
        let b = alquier_rhs(1.0, 2.0, 0.1, 0.5, 4.0).unwrap();
        assert!(b < a);
        assert!(alquier_rhs(0.0, -1.0, 0.1, 0.0, 1.0).is_err());
        assert!(alquier_rhs(0.0, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(alquier_rhs(0.0, 0.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn expected_risk_of_gaussian_posterior_matches_draws() {
        let model = random_model(2, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let post =
            GaussianPosterior::new(gauss(2, 3, &mut rng), DVector::from_vec(vec![0.05, 0.2, 0.01]), false).unwrap();
        let draws: Vec<f64> =
            (0..20_000).map(|_| error_moments(&model, &post.sample(&mut rng)).unwrap().true_risk()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        let closed = expected_true_risk_gaussian(&model, &post).unwrap();
        assert!((mean - closed).abs() < 5.0 * sd / (draws.len() as f64).sqrt(), "{mean} vs {closed}");
    }
}
