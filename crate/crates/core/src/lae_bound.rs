//! PAC-Bayes bound for linear autoencoders under entry-wise Gaussian prior and posterior.
//!
//! The data enter only through second moments: the population correlation
//! `Σ_hh` (mapped to the masked input/target triple) for the true-risk side,
//! and the sample statistics `XXᵀ`, `YXᵀ`, `‖Y‖²_F` for the empirical side.
//! Every quantity of exponential scale is kept as its logarithm.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{HoldoutSplit, InteractionMatrix};
use crate::error::{Error, Result};
use crate::numerics::{check_pd, frobenius_dot, psd_inv_sqrt_from, psd_sqrt_from, spd_inverse, sym_eig};

/// Second moments `(Σ_xx, Σ_xy, Σ_yy)` of a regression pair plus the derived
/// quantities the closed-form risk needs.
#[derive(Debug, Clone)]
pub struct CorrelationTriple {
    pub sigma_xx: DMatrix<f64>,
    pub sigma_xy: DMatrix<f64>,
    pub sigma_yy: DMatrix<f64>,
    /// `Σ_xx^{1/2}`
    pub sqrt_xx: DMatrix<f64>,
    /// `Σ_xx^{−1/2}`
    pub inv_sqrt_xx: DMatrix<f64>,
    /// `B = −Σ_xyᵀ·Σ_xx^{−1/2}`
    pub b: DMatrix<f64>,
    /// `tr(Σ_yy) − ‖B‖²_F`, the risk floor over unconstrained `W`.
    pub c_log: f64,
    /// Ridge added to `Σ_xx` to make it invertible, if any.
    pub jitter: Option<f64>,
}

impl CorrelationTriple {
    /// Build from raw moments; `jitter` is applied only if `Σ_xx` fails the PD check.
    pub fn from_moments(
        sigma_xx: DMatrix<f64>,
        sigma_xy: DMatrix<f64>,
        sigma_yy: DMatrix<f64>,
        jitter: Option<f64>,
    ) -> Result<Self> {
        let n = sigma_xx.nrows();
        let p = sigma_yy.nrows();
        if sigma_xx.ncols() != n || sigma_xy.shape() != (n, p) || sigma_yy.ncols() != p {
            return Err(Error::Dimension(format!(
                "correlation shapes: xx {:?}, xy {:?}, yy {:?}",
                sigma_xx.shape(),
                sigma_xy.shape(),
                sigma_yy.shape()
            )));
        }
        let mut sigma_xx = sigma_xx;
        let mut decomp = sym_eig(&sigma_xx)?;
        let mut applied = None;
        if let Err(err) = check_pd(&decomp) {
            let Some(j) = jitter else { return Err(err) };
            if !(j > 0.0) {
                return Err(Error::InvalidArgument(format!("jitter must be positive, got {j}")));
            }
            log::warn!("sigma_xx is not positive definite ({err}); adding {j:e}·I");
            for i in 0..n {
                sigma_xx[(i, i)] += j;
            }
            decomp = sym_eig(&sigma_xx)?;
            check_pd(&decomp)?;
            applied = Some(j);
        }
        let sqrt_xx = psd_sqrt_from(&decomp)?;
        let inv_sqrt_xx = psd_inv_sqrt_from(&decomp)?;
        let b = -(sigma_xy.transpose() * &inv_sqrt_xx);
        let c_log = sigma_yy.trace() - b.norm_squared();
        Ok(Self { sigma_xx, sigma_xy, sigma_yy, sqrt_xx, inv_sqrt_xx, b, c_log, jitter: applied })
    }

    pub fn input_dim(&self) -> usize {
        self.sigma_xx.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.sigma_yy.nrows()
    }
}

/// Moments of `x = δ⊙h`, `y = (1−δ)⊙h` given `Σ_hh = E[hhᵀ]` and retention `p`.
pub fn holdout_moments(sigma_hh: &DMatrix<f64>, p: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    let n = sigma_hh.nrows();
    if sigma_hh.ncols() != n {
        return Err(Error::Dimension(format!("sigma_hh must be square, got {:?}", sigma_hh.shape())));
    }
    let q = 1.0 - p;
    let diag = DMatrix::from_diagonal(&sigma_hh.diagonal());
    let sxx = sigma_hh * (p * p) + &diag * (p * q);
    let syy = sigma_hh * (q * q) + &diag * (p * q);
    let sxy = (sigma_hh - &diag) * (p * q);
    Ok((sxx, sxy, syy))
}

pub fn correlations_from_holdout(sigma_hh: &DMatrix<f64>, p: f64, jitter: Option<f64>) -> Result<CorrelationTriple> {
    let (sxx, sxy, syy) = holdout_moments(sigma_hh, p)?;
    CorrelationTriple::from_moments(sxx, sxy, syy, jitter)
}

fn check_model_shape(corr: &CorrelationTriple, w: &DMatrix<f64>) -> Result<()> {
    if w.shape() != (corr.output_dim(), corr.input_dim()) {
        return Err(Error::Dimension(format!(
            "model is {:?}, correlations imply {}x{}",
            w.shape(),
            corr.output_dim(),
            corr.input_dim()
        )));
    }
    Ok(())
}

/// `R_true(W) = ‖W·Σ_xx^{1/2} + B‖²_F + tr(Σ_yy) − ‖B‖²_F`.
pub fn true_risk_closed(corr: &CorrelationTriple, w: &DMatrix<f64>) -> Result<f64> {
    check_model_shape(corr, w)?;
    let resid = w * &corr.sqrt_xx + &corr.b;
    Ok((resid.norm_squared() + corr.c_log).max(0.0))
}

/// `(1/m)·‖Y − W·X‖²_F` evaluated on the sparse input/target pair.
pub fn emp_risk(x: &InteractionMatrix, y: &InteractionMatrix, w: &DMatrix<f64>) -> Result<f64> {
    let n = x.n_items();
    if y.n_items() != n || y.n_users() != x.n_users() || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "X {}x{}, Y {}x{}, W {:?}",
            n,
            x.n_users(),
            y.n_items(),
            y.n_users(),
            w.shape()
        )));
    }
    let m = x.n_users();
    if m == 0 {
        return Err(Error::InvalidArgument("empirical risk needs at least one user".into()));
    }
    let mut total = 0.0;
    let mut pred = DVector::zeros(n);
    for u in 0..m {
        pred.fill(0.0);
        for &i in x.user_items(u) {
            pred += w.column(i);
        }
        for &i in y.user_items(u) {
            pred[i] -= 1.0;
        }
        total += pred.norm_squared();
    }
    Ok(total / m as f64)
}

/// Sufficient statistics of a sample for every empirical-side formula.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub m: usize,
    /// `X·Xᵀ`
    pub xx: DMatrix<f64>,
    /// `Y·Xᵀ`
    pub yx: DMatrix<f64>,
    /// `‖Y‖²_F`
    pub yy: f64,
}

impl SampleMoments {
    pub fn from_interactions(x: &InteractionMatrix, y: &InteractionMatrix) -> Result<Self> {
        if x.n_items() != y.n_items() {
            return Err(Error::Dimension(format!("X has {} items, Y has {}", x.n_items(), y.n_items())));
        }
        let m = x.n_users();
        if m == 0 {
            return Err(Error::InvalidArgument("sample has no users".into()));
        }
        Ok(Self { m, xx: x.gram(), yx: y.cross_gram(x)?, yy: y.nnz() as f64 })
    }

    pub fn from_holdout(split: &HoldoutSplit) -> Result<Self> {
        Self::from_interactions(&split.input, &split.target)
    }

    /// Dense `X` (n×m) and `Y` (p×m).
    pub fn from_dense(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Dimension(format!("X has {} columns, Y has {}", x.ncols(), y.ncols())));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("sample has no columns".into()));
        }
        Ok(Self { m: x.ncols(), xx: x * x.transpose(), yx: y * x.transpose(), yy: y.norm_squared() })
    }

    pub fn input_dim(&self) -> usize {
        self.xx.nrows()
    }

    /// `(1/m)·‖Y − W·X‖²_F` from the moments.
    pub fn risk(&self, w: &DMatrix<f64>) -> f64 {
        let wxx = w * &self.xx;
        let sq = self.yy - 2.0 * frobenius_dot(w, &self.yx) + frobenius_dot(&wxx, w);
        sq.max(0.0) / self.m as f64
    }
}

/// Entry-wise Gaussian prior `N̄(U₀, σ²J)`, or `N̄(U₀, σ²(J−I))` when `zero_diag`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: DMatrix<f64>,
    pub sigma: f64,
    pub zero_diag: bool,
}

impl GaussianPrior {
    pub fn new(mean: DMatrix<f64>, sigma: f64, zero_diag: bool) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if zero_diag {
            if !mean.is_square() {
                return Err(Error::Dimension(format!(
                    "zero-diagonal prior needs a square mean, got {:?}",
                    mean.shape()
                )));
            }
            if let Some(i) = (0..mean.nrows()).find(|&i| mean[(i, i)] != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "zero-diagonal prior mean has diagonal entry {} at {i}",
                    mean[(i, i)]
                )));
            }
        }
        Ok(Self { mean, sigma, zero_diag })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut w = self.mean.clone();
        for ((i, j), v) in w.iter_mut().enumerate().map(|(k, v)| ((k % self.mean.nrows(), k / self.mean.nrows()), v)) {
            if self.zero_diag && i == j {
                continue;
            }
            *v += self.sigma * rng.sample::<f64, _>(StandardNormal);
        }
        w
    }
}

/// Entry-wise Gaussian posterior `N̄(U, S)` whose variances depend only on the column: `S_ij = s_j`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DMatrix<f64>,
    pub col_var: DVector<f64>,
    /// Diagonal entries are deterministic zeros.
    pub zero_diag: bool,
}

impl GaussianPosterior {
    pub fn new(mean: DMatrix<f64>, col_var: DVector<f64>, zero_diag: bool) -> Result<Self> {
        if col_var.len() != mean.ncols() {
            return Err(Error::Dimension(format!("{} column variances for a {:?} mean", col_var.len(), mean.shape())));
        }
        if col_var.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("posterior variances must be positive".into()));
        }
        if zero_diag && (!mean.is_square() || (0..mean.nrows()).any(|i| mean[(i, i)] != 0.0)) {
            return Err(Error::InvalidArgument(
                "zero-diagonal posterior needs a square mean with zero diagonal".into(),
            ));
        }
        Ok(Self { mean, col_var, zero_diag })
    }

    /// How many random entries share each column's variance.
    pub fn entries_per_column(&self) -> f64 {
        let rows = self.mean.nrows() as f64;
        if self.zero_diag {
            rows - 1.0
        } else {
            rows
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        let rows = self.mean.nrows();
        let mut w = self.mean.clone();
        for j in 0..w.ncols() {
            let sd = self.col_var[j].sqrt();
            for i in 0..rows {
                if self.zero_diag && i == j {
                    continue;
                }
                w[(i, j)] += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        w
    }
}

/// Minimizer of `E_ρ[R_emp] + KL(ρ‖π)/λ` over entry-wise Gaussian `ρ`.
///
/// With `K = XXᵀ/m + I/(2λσ²)` the unconstrained mean is
/// `U = (YXᵀ/m + U₀/(2λσ²))·K⁻¹`. Under the zero-diagonal constraint the
/// Lagrange correction subtracts `(U_ii / (K⁻¹)_ii)·(K⁻¹)_{i*}` from each row.
pub fn optimal_posterior(sample: &SampleMoments, prior: &GaussianPrior, lambda: f64) -> Result<GaussianPosterior> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let n = sample.input_dim();
    if prior.mean.ncols() != n || sample.yx.shape() != prior.mean.shape() {
        return Err(Error::Dimension(format!(
            "prior mean {:?} vs sample XXᵀ {n}x{n}, YXᵀ {:?}",
            prior.mean.shape(),
            sample.yx.shape()
        )));
    }
    let m = sample.m as f64;
    let ridge = 1.0 / (2.0 * lambda * prior.variance());
    let mut k = &sample.xx / m;
    for i in 0..n {
        k[(i, i)] += ridge;
    }
    let k_inv = spd_inverse(&k)?;
    let rhs = &sample.yx / m + &prior.mean * ridge;
    let mut mean = rhs * &k_inv;
    if prior.zero_diag {
        for i in 0..n {
            let t = mean[(i, i)] / k_inv[(i, i)];
            for j in 0..n {
                mean[(i, j)] -= t * k_inv[(i, j)];
            }
            mean[(i, i)] = 0.0;
        }
    }
    let inv_var = 1.0 / prior.variance();
    let col_var = DVector::from_fn(n, |j, _| 1.0 / (2.0 * lambda / m * sample.xx[(j, j)] + inv_var));
    Ok(GaussianPosterior { mean, col_var, zero_diag: prior.zero_diag })
}

/// `KL(ρ‖π)` summed over the random entries.
pub fn kl_divergence(post: &GaussianPosterior, prior: &GaussianPrior) -> Result<f64> {
    if post.zero_diag != prior.zero_diag {
        return Err(Error::InvalidArgument(format!(
            "posterior zero_diag={} but prior zero_diag={}",
            post.zero_diag, prior.zero_diag
        )));
    }
    if post.mean.shape() != prior.mean.shape() {
        return Err(Error::Dimension(format!("posterior {:?} vs prior {:?}", post.mean.shape(), prior.mean.shape())));
    }
    let var0 = prior.variance();
    let count = post.entries_per_column();
    // per entry: ½[ln(σ²/s) + s/σ² − 1 + (u − u₀)²/σ²]
    let variance_part: f64 = post
        .col_var
        .iter()
        .map(|&s| {
            let d = s / var0 - 1.0;
            0.5 * count * (d - d.ln_1p())
        })
        .sum();
    let mean_part = (&post.mean - &prior.mean).norm_squared() / (2.0 * var0);
    Ok(variance_part + mean_part)
}

/// `E_{W∼ρ}[R_emp(W)] = (1/m)‖Y − UX‖²_F + (c/m)·Σ_j s_j‖X_{j*}‖²` with `c = n−1` (zero diagonal) or `n`.
pub fn expected_emp_risk(post: &GaussianPosterior, sample: &SampleMoments) -> Result<f64> {
    if post.mean.ncols() != sample.input_dim() || post.mean.shape() != sample.yx.shape() {
        return Err(Error::Dimension(format!(
            "posterior {:?} vs sample YXᵀ {:?}",
            post.mean.shape(),
            sample.yx.shape()
        )));
    }
    let spread: f64 = post.col_var.iter().enumerate().map(|(j, s)| s * sample.xx[(j, j)]).sum();
    Ok(sample.risk(&post.mean) + post.entries_per_column() * spread / sample.m as f64)
}

/// `E_{W∼ρ}[R_true(W)] = ‖U·Σ_xx^{1/2} + B‖²_F + c·Σ_j s_j(Σ_xx)_jj + tr(Σ_yy) − ‖B‖²_F`.
pub fn expected_true_risk(post: &GaussianPosterior, corr: &CorrelationTriple) -> Result<f64> {
    let base = true_risk_closed(corr, &post.mean)?;
    let spread: f64 = post.col_var.iter().enumerate().map(|(j, s)| s * corr.sigma_xx[(j, j)]).sum();
    Ok(base + post.entries_per_column() * spread)
}

/// `E_ρ[R_emp] + KL(ρ‖π)/λ`, the quantity [`optimal_posterior`] minimizes.
pub fn posterior_objective(
    post: &GaussianPosterior,
    prior: &GaussianPrior,
    sample: &SampleMoments,
    lambda: f64,
) -> Result<f64> {
    Ok(expected_emp_risk(post, sample)? + kl_divergence(post, prior)? / lambda)
}

/// `ln E_π[e^{λ·R_true(W)}]` as computed, and whether it is exact or an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogMgf {
    pub value: f64,
    pub is_upper_bound: bool,
}

/// Spectral data of `A = σ²Σ_xx` shared by every `λ` on a grid.
///
/// With `μⁱ = Σ_xx^{1/2}(U₀)_{i*}ᵀ + B_{i*}ᵀ` and `A = Sᵀ·diag(η)·S`,
/// `ln E_π[e^{λR}] = λ·c_log + Σ_j [λ·q_j/(1 − 2λη_j) − (rows/2)·ln(1 − 2λη_j)]`
/// where `q_j = Σ_i (S_{j*}·μⁱ)²`. This is the `b̄_j²η_j` form with `A^{−1/2}` cancelled.
#[derive(Debug, Clone)]
pub struct PriorMgf {
    c_log: f64,
    rows: usize,
    eta: DVector<f64>,
    weights: DVector<f64>,
    zero_diag: bool,
}

impl PriorMgf {
    pub fn new(prior: &GaussianPrior, corr: &CorrelationTriple) -> Result<Self> {
        check_model_shape(corr, &prior.mean)?;
        let a = &corr.sigma_xx * prior.variance();
        let decomp = sym_eig(&a)?;
        // rows of `mu` are (μⁱ)ᵀ
        let mu = &prior.mean * &corr.sqrt_xx + &corr.b;
        let proj = mu * decomp.eigenvectors.transpose();
        let weights = DVector::from_fn(proj.ncols(), |j, _| proj.column(j).norm_squared());
        let eta = decomp.eigenvalues.map(|e| e.max(0.0));
        Ok(Self { c_log: corr.c_log, rows: prior.mean.nrows(), eta, weights, zero_diag: prior.zero_diag })
    }

    /// Largest eigenvalue of `σ²Σ_xx`.
    pub fn top_eigenvalue(&self) -> f64 {
        self.eta.iter().copied().next().unwrap_or(0.0)
    }

    /// `1/(2η₁)`; every admissible `λ` lies strictly below it.
    pub fn threshold(&self) -> f64 {
        let top = self.top_eigenvalue();
        if top > 0.0 {
            1.0 / (2.0 * top)
        } else {
            f64::INFINITY
        }
    }

    pub fn eval(&self, lambda: f64) -> Result<LogMgf> {
        let threshold = self.threshold();
        if !(lambda > 0.0) || !(lambda < threshold) {
            return Err(Error::LambdaDomain { lambda, threshold });
        }
        let half_rows = 0.5 * self.rows as f64;
        let mut value = lambda * self.c_log;
        for (&eta, &q) in self.eta.iter().zip(self.weights.iter()) {
            let shrink = 1.0 - 2.0 * lambda * eta;
            value += lambda * q / shrink - half_rows * (-2.0 * lambda * eta).ln_1p();
        }
        Ok(LogMgf { value, is_upper_bound: self.zero_diag })
    }
}

/// `ln E_π[e^{λR_true(W)}]`; for a zero-diagonal prior the unconstrained value is returned as an upper bound.
pub fn log_mgf_prior(prior: &GaussianPrior, corr: &CorrelationTriple, lambda: f64) -> Result<LogMgf> {
    PriorMgf::new(prior, corr)?.eval(lambda)
}

/// Configuration of the grid bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundSettings {
    pub sigma: f64,
    pub delta: f64,
    pub grid: Vec<f64>,
    pub zero_diag: bool,
    pub jitter: Option<f64>,
}

/// `{1, 2, 4, …, 512}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|k| f64::from(1u32 << k)).collect()
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self { sigma: 0.001, delta: 0.01, grid: default_lambda_grid(), zero_diag: true, jitter: None }
    }
}

impl BoundSettings {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if self.grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda grid values must be positive and finite".into()));
        }
        let mut sorted = self.grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("lambda grid values must be distinct".into()));
        }
        Ok(())
    }

    /// `ln(L/δ)` over the declared grid size.
    pub fn ln_grid_over_delta(&self) -> f64 {
        (self.grid.len() as f64 / self.delta).ln()
    }
}

/// One grid point of the bound.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub emp_risk_exp: f64,
    pub kl: f64,
    pub log_mgf: Option<f64>,
    #[serde(rename = "ln_L_over_delta")]
    pub ln_l_over_delta: f64,
    /// `E_ρ[R_true]`
    #[serde(rename = "LH")]
    pub lh: f64,
    #[serde(rename = "RH")]
    pub rh: Option<f64>,
    pub mgf_is_upper_bound: bool,
    pub rejected: Option<String>,
}

impl LambdaRecord {
    pub fn is_rejected(&self) -> bool {
        self.rejected.is_some()
    }
}

/// `RH = emp + (kl + ln(L/δ) + log_mgf)/λ`.
pub fn assemble_rh(emp_risk_exp: f64, kl: f64, ln_l_over_delta: f64, log_mgf: f64, lambda: f64) -> f64 {
    emp_risk_exp + (kl + ln_l_over_delta + log_mgf) / lambda
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub grid: Vec<LambdaRecord>,
    pub best_index: usize,
    pub delta: f64,
    pub sigma: f64,
    pub p: f64,
    #[serde(rename = "L")]
    pub grid_size: usize,
    pub zero_diag: bool,
    pub jitter: Option<f64>,
    /// `1/(2η₁)` for the prior used.
    pub lambda_threshold: f64,
}

impl BoundReport {
    pub fn best(&self) -> &LambdaRecord {
        &self.grid[self.best_index]
    }

    /// `RH/LH` at the selected grid point.
    pub fn tightness_ratio(&self) -> f64 {
        let best = self.best();
        best.rh.unwrap_or(f64::NAN) / best.lh
    }

    /// Fixed-width table, one line per grid point, best row starred.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# delta={} sigma={} p={} L={} zero_diag={} jitter={} lambda_threshold={:e}",
            self.delta,
            self.sigma,
            self.p,
            self.grid_size,
            self.zero_diag,
            self.jitter.map_or("none".to_string(), |j| format!("{j:e}")),
            self.lambda_threshold
        );
        let _ = writeln!(
            out,
            "{:>12} {:>14} {:>14} {:>16} {:>16} {:>14} {:>14}  rejected",
            "lambda", "emp", "kl", "log_mgf", "ln_L_over_delta", "LH", "RH"
        );
        for (idx, r) in self.grid.iter().enumerate() {
            let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{:>12} {:>14.6} {:>14.6} {:>16} {:>16.6} {:>14.6} {:>14}  {}{}",
                r.lambda,
                r.emp_risk_exp,
                r.kl,
                fmt_opt(r.log_mgf),
                r.ln_l_over_delta,
                r.lh,
                fmt_opt(r.rh),
                r.rejected.as_deref().unwrap_or("-"),
                if idx == self.best_index { " *" } else { "" }
            );
        }
        out
    }
}

/// Grid bound with the prior centred on `model`, from the population correlation `Σ_hh`.
pub fn compute_bound(
    sigma_hh: &DMatrix<f64>,
    p: f64,
    sample: &SampleMoments,
    model: &DMatrix<f64>,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    settings.validate()?;
    let corr = correlations_from_holdout(sigma_hh, p, settings.jitter)?;
    compute_bound_with_correlations(&corr, p, sample, model, settings)
}

/// Grid bound for an already-built correlation triple.
pub fn compute_bound_with_correlations(
    corr: &CorrelationTriple,
    p: f64,
    sample: &SampleMoments,
    model: &DMatrix<f64>,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    settings.validate()?;
    let prior = GaussianPrior::new(model.clone(), settings.sigma, settings.zero_diag)?;
    let mgf = PriorMgf::new(&prior, corr)?;
    let ln_l_over_delta = settings.ln_grid_over_delta();

    let grid: Vec<LambdaRecord> = settings
        .grid
        .par_iter()
        .map(|&lambda| -> Result<LambdaRecord> {
            let post = optimal_posterior(sample, &prior, lambda)?;
            let kl = kl_divergence(&post, &prior)?;
            let emp = expected_emp_risk(&post, sample)?;
            let lh = expected_true_risk(&post, corr)?;
            let (log_mgf, rh, rejected) = match mgf.eval(lambda) {
                Ok(v) => (Some(v.value), Some(assemble_rh(emp, kl, ln_l_over_delta, v.value, lambda)), None),
                Err(e @ Error::LambdaDomain { .. }) => (None, None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            Ok(LambdaRecord {
                lambda,
                emp_risk_exp: emp,
                kl,
                log_mgf,
                ln_l_over_delta,
                lh,
                rh,
                mgf_is_upper_bound: prior.zero_diag,
                rejected,
            })
        })
        .collect::<Result<_>>()?;

    let best_index = grid
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.rh.map(|rh| (i, rh)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(Error::NoFeasibleLambda { threshold: mgf.threshold() })?;

    Ok(BoundReport {
        grid,
        best_index,
        delta: settings.delta,
        sigma: settings.sigma,
        p,
        grid_size: settings.grid.len(),
        zero_diag: settings.zero_diag,
        jitter: corr.jitter,
        lambda_threshold: mgf.threshold(),
    })
}
