//! Symmetric spectral primitives and log-domain accumulation.
//!
//! Every bound in this crate reduces to eigendecompositions of small dense
//! symmetric matrices plus sums of exponentials that overflow `f64`. This
//! module owns both.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative clamp tolerance for negative eigenvalues of PSD input.
pub const CLAMP_RTOL: f64 = 1e-10;
/// Relative threshold below which an eigenvalue counts as zero for inversion.
pub const PD_RTOL: f64 = 1e-12;

/// `input = Sᵀ·diag(η)·S` with the rows of `S` holding eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Sorted non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Row `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Largest eigenvalue, or 0 for an empty matrix.
    pub fn top(&self) -> f64 {
        self.eigenvalues.iter().copied().next().unwrap_or(0.0)
    }

    pub fn bottom(&self) -> f64 {
        self.eigenvalues.iter().copied().last().unwrap_or(0.0)
    }

    /// `max(1, η₁)·1e-10`.
    pub fn clamp_tolerance(&self) -> f64 {
        self.top().max(1.0) * CLAMP_RTOL
    }

    /// `max(1, η₁)·1e-12`.
    pub fn pd_tolerance(&self) -> f64 {
        self.top().max(1.0) * PD_RTOL
    }

    /// `Sᵀ·diag(f(η))·S`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let s = &self.eigenvectors;
        let mut scaled = s.clone();
        for k in 0..n {
            let fk = f(self.eigenvalues[k]);
            scaled.row_mut(k).scale_mut(fk);
        }
        let mut out = s.transpose() * scaled;
        symmetrize_in_place(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_spectrum(|x| x)
    }
}

/// Replace `m` by `(m + mᵀ)/2`.
pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized first. Eigenvalues come back sorted
/// non-increasing, and each eigenvector is signed so that its first
/// nonzero component is positive.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    ensure_square(m, "eigendecomposition input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition { eigenvalues: DVector::zeros(0), eigenvectors: DMatrix::zeros(0, 0) });
    }
    let mut sym = m.clone();
    symmetrize_in_place(&mut sym);
    let frobenius = sym.norm();
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100_000).ok_or(Error::NoConvergence { n, frobenius })?;

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in solver order, which is deterministic
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (row, &k) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        let scale = col.norm().max(f64::MIN_POSITIVE);
        let sign = col.iter().find(|v| v.abs() > 1e-12 * scale).map_or(1.0, |v| v.signum());
        for j in 0..n {
            eigenvectors[(row, j)] = sign * col[j];
        }
    }
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// Fail when an eigenvalue lies below `-tol_clamp`.
pub fn check_psd(decomp: &SpectralDecomposition) -> Result<()> {
    let tol = decomp.clamp_tolerance();
    let low = decomp.bottom();
    if low < -tol {
        return Err(Error::NotPsd { eigenvalue: low, tolerance: tol });
    }
    Ok(())
}

/// Symmetric PSD square root, clamping eigenvalues in `[-tol_clamp, 0)` to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let decomp = sym_eig(m)?;
    psd_sqrt_from(&decomp)
}

pub fn psd_sqrt_from(decomp: &SpectralDecomposition) -> Result<DMatrix<f64>> {
    check_psd(decomp)?;
    Ok(decomp.map_spectrum(|x| x.max(0.0).sqrt()))
}

/// Symmetric inverse square root of a PD matrix.
pub fn psd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let decomp = sym_eig(m)?;
    psd_inv_sqrt_from(&decomp)
}

pub fn psd_inv_sqrt_from(decomp: &SpectralDecomposition) -> Result<DMatrix<f64>> {
    check_pd(decomp)?;
    Ok(decomp.map_spectrum(|x| 1.0 / x.sqrt()))
}

/// Fail when the smallest eigenvalue is at or below `tol_pd`.
pub fn check_pd(decomp: &SpectralDecomposition) -> Result<()> {
    let threshold = decomp.pd_tolerance();
    let low = decomp.bottom();
    if low <= threshold {
        return Err(Error::Singular { min_eigenvalue: low, threshold });
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "matrix to invert")?;
    let mut sym = m.clone();
    symmetrize_in_place(&mut sym);
    match sym.clone().cholesky() {
        Some(chol) => {
            let mut inv = chol.inverse();
            symmetrize_in_place(&mut inv);
            Ok(inv)
        }
        None => {
            let decomp = sym_eig(&sym)?;
            Err(Error::Singular { min_eigenvalue: decomp.bottom(), threshold: decomp.pd_tolerance() })
        }
    }
}

/// `ln Σ exp(v)`; `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln((1/N)·Σ exp(v))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled_sum: f64,
    count: usize,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, scaled_sum: 0.0, count: 0 }
    }
}

impl LogSumExp {
    pub fn push(&mut self, value: f64) {
        self.count += 1;
        if value == f64::NEG_INFINITY {
            return;
        }
        if value > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - value).exp() + 1.0;
            self.max = value;
        } else {
            self.scaled_sum += (value - self.max).exp();
        }
    }

    /// Associative combination of two partial accumulators.
    pub fn merge(mut self, other: LogSumExp) -> LogSumExp {
        self.count += other.count;
        if other.max == f64::NEG_INFINITY {
            return self;
        }
        if other.max > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - other.max).exp() + other.scaled_sum;
            self.max = other.max;
        } else {
            self.scaled_sum += other.scaled_sum * (other.max - self.max).exp();
        }
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn log_sum(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }

    pub fn log_mean(&self) -> f64 {
        self.log_sum() - (self.count as f64).ln()
    }
}

/// Element-wise Frobenius inner product `Σ a_ij b_ij`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn wishart(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = random_matrix(n, n + 2, rng);
        &g * g.transpose()
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn identity_spectrum() {
        let d = sym_eig(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(d.eigenvalues.as_slice(), &[1.0, 1.0]);
        let sst = d.eigenvectors.transpose() * &d.eigenvectors;
        assert!((sst - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let d = sym_eig(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).unwrap();
        assert_relative_eq!(d.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(d.eigenvalues[1], 2.0, epsilon = 1e-14);
        assert!(d.eigenvectors[(0, 1)] > 0.0);
    }

    #[test]
    fn two_by_two_forced_spectrum() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let d = sym_eig(&m).unwrap();
        assert_relative_eq!(d.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(d.eigenvalues[1], 1.0, epsilon = 1e-12);
        let r = 1.0 / 2f64.sqrt();
        // sign convention: first nonzero component positive
        assert_relative_eq!(d.eigenvectors[(0, 0)], r, epsilon = 1e-12);
        assert_relative_eq!(d.eigenvectors[(0, 1)], r, epsilon = 1e-12);
        assert_relative_eq!(d.eigenvectors[(1, 0)], r, epsilon = 1e-12);
        assert_relative_eq!(d.eigenvectors[(1, 1)], -r, epsilon = 1e-12);
    }

    #[test]
    fn non_square_is_dimension_error() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(sym_eig(&m), Err(Error::Dimension(_))));
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 3, 7, 12] {
            let m = wishart(n, &mut rng);
            let d = sym_eig(&m).unwrap();
            let sst = d.eigenvectors.transpose() * &d.eigenvectors;
            assert!((sst - DMatrix::<f64>::identity(n, n)).amax() < 1e-10);
            assert!(rel_frob(&d.reconstruct(), &m) < 1e-8);
            for k in 1..n {
                assert!(d.eigenvalues[k - 1] >= d.eigenvalues[k]);
            }
        }
    }

    #[test]
    fn deterministic_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = wishart(6, &mut rng);
        let a = sym_eig(&m).unwrap();
        let b = sym_eig(&m).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.eigenvectors, b.eigenvectors);
    }

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((psd_sqrt(&i).unwrap() - &i).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = psd_sqrt(&d).unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-13);
        assert_relative_eq!(s[(1, 1)], 3.0, epsilon = 1e-13);
        assert!(s[(0, 1)].abs() < 1e-14);
        let inv = psd_inv_sqrt(&d).unwrap();
        assert_relative_eq!(inv[(0, 0)], 0.5, epsilon = 1e-13);
        assert_relative_eq!(inv[(1, 1)], 1.0 / 3.0, epsilon = 1e-13);
        assert!((psd_inv_sqrt(&i).unwrap() - &i).amax() < 1e-14);
    }

    #[test]
    fn sqrt_of_wishart_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = wishart(5, &mut rng);
            let s = psd_sqrt(&m).unwrap();
            assert!(rel_frob(&(&s * &s), &m) < 1e-8);
            let inv = psd_inv_sqrt(&m).unwrap();
            let id = &inv * &m * &inv;
            assert!((id - DMatrix::<f64>::identity(5, 5)).amax() < 1e-8);
            assert!((&inv * &s - DMatrix::<f64>::identity(5, 5)).amax() < 1e-8);
        }
    }

    #[test]
    fn singular_psd_sqrt_is_clamped() {
        // rank one: eigenvalues (2, 0) up to round-off
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&m).unwrap();
        assert!(rel_frob(&(&s * &s), &m) < 1e-8);
        assert!(matches!(psd_inv_sqrt(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        match psd_sqrt(&m) {
            Err(Error::NotPsd { eigenvalue, .. }) => assert_relative_eq!(eigenvalue, -1e-3),
            other => panic!("expected NotPsd, got {other:?}"),
        }
        // within clamp tolerance is accepted
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-12]));
        assert!(psd_sqrt(&m).is_ok());
    }

    #[test]
    fn spd_inverse_matches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = wishart(6, &mut rng) + DMatrix::<f64>::identity(6, 6);
        let inv = spd_inverse(&m).unwrap();
        assert!((&inv * &m - DMatrix::<f64>::identity(6, 6)).amax() < 1e-9);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&singular), Err(Error::Singular { .. })));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(log_mean_exp(&[-1000.0, -1000.0]), -1000.0, epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let mut acc = LogSumExp::default();
        for v in [3.0, 1.0, 700.0, -5.0] {
            acc.push(v);
        }
        assert_relative_eq!(acc.log_sum(), log_sum_exp(&[3.0, 1.0, 700.0, -5.0]), epsilon = 1e-12);
        let mut a = LogSumExp::default();
        a.push(3.0);
        a.push(1.0);
        let mut b = LogSumExp::default();
        b.push(700.0);
        b.push(-5.0);
        assert_relative_eq!(a.merge(b).log_mean(), acc.log_mean(), epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn functions_commute_with_orthogonal_conjugation(seed in any::<u64>(), n in 2usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = wishart(n, &mut rng) + DMatrix::<f64>::identity(n, n) * 0.1;
                let q = random_matrix(n, n, &mut rng).qr().q();
                let conj = q.transpose() * &m * &q;
                let lhs = psd_sqrt(&conj).unwrap();
                let rhs = q.transpose() * psd_sqrt(&m).unwrap() * &q;
                prop_assert!(rel_frob(&lhs, &rhs) < 1e-8);
                let lhs = psd_inv_sqrt(&conj).unwrap();
                let rhs = q.transpose() * psd_inv_sqrt(&m).unwrap() * &q;
                prop_assert!(rel_frob(&lhs, &rhs) < 1e-8);
            }

            #[test]
            fn psd_input_has_no_significantly_negative_eigenvalues(seed in any::<u64>(), n in 1usize..8, rank in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = random_matrix(n, rank, &mut rng);
                let d = sym_eig(&(&g * g.transpose())).unwrap();
                prop_assert!(d.bottom() >= -d.clamp_tolerance());
            }
        }
    }
}
