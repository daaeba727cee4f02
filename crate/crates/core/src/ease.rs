//! Closed-form EASE training: `min ‖H − WH‖²_F + γ‖W‖²_F  s.t. diag(W) = 0`.

use nalgebra::DMatrix;

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::numerics::spd_inverse;

#[derive(Debug, Clone)]
pub struct EaseModel {
    /// Item×item weights with an exactly zero diagonal; predictions are `W·h`.
    pub weights: DMatrix<f64>,
    pub gamma: f64,
}

/// Train from the sparse interaction matrix via its Gram matrix.
pub fn train_ease(h_train: &InteractionMatrix, gamma: f64) -> Result<EaseModel> {
    train_ease_from_gram(&h_train.gram(), gamma)
}

/// Train from a precomputed `H·Hᵀ`.
///
/// With `P = (HHᵀ + γI)⁻¹` the weights are `W_ab = −P_ab / P_aa` for `a ≠ b`.
pub fn train_ease_from_gram(gram: &DMatrix<f64>, gamma: f64) -> Result<EaseModel> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::Dimension(format!("gram matrix must be square, got {:?}", gram.shape())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("EASE needs at least 2 items, got {n}")));
    }
    let mut regularized = gram.clone();
    for i in 0..n {
        regularized[(i, i)] += gamma;
    }
    let p = spd_inverse(&regularized)?;
    let mut weights = p;
    for a in 0..n {
        let scale = -1.0 / weights[(a, a)];
        weights.row_mut(a).scale_mut(scale);
        weights[(a, a)] = 0.0;
    }
    Ok(EaseModel { weights, gamma })
}

/// `‖H − WH‖²_F + γ‖W‖²_F` evaluated through the Gram matrix.
pub fn ease_objective(gram: &DMatrix<f64>, weights: &DMatrix<f64>, gamma: f64) -> f64 {
    // ‖H − WH‖² = tr(G) − 2 tr(WG) + tr(W G Wᵀ)
    let wg = weights * gram;
    let cross: f64 = (0..gram.nrows()).map(|i| wg[(i, i)]).sum();
    let quad: f64 = wg.iter().zip(weights.iter()).map(|(a, b)| a * b).sum();
    gram.trace() - 2.0 * cross + quad + gamma * weights.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_bernoulli, BernoulliModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, m: usize, seed: u64) -> InteractionMatrix {
        let model = BernoulliModel::factorized((0..n).map(|i| 0.2 + 0.1 * i as f64).collect()).unwrap();
        sample_bernoulli(&model, m, seed).unwrap()
    }

    #[test]
    fn diagonal_exactly_zero() {
        for seed in 0..5 {
            let h = toy(6, 30, seed);
            let model = train_ease(&h, 3.0).unwrap();
            for i in 0..6 {
                assert_eq!(model.weights[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn ridge_limit() {
        let h = toy(5, 40, 1);
        let gram = h.gram();
        let model = train_ease(&h, 1e8).unwrap();
        // W ≈ offdiag(HHᵀ)/γ for γ ≫ ‖HHᵀ‖
        let bound = 2.0 * gram.amax() / 1e8;
        assert!(model.weights.amax() <= bound);
        assert!(model.weights.norm() < 1e-5);
    }

    #[test]
    fn invalid_inputs() {
        let h = toy(3, 5, 2);
        assert!(matches!(train_ease(&h, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(train_ease(&h, -1.0), Err(Error::InvalidArgument(_))));
        let single = InteractionMatrix::empty(1, 4);
        assert!(matches!(train_ease(&single, 1.0), Err(Error::InvalidArgument(_))));
    }

    fn objective_with_gram(h: &InteractionMatrix, w: &DMatrix<f64>, gamma: f64) -> f64 {
        let dense = h.to_dense();
        (&dense - w * &dense).norm_squared() + gamma * w.norm_squared()
    }

    #[test]
    fn objective_via_gram_matches_dense() {
        let h = toy(4, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
        let a = ease_objective(&h.gram(), &w, 2.5);
        let b = objective_with_gram(&h, &w, 2.5);
        assert!((a - b).abs() < 1e-10 * b.max(1.0));
    }

    #[test]
    fn stationary_on_off_diagonal_coordinates() {
        // finite-difference gradient of the objective over off-diagonal entries
        let h = toy(5, 25, 6);
        let gram = h.gram();
        let gamma = 4.0;
        let w = train_ease(&h, gamma).unwrap().weights;
        let scale = ease_objective(&gram, &w, gamma).abs().max(1.0);
        let eps = 1e-5;
        for a in 0..5 {
            for b in 0..5 {
                if a == b {
                    continue;
                }
                let mut plus = w.clone();
                plus[(a, b)] += eps;
                let mut minus = w.clone();
                minus[(a, b)] -= eps;
                let g = (ease_objective(&gram, &plus, gamma) - ease_objective(&gram, &minus, gamma)) / (2.0 * eps);
                assert!(g.abs() < 1e-6 * scale, "gradient {g} at ({a},{b})");
            }
        }
    }

    #[test]
    fn no_random_perturbation_improves_objective() {
        let h = toy(5, 25, 8);
        let gram = h.gram();
        let gamma = 10.0;
        let w = train_ease(&h, gamma).unwrap().weights;
        let best = ease_objective(&gram, &w, gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let mut d = DMatrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { rng.random::<f64>() - 0.5 });
            let norm = d.norm();
            d *= 1e-3 / norm;
            assert!(ease_objective(&gram, &(&w + d), gamma) >= best);
        }
    }
}
