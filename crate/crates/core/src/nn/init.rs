//! Parameter initialisers.

use rand::Rng;

use crate::scalar::Scalar;

use super::Tensor;

pub fn uniform<F: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = F::from_f64_lossy(rng.random_range(-bound..=bound));
    }
    t
}

/// Glorot uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
