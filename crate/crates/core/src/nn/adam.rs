//! Bias-corrected adaptive-moment optimiser.

use crate::scalar::Scalar;

use super::Parameter;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One update of every parameter at step `t >= 1` using the gradients
/// currently stored in each [`Parameter`]. Gradients are left untouched.
///
/// # Panics
/// If `t == 0`.
pub fn adam_step<F: Scalar>(params: &mut [&mut Parameter<F>], cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "adam step count starts at 1");
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    // lr * m_hat / (sqrt(v_hat) + eps) with the corrections folded in
    let step = F::from_f64_lossy(cfg.lr / c1);
    let inv_c2 = F::from_f64_lossy(1.0 / c2);
    let eps = F::from_f64_lossy(cfg.eps);
    let one = F::one();
    for p in params.iter_mut() {
        let Parameter { value, grad, first_moment, second_moment } = &mut **p;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(first_moment.data_mut())
            .zip(second_moment.data_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
}
