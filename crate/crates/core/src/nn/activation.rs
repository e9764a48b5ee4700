use crate::scalar::Scalar;

/// In-place leaky ReLU: `x` for `x > 0`, `alpha * x` otherwise.
pub fn leaky_relu_forward<F: Scalar>(x: &mut [F], alpha: F) {
    for v in x.iter_mut() {
        if *v <= F::zero() {
            *v = *v * alpha;
        }
    }
}

/// Multiplies `grad` by the leaky ReLU slope at each pre-activation value.
///
/// `output` is the activated value; its sign equals the input's for
/// `alpha > 0`, so the forward output can stand in for the input.
pub fn leaky_relu_backward<F: Scalar>(output: &[F], grad: &mut [F], alpha: F) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= F::zero() {
            *g = *g * alpha;
        }
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
