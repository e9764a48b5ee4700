//! Minimal numerical kernels with explicit forward and backward passes:
//! convolution, LSTM, dense, leaky ReLU, pinball loss and Adam.
//!
//! There is no autodiff graph. Each layer exposes `forward` returning a cache
//! and `backward` consuming it, accumulating parameter gradients into its
//! [`Parameter`]s and returning the gradient with respect to its input.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod tensor;

use thiserror::Error;

pub use activation::{leaky_relu_backward, leaky_relu_forward};
pub use adam::{adam_step, AdamConfig};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, Conv2d, Conv2dGrads};
pub use dense::Dense;
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use loss::{pinball, pinball_loss, QuantileSpec};
pub use lstm::{Lstm, LstmCache};
pub use tensor::{Parameter, Tensor};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("quantile level {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("gradient check failed at coordinate {coordinate}: analytic {analytic:e}, numeric {numeric:e}")]
    CheckFailed { coordinate: usize, analytic: f64, numeric: f64 },
}
