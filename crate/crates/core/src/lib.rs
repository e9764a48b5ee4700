//! Quantile regression on limit order book streams: snapshot ingest, return
//! labeling, a conv/LSTM quantile network with hand-written gradients,
//! reference baselines, forecast combination and evaluation.

pub mod baselines;
pub mod combine;
pub mod eval;
pub mod ingest;
pub mod kv;
pub mod labeling;
pub mod lob;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod synthgen;

/// Working precision for training and inference.
pub type Real = f32;
pub type Network = model::NetworkState<Real>;
pub type Network64 = model::NetworkState<f64>;
pub type Mlp = baselines::MlpModel<Real>;
pub type Mlp64 = baselines::MlpModel<f64>;
