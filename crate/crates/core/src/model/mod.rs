//! The quantile-regression network: a shared convolutional trunk over the
//! book window, one LSTM branch per trading side fed with that side's recent
//! realized returns, and one LSTM head with a scalar readout per quantile.

pub mod checkpoint;
pub mod config;
pub mod fan;
pub mod network;
pub mod train;

use thiserror::Error;

use crate::kv::KvError;
use crate::nn::NnError;

pub use checkpoint::{read_arrays, write_arrays, NamedArray, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use fan::{predict, QuantileFan};
pub use network::{Batch, ForwardPass, NetworkState, Outputs};
pub use train::{train, EpochRecord, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
