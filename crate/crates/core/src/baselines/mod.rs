//! Reference predictors: last-observation persistence, a linear
//! autoregression on realized returns, and a small fully connected network.

pub mod ar;
pub mod mlp;

use thiserror::Error;

use crate::labeling::{LabeledSample, Side};
use crate::model::ModelError;

pub use ar::{ArFit, ArModel};
pub use mlp::{MlpConfig, MlpModel};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least {needed} observations, have {available}")]
    TooFewObservations { needed: usize, available: usize },
    #[error("lag order {order} exceeds the {available} returns of history per sample")]
    OrderTooLarge { order: usize, available: usize },
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Persistence forecast: the most recent adjusted return that is fully
/// realized at prediction time, `r'(t - k)`, indexed by [`Side::index`].
pub fn repetitive_predict(samples: &[LabeledSample<'_>]) -> [Vec<f64>; 2] {
    Side::BOTH.map(|side| samples.iter().map(|s| s.last_observed(side)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::train::tests::Fixture;

    #[test]
    fn persistence_reads_latest_history() {
        let mut fx = Fixture::signal(5, 8, 0.0, 1.0, 0);
        for (i, a) in fx.aux.iter_mut().enumerate() {
            a[0][7] = i as f64;
            a[1][7] = -(i as f64);
        }
        let p = repetitive_predict(&fx.samples());
        assert_eq!(p[0], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p[1], vec![0.0, -1.0, -2.0, -3.0, -4.0]);
    }

    #[test]
    fn constant_returns_are_predicted_exactly() {
        let mut fx = Fixture::signal(6, 8, 0.0, 0.0, 1);
        for a in fx.aux.iter_mut() {
            a[0].iter_mut().for_each(|v| *v = 0.25);
            a[1].iter_mut().for_each(|v| *v = -0.5);
        }
        fx.targets.iter_mut().for_each(|t| *t = [0.25, -0.5]);
        let samples = fx.samples();
        let p = repetitive_predict(&samples);
        for side in Side::BOTH {
            for (s, &v) in samples.iter().zip(&p[side.index()]) {
                assert_eq!(s.target.side(side), v);
            }
        }
    }
}
