use crate::labeling::{LabeledSample, Side};
use crate::nn::pinball;
use crate::scalar::Scalar;

use super::{Batch, ModelError, NetworkState};

/// Samples per inference batch.
const PREDICT_BATCH: usize = 256;

/// Quantile estimates per side, aligned with sample end timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileFan {
    pub quantiles: Vec<f64>,
    pub end_ts_ns: Vec<i64>,
    /// `values[side][sample][quantile]`.
    pub values: [Vec<Vec<f64>>; 2],
}

impl QuantileFan {
    pub fn len(&self) -> usize {
        self.end_ts_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.end_ts_ns.is_empty()
    }

    pub fn side(&self, side: Side) -> &[Vec<f64>] {
        &self.values[side.index()]
    }

    /// One quantile's estimates across all samples.
    pub fn column(&self, side: Side, q: usize) -> Vec<f64> {
        self.values[side.index()].iter().map(|row| row[q]).collect()
    }

    /// Sorts every row ascending.
    pub fn rearranged(&self) -> QuantileFan {
        let mut out = self.clone();
        for side in &mut out.values {
            for row in side.iter_mut() {
                rearrange(row);
            }
        }
        out
    }

    /// Fraction of rows, over both sides, that are non-decreasing.
    pub fn monotone_fraction(&self) -> f64 {
        let rows = self.values.iter().flatten();
        let total = self.values.iter().map(Vec::len).sum::<usize>();
        if total == 0 {
            return 1.0;
        }
        rows.filter(|r| r.windows(2).all(|w| w[0] <= w[1])).count() as f64 / total as f64
    }

    /// Sum over quantiles of the pinball loss of one row against `target`.
    pub fn row_loss(&self, side: Side, sample: usize, target: f64) -> f64 {
        self.values[side.index()][sample].iter().zip(&self.quantiles).map(|(&p, &tau)| pinball(target, p, tau)).sum()
    }
}

/// Monotone rearrangement on a finite quantile grid: sorting the estimates.
pub fn rearrange(row: &mut [f64]) {
    row.sort_by(f64::total_cmp);
}

/// Raw (possibly crossing) quantile estimates for every sample.
pub fn predict<F: Scalar>(state: &NetworkState<F>, samples: &[LabeledSample<'_>]) -> Result<QuantileFan, ModelError> {
    let nq = state.quantiles().len();
    let mut values: [Vec<Vec<f64>>; 2] = [Vec::with_capacity(samples.len()), Vec::with_capacity(samples.len())];
    for chunk in samples.chunks(PREDICT_BATCH) {
        let refs: Vec<&LabeledSample<'_>> = chunk.iter().collect();
        let batch = Batch::<F>::from_samples(&refs, state.config.window)?;
        let out = state.forward(&batch)?.outputs;
        for s in 0..2 {
            for i in 0..chunk.len() {
                values[s].push((0..nq).map(|q| out[s][q][i].to_f64_lossy()).collect());
            }
        }
    }
    Ok(QuantileFan {
        quantiles: state.quantiles().to_vec(),
        end_ts_ns: samples.iter().map(|s| s.end_ts_ns).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fan(rows: Vec<Vec<f64>>) -> QuantileFan {
        QuantileFan {
            quantiles: vec![0.25, 0.5, 0.75],
            end_ts_ns: (0..rows.len() as i64).collect(),
            values: [rows.clone(), rows],
        }
    }

    #[test]
    fn sorting_examples() {
        let f = fan(vec![vec![0.3, 0.1, 0.2], vec![-1.0, 0.0, 2.0]]);
        let r = f.rearranged();
        assert_eq!(r.values[0][0], vec![0.1, 0.2, 0.3]);
        assert_eq!(r.values[0][1], vec![-1.0, 0.0, 2.0]);
        assert_eq!(f.monotone_fraction(), 0.5);
        assert_eq!(r.monotone_fraction(), 1.0);
    }

    proptest! {
        #[test]
        fn rearrangement_never_increases_loss(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20),
            targets in prop::collection::vec(-5.0f64..5.0, 20),
        ) {
            let f = fan(rows);
            let r = f.rearranged();
            prop_assert_eq!(r.monotone_fraction(), 1.0);
            for i in 0..f.len() {
                let before = f.row_loss(Side::Long, i, targets[i]);
                let after = r.row_loss(Side::Long, i, targets[i]);
                prop_assert!(after <= before + 1e-12);
            }
        }
    }
}
