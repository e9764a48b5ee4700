//! Least-squares autoregression of the adjusted return on its most recent
//! realized lags `r'(t-k), r'(t-k-1), ...`.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::labeling::{LabeledSample, Side};

use super::BaselineError;

/// Ridge penalty used when the lag design is rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Coefficients for one side: intercept followed by lags 1..=p.
#[derive(Clone, Debug, PartialEq)]
pub struct ArFit {
    pub coefficients: Vec<f64>,
    /// True when the design was singular and the ridge fallback was used.
    pub ridge: bool,
}

impl ArFit {
    /// `history` is oldest first; lag 1 is its last entry.
    pub fn predict(&self, history: &[f64]) -> f64 {
        let mut y = self.coefficients[0];
        for (j, c) in self.coefficients[1..].iter().enumerate() {
            y += c * history[history.len() - 1 - j];
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    pub order: usize,
    /// Indexed by [`Side::index`].
    pub sides: [ArFit; 2],
}

/// Fits `target = c0 + sum_j c_j * history[len - j]` by least squares.
///
/// Lag columns that are constant duplicate the intercept and get a zero
/// coefficient. If the remaining design is still rank deficient the ridge
/// solution with [`RIDGE_LAMBDA`] is returned and flagged.
pub fn fit_lags(histories: &[&[f64]], targets: &[f64], order: usize) -> Result<ArFit, BaselineError> {
    let n = targets.len();
    if n < order + 1 {
        return Err(BaselineError::TooFewObservations { needed: order + 1, available: n });
    }
    if let Some(h) = histories.iter().find(|h| h.len() < order) {
        return Err(BaselineError::OrderTooLarge { order, available: h.len() });
    }
    let lag = |i: usize, j: usize| histories[i][histories[i].len() - j];
    let active: Vec<usize> = (1..=order).filter(|&j| (0..n).any(|i| lag(i, j) != lag(0, j))).collect();
    let x = DMatrix::from_fn(n, active.len() + 1, |i, c| if c == 0 { 1.0 } else { lag(i, active[c - 1]) });
    let y = DVector::from_column_slice(targets);

    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let (beta, ridge) = if min_sv > 1e-10 * max_sv {
        (svd.solve(&y, 0.0).expect("U and V were computed"), false)
    } else {
        let xt = x.transpose();
        let mut gram = &xt * &x;
        for d in 0..gram.nrows() {
            gram[(d, d)] += RIDGE_LAMBDA;
        }
        let rhs = xt * y;
        let beta = gram.cholesky().expect("ridge Gram matrix is positive definite").solve(&rhs);
        (beta, true)
    };
    let mut coefficients = vec![0.0; order + 1];
    coefficients[0] = beta[0];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j] = beta[c + 1];
    }
    Ok(ArFit { coefficients, ridge })
}

impl ArModel {
    pub fn fit(samples: &[LabeledSample<'_>], order: usize) -> Result<Self, BaselineError> {
        let fit_side = |side: Side| {
            let h: Vec<&[f64]> = samples.iter().map(|s| s.aux(side)).collect();
            let y: Vec<f64> = samples.iter().map(|s| s.target.side(side)).collect();
            fit_lags(&h, &y, order)
        };
        Ok(ArModel { order, sides: [fit_side(Side::Long)?, fit_side(Side::Short)?] })
    }

    pub fn predict(&self, samples: &[LabeledSample<'_>]) -> [Vec<f64>; 2] {
        Side::BOTH.map(|side| samples.iter().map(|s| self.sides[side.index()].predict(s.aux(side))).collect())
    }

    /// `side,lag,coefficient,ridge` rows; lag 0 is the intercept.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "side,lag,coefficient,ridge")?;
        for side in Side::BOTH {
            let fit = &self.sides[side.index()];
            for (lag, c) in fit.coefficients.iter().enumerate() {
                writeln!(w, "{},{lag},{c:?},{}", side.name(), fit.ridge)?;
            }
        }
        w.flush()
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, BaselineError> {
        let bad = |line: usize| BaselineError::Malformed(format!("AR coefficients line {line}"));
        let mut sides: [Option<ArFit>; 2] = [None, None];
        for (i, line) in BufReader::new(r).lines().enumerate().skip(1) {
            let line = line.map_err(|e| BaselineError::Malformed(e.to_string()))?;
            let f: Vec<&str> = line.split(',').collect();
            let [name, lag, c, ridge] = f[..] else { return Err(bad(i + 1)) };
            let side = Side::BOTH.into_iter().find(|s| s.name() == name).ok_or_else(|| bad(i + 1))?;
            let lag: usize = lag.parse().map_err(|_| bad(i + 1))?;
            let c: f64 = c.parse().map_err(|_| bad(i + 1))?;
            let ridge: bool = ridge.parse().map_err(|_| bad(i + 1))?;
            let fit = sides[side.index()].get_or_insert_with(|| ArFit { coefficients: Vec::new(), ridge });
            if lag != fit.coefficients.len() || ridge != fit.ridge {
                return Err(bad(i + 1));
            }
            fit.coefficients.push(c);
        }
        let [Some(long), Some(short)] = sides else {
            return Err(BaselineError::Malformed("AR coefficients missing a side".into()));
        };
        if long.coefficients.len() != short.coefficients.len() {
            return Err(BaselineError::Malformed("AR sides have different orders".into()));
        }
        Ok(ArModel { order: long.coefficients.len() - 1, sides: [long, short] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn series(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = ArModel {
            order: 2,
            sides: [
                ArFit { coefficients: vec![0.1 + 0.2, -1e-300, 3.5], ridge: false },
                ArFit { coefficients: vec![f64::MIN_POSITIVE, 2.0 / 3.0, -0.0], ridge: true },
            ],
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ArModel::read_csv(&buf[..]).unwrap();
        for (a, b) in m.sides.iter().zip(&back.sides) {
            let bits = |f: &ArFit| f.coefficients.iter().map(|c| c.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.ridge, b.ridge);
        }
        assert!(ArModel::read_csv(&b"side,lag,coefficient,ridge\nlong,1,0.5,false\n"[..]).is_err());
    }

    #[test]
    fn recovers_known_ar2() {
        let hist: Vec<Vec<f64>> = (0..200).map(|i| series(6, i)).collect();
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = refs.iter().map(|h| 0.1 + 0.6 * h[5] - 0.3 * h[4]).collect();
        let fit = fit_lags(&refs, &y, 2).unwrap();
        assert!(!fit.ridge);
        for (a, b) in fit.coefficients.iter().zip([0.1, 0.6, -0.3]) {
            assert!((a - b).abs() < 1e-6, "{:?}", fit.coefficients);
        }
    }

    #[test]
    fn order_zero_is_the_mean() {
        let hist: Vec<Vec<f64>> = (0..10).map(|i| series(3, i)).collect();
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = fit_lags(&refs, &y, 0).unwrap();
        assert!((fit.coefficients[0] - 4.5).abs() < 1e-12);
        assert!((fit.predict(&[9.0, 9.0]) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn constant_series_fits_intercept_only() {
        let hist = vec![vec![0.3; 5]; 20];
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        let y = vec![0.3; 20];
        let fit = fit_lags(&refs, &y, 3).unwrap();
        assert_eq!(&fit.coefficients[1..], &[0.0, 0.0, 0.0]);
        assert!((fit.predict(&hist[0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn collinear_lags_fall_back_to_ridge() {
        let hist: Vec<Vec<f64>> = (0..30).map(|i| {
            let v = series(1, i)[0];
            vec![v, v]
        }).collect();
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = hist.iter().map(|h| 2.0 * h[0]).collect();
        let fit = fit_lags(&refs, &y, 2).unwrap();
        assert!(fit.ridge);
        for (h, t) in hist.iter().zip(&y) {
            assert!((fit.predict(h) - t).abs() < 1e-4);
        }
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let hist: Vec<Vec<f64>> = (0..300).map(|i| series(10, 1000 + i)).collect();
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        let noise = series(300, 7);
        let y: Vec<f64> = refs.iter().zip(&noise).map(|(h, e)| 0.2 * h[9] + 0.1 * h[7] + e).collect();
        let p = 10;
        let fit = fit_lags(&refs, &y, p).unwrap();
        let resid: Vec<f64> = refs.iter().zip(&y).map(|(h, t)| t - fit.predict(h)).collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-8);
        for j in 1..=p {
            let dot: f64 = refs.iter().zip(&resid).map(|(h, r)| h[h.len() - j] * r).sum();
            assert!(dot.abs() < 1e-8, "lag {j}: {dot}");
        }
    }

    #[test]
    fn too_few_observations() {
        let hist = vec![vec![0.0; 4]; 3];
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        assert!(matches!(fit_lags(&refs, &[0.0; 3], 3), Err(BaselineError::TooFewObservations { .. })));
        assert!(matches!(fit_lags(&refs, &[0.0; 3], 5), Err(BaselineError::TooFewObservations { .. })));
        let hist = vec![vec![0.0; 2]; 10];
        let refs: Vec<&[f64]> = hist.iter().map(Vec::as_slice).collect();
        assert!(matches!(fit_lags(&refs, &[0.0; 10], 3), Err(BaselineError::OrderTooLarge { .. })));
    }
}
