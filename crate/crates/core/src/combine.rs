//! Point forecasts from quantile estimates: fixed weights on the probability
//! simplex, or weights fit by simplex-constrained least squares.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::labeling::Side;
use crate::model::QuantileFan;

/// Slack allowed on the simplex constraints.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CombineError {
    #[error("{side} weights off the simplex: {detail}")]
    WeightsOffSimplex { side: &'static str, detail: String },
    #[error("empty fitting segment")]
    EmptySegment,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationWeights {
    pub quantiles: Vec<f64>,
    /// `weights[side][q]`.
    pub weights: [Vec<f64>; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    /// Fit once on the validation split.
    Static,
    /// Refit at every prediction on the trailing `window` realized observations.
    Rolling { window: usize },
}

fn check_simplex(side: Side, w: &[f64]) -> Result<(), CombineError> {
    let off = |detail: String| CombineError::WeightsOffSimplex { side: side.name(), detail };
    if let Some(bad) = w.iter().find(|&&x| !(x >= -SIMPLEX_TOLERANCE) || !x.is_finite()) {
        return Err(off(format!("negative or non-finite weight {bad}")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(off(format!("weights sum to {sum}")));
    }
    Ok(())
}

impl CombinationWeights {
    pub fn uniform(quantiles: &[f64]) -> Self {
        let w = vec![1.0 / quantiles.len() as f64; quantiles.len()];
        CombinationWeights { quantiles: quantiles.to_vec(), weights: [w.clone(), w] }
    }

    /// All weight on the quantile closest to `tau`.
    pub fn one_hot(quantiles: &[f64], tau: f64) -> Self {
        let pick = (0..quantiles.len())
            .min_by(|&a, &b| (quantiles[a] - tau).abs().total_cmp(&(quantiles[b] - tau).abs()))
            .unwrap_or(0);
        let w: Vec<f64> = (0..quantiles.len()).map(|i| if i == pick { 1.0 } else { 0.0 }).collect();
        CombinationWeights { quantiles: quantiles.to_vec(), weights: [w.clone(), w] }
    }

    pub fn side(&self, side: Side) -> &[f64] {
        &self.weights[side.index()]
    }

    pub fn validate(&self) -> Result<(), CombineError> {
        for side in Side::BOTH {
            let w = self.side(side);
            if w.len() != self.quantiles.len() {
                return Err(CombineError::ShapeMismatch(format!(
                    "{} weights for {} quantiles",
                    w.len(),
                    self.quantiles.len()
                )));
            }
            check_simplex(side, w)?;
        }
        Ok(())
    }

    /// `side,tau,weight` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CombineError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["side", "tau", "weight"])?;
        for side in Side::BOTH {
            for (tau, weight) in self.quantiles.iter().zip(self.side(side)) {
                out.write_record([side.name().to_string(), tau.to_string(), weight.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, CombineError> {
        let mut rows: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
        for rec in csv::Reader::from_reader(r).records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| CombineError::Malformed(format!("short row {rec:?}")));
            let side = Side::BOTH
                .into_iter()
                .find(|s| s.name() == field(0).unwrap_or(""))
                .ok_or_else(|| CombineError::Malformed(format!("unknown side in {rec:?}")))?;
            let num = |i: usize| -> Result<f64, CombineError> {
                field(i)?.parse().map_err(|_| CombineError::Malformed(format!("bad number in {rec:?}")))
            };
            rows[side.index()].push((num(1)?, num(2)?));
        }
        let quantiles: Vec<f64> = rows[0].iter().map(|r| r.0).collect();
        if rows[1].iter().map(|r| r.0).ne(quantiles.iter().copied()) {
            return Err(CombineError::Malformed("sides list different quantiles".into()));
        }
        let weights = rows.map(|r| r.into_iter().map(|x| x.1).collect());
        let out = CombinationWeights { quantiles, weights };
        out.validate()?;
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_q w[q] * row[q]`.
pub fn combine_row(row: &[f64], w: &[f64]) -> f64 {
    dot(row, w)
}

/// Applies fixed weights to every row of a (rearranged) fan.
pub fn combine_fixed(fan: &QuantileFan, weights: &CombinationWeights) -> Result<[Vec<f64>; 2], CombineError> {
    weights.validate()?;
    if weights.quantiles.len() != fan.quantiles.len() {
        return Err(CombineError::ShapeMismatch(format!(
            "{} weights for a fan of {} quantiles",
            weights.quantiles.len(),
            fan.quantiles.len()
        )));
    }
    Ok(Side::BOTH.map(|side| fan.side(side).iter().map(|row| combine_row(row, weights.side(side))).collect()))
}

/// Mean squared error of `rows · w` against `targets`.
pub fn combination_mse(rows: &[Vec<f64>], targets: &[f64], w: &[f64]) -> f64 {
    rows.iter().zip(targets).map(|(r, y)| (dot(r, w) - y).powi(2)).sum::<f64>() / rows.len() as f64
}

/// Second-moment summary of a fitting segment: the objective is
/// `w'Gw - 2b'w + c`.
struct Moments {
    g: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl Moments {
    fn new(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self, CombineError> {
        let n = rows.len();
        if n == 0 {
            return Err(CombineError::EmptySegment);
        }
        if targets.len() != n {
            return Err(CombineError::ShapeMismatch(format!("{n} rows but {} targets", targets.len())));
        }
        let s = rows[0].len();
        if s == 0 || rows.iter().any(|r| r.len() != s) {
            return Err(CombineError::ShapeMismatch("ragged or empty estimate rows".into()));
        }
        let mut g = DMatrix::zeros(s, s);
        let mut b = DVector::zeros(s);
        let mut c = 0.0;
        for (r, &y) in rows.iter().zip(targets) {
            for i in 0..s {
                b[i] += r[i] * y;
                for j in i..s {
                    g[(i, j)] += r[i] * r[j];
                }
            }
            c += y * y;
        }
        let inv = 1.0 / n as f64;
        for i in 0..s {
            for j in i..s {
                g[(i, j)] *= inv;
                g[(j, i)] = g[(i, j)];
            }
        }
        Ok(Moments { g, b: b * inv, c: c * inv })
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.g * w)[0] - 2.0 * self.b.dot(w) + self.c
    }

    /// Least squares restricted to `support` with the weights summing to one;
    /// minimum-norm solution of the KKT system when it is singular.
    fn solve_on(&self, support: &[usize]) -> Option<DVector<f64>> {
        let m = support.len();
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = self.g[(i, j)];
            }
            kkt[(a, m)] = 1.0;
            kkt[(m, a)] = 1.0;
            rhs[a] = self.b[i];
        }
        rhs[m] = 1.0;
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12 * (1.0 + self.g.amax())).ok()?;
        let mut w = DVector::zeros(self.b.len());
        for (a, &i) in support.iter().enumerate() {
            w[i] = sol[a];
        }
        Some(w)
    }
}

fn entropy(w: &DVector<f64>) -> f64 {
    -w.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Minimizes the mean squared error of the combined forecast over the
/// simplex by enumerating every support set; near-ties go to the most
/// uniform candidate.
pub fn fit_weights(rows: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>, CombineError> {
    let m = Moments::new(rows, targets)?;
    let s = m.b.len();
    if s > 16 {
        return Err(CombineError::ShapeMismatch(format!("{s} quantiles is too many to enumerate")));
    }
    let scale = m.c.abs() + m.g.amax();
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << s) {
        let support: Vec<usize> = (0..s).filter(|i| mask & (1 << i) != 0).collect();
        let Some(mut w) = m.solve_on(&support) else { continue };
        if w.iter().any(|&x| !x.is_finite() || x < -1e-12 * (1.0 + w.amax())) {
            continue;
        }
        w.iter_mut().for_each(|x| *x = x.max(0.0));
        let total = w.sum();
        if total <= 0.0 {
            continue;
        }
        w /= total;
        let obj = m.objective(&w);
        let h = entropy(&w);
        let tie = 1e-12 * (1.0 + scale);
        let better = match &best {
            None => true,
            Some((bo, bh, _)) => obj < bo - tie || ((obj - bo).abs() <= tie && h > *bh),
        };
        if better {
            best = Some((obj, h, w));
        }
    }
    // every vertex is a feasible candidate, so this only fails on non-finite input
    let (_, _, w) = best.ok_or_else(|| CombineError::ShapeMismatch("no finite candidate weights".into()))?;
    Ok(w.iter().copied().collect())
}

/// Per-side weights fit on a (rearranged) fan against realized returns.
pub fn fit_combination(fan: &QuantileFan, targets: [&[f64]; 2]) -> Result<CombinationWeights, CombineError> {
    let weights = [0, 1].map(|s| fit_weights(&fan.values[s], targets[s]));
    let [long, short] = weights;
    let out = CombinationWeights { quantiles: fan.quantiles.clone(), weights: [long?, short?] };
    out.validate()?;
    Ok(out)
}

/// Refits on the trailing `window` history rows whose labels are realized
/// before each query, i.e. `history_pos + lag <= query_pos`. Positions must
/// be sorted. Returns the weights used for every query row.
pub fn rolling_weights(
    history: &[Vec<f64>],
    history_targets: &[f64],
    history_pos: &[usize],
    query_pos: &[usize],
    window: usize,
    lag: usize,
) -> Result<Vec<Vec<f64>>, CombineError> {
    if history.len() != history_targets.len() || history.len() != history_pos.len() {
        return Err(CombineError::ShapeMismatch("history rows, targets and positions differ in length".into()));
    }
    if window == 0 {
        return Err(CombineError::EmptySegment);
    }
    query_pos
        .iter()
        .map(|&p| {
            let end = history_pos.partition_point(|&h| h + lag <= p);
            let start = end.saturating_sub(window);
            fit_weights(&history[start..end], &history_targets[start..end])
        })
        .collect()
}

/// Combined test predictions under either mode. The rolling history is the
/// validation split followed by the test split itself.
#[allow(clippy::too_many_arguments)]
pub fn combine_with_mode(
    mode: CombineMode,
    validation: &QuantileFan,
    validation_targets: [&[f64]; 2],
    validation_pos: &[usize],
    test: &QuantileFan,
    test_targets: [&[f64]; 2],
    test_pos: &[usize],
    lag: usize,
) -> Result<(CombinationWeights, [Vec<f64>; 2]), CombineError> {
    let static_weights = fit_combination(validation, validation_targets)?;
    match mode {
        CombineMode::Static => {
            let preds = combine_fixed(test, &static_weights)?;
            Ok((static_weights, preds))
        }
        CombineMode::Rolling { window } => {
            let mut preds: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let pos: Vec<usize> = validation_pos.iter().chain(test_pos).copied().collect();
            for s in 0..2 {
                let rows: Vec<Vec<f64>> = validation.values[s].iter().chain(&test.values[s]).cloned().collect();
                let ys: Vec<f64> = validation_targets[s].iter().chain(test_targets[s]).copied().collect();
                let ws = rolling_weights(&rows, &ys, &pos, test_pos, window, lag)?;
                preds[s] = test.values[s].iter().zip(&ws).map(|(r, w)| combine_row(r, w)).collect();
            }
            Ok((static_weights, preds))
        }
    }
}
