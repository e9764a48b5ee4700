//! Point-forecast metrics normalized by the persistence model, quantile
//! coverage, and two-sample tests (Kolmogorov-Smirnov, Wilcoxon signed-rank).

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::labeling::Side;
use crate::model::QuantileFan;

/// Minimum sample size for the asymptotic test p-values.
pub const MIN_TEST_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, have {available}")]
    TooFewSamples { needed: usize, available: usize },
    #[error("every paired difference is zero")]
    AllDifferencesZero,
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Median by selection; the mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut v = values.to_vec();
    let n = v.len();
    let (_, &mut hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        return Ok(hi);
    }
    let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub mse: f64,
    pub meae: f64,
    /// `None` when the targets have zero variance.
    pub r2: Option<f64>,
}

pub fn point_metrics(predictions: &[f64], targets: &[f64]) -> Result<PointMetrics, EvalError> {
    check_pair(predictions, targets)?;
    let n = targets.len() as f64;
    let abs: Vec<f64> = predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).collect();
    let mae = abs.iter().sum::<f64>() / n;
    let ss_res: f64 = abs.iter().map(|e| e * e).sum();
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    Ok(PointMetrics {
        mae,
        mse: ss_res / n,
        meae: median(&abs)?,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Error metrics divided by the persistence model's. A zero denominator
/// gives `None` and sets the flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalizedMetrics {
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub meae: Option<f64>,
    pub r2: Option<f64>,
    pub division_by_zero: bool,
}

pub fn normalize_metrics(model: &PointMetrics, repetitive: &PointMetrics) -> NormalizedMetrics {
    let ratio = |a: f64, b: f64| (b != 0.0).then(|| a / b);
    let (mae, mse, meae) =
        (ratio(model.mae, repetitive.mae), ratio(model.mse, repetitive.mse), ratio(model.meae, repetitive.meae));
    NormalizedMetrics { mae, mse, meae, r2: model.r2, division_by_zero: mae.is_none() || mse.is_none() || meae.is_none() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalCoverage {
    pub lower_tau: f64,
    pub upper_tau: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SideCoverage {
    /// Fraction of targets at or below each quantile estimate.
    pub per_tau: Vec<f64>,
    /// Symmetric pairs `(tau_i, tau_{S-1-i})`.
    pub intervals: Vec<IntervalCoverage>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub quantiles: Vec<f64>,
    pub long: SideCoverage,
    pub short: SideCoverage,
}

impl CalibrationReport {
    pub fn side(&self, side: Side) -> &SideCoverage {
        match side {
            Side::Long => &self.long,
            Side::Short => &self.short,
        }
    }
}

fn side_coverage(quantiles: &[f64], rows: &[Vec<f64>], targets: &[f64]) -> Result<SideCoverage, EvalError> {
    if rows.len() != targets.len() {
        return Err(EvalError::LengthMismatch(rows.len(), targets.len()));
    }
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = rows.len() as f64;
    let s = quantiles.len();
    let per_tau = (0..s).map(|q| rows.iter().zip(targets).filter(|(r, &y)| y <= r[q]).count() as f64 / n).collect();
    let intervals = (0..s / 2)
        .map(|i| {
            let j = s - 1 - i;
            let inside = rows.iter().zip(targets).filter(|(r, &y)| r[i] <= y && y <= r[j]).count();
            IntervalCoverage { lower_tau: quantiles[i], upper_tau: quantiles[j], coverage: inside as f64 / n }
        })
        .collect();
    Ok(SideCoverage { per_tau, intervals })
}

pub fn coverage(fan: &QuantileFan, targets: [&[f64]; 2]) -> Result<CalibrationReport, EvalError> {
    Ok(CalibrationReport {
        quantiles: fan.quantiles.clone(),
        long: side_coverage(&fan.quantiles, fan.side(Side::Long), targets[0])?,
        short: side_coverage(&fan.quantiles, fan.side(Side::Short), targets[1])?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `max |ECDF_a - ECDF_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value, using
/// the small-sample adjustment `(sqrt(m) + 0.12 + 0.11 / sqrt(m)) D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome, EvalError> {
    let smallest = a.len().min(b.len());
    if smallest < MIN_TEST_SAMPLES {
        return Err(EvalError::TooFewSamples { needed: MIN_TEST_SAMPLES, available: smallest });
    }
    let d = ks_statistic(a, b)?;
    let m = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let root = m.sqrt();
    Ok(TestOutcome { statistic: d, p_value: kolmogorov_sf((root + 0.12 + 0.11 / root) * d), n: a.len() + b.len() })
}

/// Signed-rank sums of the non-zero paired differences `a - b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedRanks {
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_nonzero: usize,
    /// Sizes of groups of tied absolute differences.
    pub tie_groups: Vec<usize>,
}

impl SignedRanks {
    pub fn statistic(&self) -> f64 {
        self.w_plus.min(self.w_minus)
    }
}

pub fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks, EvalError> {
    check_pair(a, b)?;
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return Err(EvalError::AllDifferencesZero);
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut out = SignedRanks { w_plus: 0.0, w_minus: 0.0, n_nonzero: d.len(), tie_groups: Vec::new() };
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let rank = (i + j + 2) as f64 / 2.0;
        for v in &d[i..=j] {
            if *v > 0.0 {
                out.w_plus += rank;
            } else {
                out.w_minus += rank;
            }
        }
        if j > i {
            out.tie_groups.push(j - i + 1);
        }
        i = j + 1;
    }
    Ok(out)
}

/// Wilcoxon signed-rank test on paired samples: zero differences dropped,
/// `W = min(W+, W-)`, two-sided p-value from the tie-corrected normal
/// approximation without continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestOutcome, EvalError> {
    let r = signed_ranks(a, b)?;
    if r.n_nonzero < MIN_TEST_SAMPLES {
        return Err(EvalError::TooFewSamples { needed: MIN_TEST_SAMPLES, available: r.n_nonzero });
    }
    let n = r.n_nonzero as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = r.tie_groups.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    let w = r.statistic();
    let p = if var > 0.0 {
        let z = (w - mean) / var.sqrt();
        (2.0 * Normal::standard().cdf(z)).min(1.0)
    } else {
        1.0
    };
    Ok(TestOutcome { statistic: w, p_value: p, n: r.n_nonzero })
}

/// One (horizon, model, side) cell of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub horizon: usize,
    pub model: String,
    pub side: String,
    pub n: usize,
    pub raw: PointMetrics,
    pub normalized: NormalizedMetrics,
}

impl MetricRow {
    /// Scores `predictions` and normalizes by the persistence forecast on
    /// the same samples.
    pub fn score(
        horizon: usize,
        model: &str,
        side: Side,
        predictions: &[f64],
        repetitive: &[f64],
        targets: &[f64],
    ) -> Result<Self, EvalError> {
        let raw = point_metrics(predictions, targets)?;
        let base = point_metrics(repetitive, targets)?;
        Ok(MetricRow {
            horizon,
            model: model.to_string(),
            side: side.name().to_string(),
            n: targets.len(),
            raw,
            normalized: normalize_metrics(&raw, &base),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub horizon: usize,
    pub model: String,
    pub report: CalibrationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymmetryRow {
    pub horizon: usize,
    /// Long returns against negated short returns.
    pub ks: TestOutcome,
    pub wilcoxon: Option<TestOutcome>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<MetricRow>,
    pub calibration: Vec<CalibrationRow>,
    pub asymmetry: Vec<AsymmetryRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl MetricReport {
    pub fn merge(&mut self, other: MetricReport) {
        self.metrics.extend(other.metrics);
        self.calibration.extend(other.calibration);
        self.asymmetry.extend(other.asymmetry);
    }

    /// `{"k<h>": {"metrics": {model: {side: ...}}, "calibration": ..., "asymmetry": ...}}`
    /// with sorted keys.
    pub fn to_json(&self) -> Result<String, EvalError> {
        type Tree = BTreeMap<String, serde_json::Value>;
        let mut by_k: BTreeMap<usize, Tree> = BTreeMap::new();
        for r in &self.metrics {
            let cell = serde_json::json!({
                "n": r.n,
                "mae": r.raw.mae,
                "mse": r.raw.mse,
                "meae": r.raw.meae,
                "r2": r.raw.r2,
                "normalized_mae": r.normalized.mae,
                "normalized_mse": r.normalized.mse,
                "normalized_meae": r.normalized.meae,
                "division_by_zero": r.normalized.division_by_zero,
            });
            let models = by_k.entry(r.horizon).or_default().entry("metrics".into()).or_insert_with(|| serde_json::json!({}));
            let sides = models.as_object_mut().expect("object").entry(r.model.clone()).or_insert_with(|| serde_json::json!({}));
            sides.as_object_mut().expect("object").insert(r.side.clone(), cell);
        }
        for c in &self.calibration {
            let cal = by_k.entry(c.horizon).or_default().entry("calibration".into()).or_insert_with(|| serde_json::json!({}));
            cal.as_object_mut().expect("object").insert(c.model.clone(), serde_json::to_value(&c.report)?);
        }
        for a in &self.asymmetry {
            by_k.entry(a.horizon).or_default().insert("asymmetry".into(), serde_json::to_value(a)?);
        }
        let mut doc: BTreeMap<String, serde_json::Value> =
            by_k.into_iter().map(|(k, v)| (format!("k{k}"), serde_json::to_value(v).expect("map of values"))).collect();
        if let Some(trend) = self.trend() {
            doc.insert("trend".into(), trend);
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    /// Normalized MAE across horizons per model and side, flagging whether
    /// it never improves as the horizon grows. `None` with fewer than two
    /// horizons.
    pub fn trend(&self) -> Option<serde_json::Value> {
        let mut cells: BTreeMap<(&str, &str), Vec<(usize, Option<f64>)>> = BTreeMap::new();
        for r in &self.metrics {
            cells.entry((&r.model, &r.side)).or_default().push((r.horizon, r.normalized.mae));
        }
        if cells.values().all(|v| v.len() < 2) {
            return None;
        }
        let mut out = serde_json::Map::new();
        for ((model, side), mut v) in cells {
            v.sort_by_key(|c| c.0);
            let monotone = v.windows(2).all(|w| matches!((w[0].1, w[1].1), (Some(a), Some(b)) if b >= a));
            let entry = out.entry(model.to_string()).or_insert_with(|| serde_json::json!({}));
            entry.as_object_mut().expect("object").insert(
                side.to_string(),
                serde_json::json!({
                    "horizons": v.iter().map(|c| c.0).collect::<Vec<_>>(),
                    "normalized_mae": v.iter().map(|c| c.1).collect::<Vec<_>>(),
                    "monotone_degradation": monotone,
                }),
            );
        }
        Some(serde_json::Value::Object(out))
    }

    /// Flat mirror of the metric cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "horizon",
            "model",
            "side",
            "n",
            "mae",
            "mse",
            "meae",
            "r2",
            "normalized_mae",
            "normalized_mse",
            "normalized_meae",
            "division_by_zero",
        ])?;
        for r in &self.metrics {
            out.write_record([
                r.horizon.to_string(),
                r.model.clone(),
                r.side.clone(),
                r.n.to_string(),
                r.raw.mae.to_string(),
                r.raw.mse.to_string(),
                r.raw.meae.to_string(),
                opt(r.raw.r2),
                opt(r.normalized.mae),
                opt(r.normalized.mse),
                opt(r.normalized.meae),
                r.normalized.division_by_zero.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `ts,target,q<τ>...` rows for one side, for external plotting.
pub fn write_plot_csv<W: Write>(w: W, fan: &QuantileFan, side: Side, targets: &[f64]) -> Result<(), EvalError> {
    if targets.len() != fan.len() {
        return Err(EvalError::LengthMismatch(fan.len(), targets.len()));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["ts".to_string(), "target".to_string()];
    header.extend(fan.quantiles.iter().map(|t| format!("q{}", (t * 100.0).round() as i64)));
    out.write_record(&header)?;
    for ((ts, y), row) in fan.end_ts_ns.iter().zip(targets).zip(fan.side(side)) {
        let mut rec = vec![ts.to_string(), y.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        let m = point_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, PointMetrics { mae: 0.0, mse: 0.0, meae: 0.0, r2: Some(1.0) });
        let m = point_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.r2, Some(0.0));
        let m = point_metrics(&[1.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(m, PointMetrics { mae: 0.5, mse: 0.5, meae: 0.5, r2: None });
        assert!(matches!(point_metrics(&[], &[]), Err(EvalError::EmptyInput)));
        assert!(matches!(point_metrics(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn median_by_selection() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert_eq!(median(&[5.0]).unwrap(), 5.0);
    }

    #[test]
    fn normalization() {
        let rep = PointMetrics { mae: 1.0, mse: 2.0, meae: 0.5, r2: Some(-0.3) };
        let same = normalize_metrics(&rep, &rep);
        assert_eq!((same.mae, same.mse, same.meae), (Some(1.0), Some(1.0), Some(1.0)));
        let m = PointMetrics { mae: 0.7, mse: 1.0, meae: 0.25, r2: Some(0.1) };
        let n = normalize_metrics(&m, &rep);
        assert_eq!((n.mae, n.r2, n.division_by_zero), (Some(0.7), Some(0.1), false));
        let zero = PointMetrics { mae: 0.0, mse: 0.0, meae: 0.0, r2: None };
        let f = normalize_metrics(&m, &zero);
        assert!(f.division_by_zero && f.mae.is_none());
    }

    fn fan_of(rows: Vec<Vec<f64>>) -> QuantileFan {
        QuantileFan {
            quantiles: vec![0.25, 0.5, 0.75],
            end_ts_ns: (0..rows.len() as i64).collect(),
            values: [rows.clone(), rows],
        }
    }

    #[test]
    fn coverage_at_infinity_surrogate() {
        let f = fan_of(vec![vec![1e300; 3]; 5]);
        let ys = [-1.0, 0.0, 1.0, 2.0, 3.0];
        let c = coverage(&f, [&ys, &ys]).unwrap();
        assert_eq!(c.long.per_tau, vec![1.0; 3]);
    }

    #[test]
    fn coverage_on_uniform_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = fan_of(vec![vec![0.25, 0.5, 0.75]; n]);
        let c = coverage(&f, [&ys, &ys]).unwrap();
        for (got, want) in c.long.per_tau.iter().zip([0.25, 0.5, 0.75]) {
            // 4 binomial standard deviations
            assert!((got - want).abs() < 4.0 * (want * (1.0 - want) / n as f64).sqrt(), "{got}");
        }
        assert!(c.long.per_tau.windows(2).all(|w| w[0] <= w[1]));
        assert!((c.long.intervals[0].coverage - 0.5).abs() < 0.015);
    }

    #[test]
    fn ks_hand_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ks_statistic(&[1.0, 2.0, 2.0, 5.0], &[2.0, 1.0, 5.0, 2.0]).unwrap(), 0.0);
        // ECDFs at 1,2,3,4: a = .25,.75,.75,1; b = 0,.25,.5,1
        assert_eq!(ks_statistic(&[1.0, 2.0, 2.0, 4.0], &[2.0, 3.0, 4.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(ks_two_sample(&[1.0; 4], &[1.0; 4]), Err(EvalError::TooFewSamples { .. })));
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1) = 2 (e^-2 - e^-8 + e^-18 - ...)
        let q1 = 2.0 * ((-2.0f64).exp() - (-8.0f64).exp() + (-18.0f64).exp() - (-32.0f64).exp());
        assert!((kolmogorov_sf(1.0) - q1).abs() < 1e-15);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn wilcoxon_hand_example() {
        // d = 0.5, -0.5, 2, 4 -> |d| ranks 1.5, 1.5, 3, 4
        let r = signed_ranks(&[1.0, 2.0, 3.0, 4.0], &[0.5, 2.5, 1.0, 0.0]).unwrap();
        assert_eq!((r.w_plus, r.w_minus, r.statistic()), (8.5, 1.5, 1.5));
        assert_eq!(r.tie_groups, vec![2]);
        // a zero difference is dropped before ranking
        let r = signed_ranks(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 2.0, 7.0]).unwrap();
        assert_eq!((r.w_plus, r.w_minus, r.n_nonzero), (1.0, 5.0, 3));
        assert!(matches!(signed_ranks(&[1.0, 2.0], &[1.0, 2.0]), Err(EvalError::AllDifferencesZero)));
    }

    #[test]
    fn wilcoxon_normal_approximation() {
        // n = 10 distinct positive differences: W = 0, mean 27.5, var 96.25
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = vec![0.0; 10];
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        let z: f64 = -27.5 / 96.25f64.sqrt();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 2.0 * Normal::standard().cdf(z)).abs() < 1e-15);
        assert!(t.p_value < 0.01);
    }

    #[test]
    fn null_rejection_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (mut ks, mut wx) = (0, 0);
        let trials = 400;
        for _ in 0..trials {
            let a: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            ks += (ks_two_sample(&a, &b).unwrap().p_value < 0.05) as usize;
            wx += (wilcoxon_signed_rank(&a, &b).unwrap().p_value < 0.05) as usize;
        }
        for rate in [ks as f64 / trials as f64, wx as f64 / trials as f64] {
            assert!((0.02..=0.08).contains(&rate), "{rate}");
        }
    }

    #[test]
    fn report_serialization() {
        let mut rep = MetricReport::default();
        for model in ["repetitive", "ar"] {
            for side in Side::BOTH {
                rep.metrics.push(MetricRow::score(100, model, side, &[1.0, 2.0], &[1.0, 1.0], &[1.0, 3.0]).unwrap());
            }
        }
        let json = rep.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["k100"]["metrics"]["ar"]["short"]["mae"], 0.5);
        assert_eq!(v["k100"]["metrics"]["ar"]["long"]["normalized_mae"], 0.5);
        assert_eq!(rep.to_json().unwrap(), json);
        assert!(v.get("trend").is_none());
        let mut later = rep.metrics.clone();
        for (r, mae) in later.iter_mut().zip([1.0, 1.0, 0.4, 0.7]) {
            r.horizon = 200;
            r.normalized.mae = Some(mae);
        }
        let mut both = rep.clone();
        both.metrics.extend(later);
        let v: serde_json::Value = serde_json::from_str(&both.to_json().unwrap()).unwrap();
        assert_eq!(v["trend"]["ar"]["long"]["normalized_mae"], serde_json::json!([0.5, 0.4]));
        assert_eq!(v["trend"]["ar"]["long"]["monotone_degradation"], false);
        assert_eq!(v["trend"]["ar"]["short"]["monotone_degradation"], true);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("100,repetitive,long,2,"));
    }

    #[test]
    fn plot_rows() {
        let f = fan_of(vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.5, 2.0]]);
        let mut buf = Vec::new();
        write_plot_csv(&mut buf, &f, Side::Short, &[0.25, 3.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "ts,target,q25,q50,q75\n0,0.25,-1,0,1\n1,3,-2,0.5,2\n");
    }

    proptest! {
        #[test]
        fn metric_invariants(
            data in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50),
            shift in 0usize..50,
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = data.iter().copied().unzip();
            let m = point_metrics(&p, &y).unwrap();
            prop_assert!(m.mse >= m.mae * m.mae * (1.0 - 1e-12));
            if let Some(r2) = m.r2 { prop_assert!(r2 <= 1.0); }
            let k = shift % p.len();
            let mut p2 = p.clone(); p2.rotate_left(k);
            let mut y2 = y.clone(); y2.rotate_left(k);
            let m2 = point_metrics(&p2, &y2).unwrap();
            prop_assert!((m.mae - m2.mae).abs() <= 1e-12 * (1.0 + m.mae));
            prop_assert_eq!(m.meae, m2.meae);
        }

        #[test]
        fn ks_bounds(
            a in prop::collection::vec(-5i32..5, 1..30),
            b in prop::collection::vec(-5i32..5, 1..30),
        ) {
            let af: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let bf: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            let d = ks_statistic(&af, &bf).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let mut sa = af.clone(); sa.sort_by(f64::total_cmp);
            let mut sb = bf.clone(); sb.sort_by(f64::total_cmp);
            prop_assert_eq!(d == 0.0, sa == sb || {
                // equal ECDFs also arise from proportional multisets
                let grid: Vec<f64> = sa.iter().chain(&sb).copied().collect();
                grid.iter().all(|&x| {
                    let fa = sa.iter().filter(|&&v| v <= x).count() as f64 / sa.len() as f64;
                    let fb = sb.iter().filter(|&&v| v <= x).count() as f64 / sb.len() as f64;
                    fa == fb
                })
            });
        }
    }
}
