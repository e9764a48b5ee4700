//! Spread-aware long/short returns and their mid/spread decomposition.
//!
//! For a horizon of `k` events, with `m` the mid-price and `s` the spread:
//!
//! ```text
//! raw      r_i  = (z_i * (m(t+k) - m(t)) - (s(t) + s(t+k)) / 2) / m(t)
//! adjusted r'_i = r_i + s(t) / m(t)
//!               = z_i * r_mid - r_spread / 2
//! r_mid    = (m(t+k) - m(t)) / m(t)
//! r_spread = (s(t+k) - s(t)) / m(t)
//! ```
//!
//! with `z = +1` for long and `-1` for short. The return functions are
//! generic over [`ReturnScalar`], so the same code runs in `f64` and in exact
//! rational arithmetic.

use std::fmt::Debug;
use std::io::Write;
use std::ops::Neg;

use num_rational::Ratio;
use num_traits::Num;

use crate::ingest::FeatureWindow;
use crate::lob::BookSnapshot;

/// Number type returns are computed in. Tick quantities enter through
/// [`ReturnScalar::from_ticks`] as exact ratios of integers.
pub trait ReturnScalar: Num + Neg<Output = Self> + Clone + PartialEq + Debug {
    fn from_ticks(numer: i64, denom: i64) -> Self;
}

impl ReturnScalar for f64 {
    fn from_ticks(numer: i64, denom: i64) -> Self {
        numer as f64 / denom as f64
    }
}

impl ReturnScalar for Ratio<i64> {
    fn from_ticks(numer: i64, denom: i64) -> Self {
        Ratio::new(numer, denom)
    }
}

/// Exact rational returns.
pub type ExactReturn = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Long, Side::Short];

    pub fn z<R: ReturnScalar>(self) -> R {
        match self {
            Side::Long => R::one(),
            Side::Short => -R::one(),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Long => 0,
            Side::Short => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// Prices in tick units; the tick size cancels in every return.
fn mid<R: ReturnScalar>(s: &BookSnapshot) -> R {
    R::from_ticks(s.mid_half_ticks(), 2)
}

fn spr<R: ReturnScalar>(s: &BookSnapshot) -> R {
    R::from_ticks(s.spread_ticks(), 1)
}

fn mid_change<R: ReturnScalar>(now: &BookSnapshot, later: &BookSnapshot) -> R {
    R::from_ticks(later.mid_half_ticks() - now.mid_half_ticks(), 2)
}

/// Return of entering at `now` and exiting at `later`, crossing half the
/// spread on each end.
pub fn raw_return<R: ReturnScalar>(side: Side, now: &BookSnapshot, later: &BookSnapshot) -> R {
    let cost = (spr::<R>(now) + spr(later)) / R::from_ticks(2, 1);
    (side.z::<R>() * mid_change(now, later) - cost) / mid(now)
}

/// Raw return with the already observed current spread added back.
pub fn adjusted_return<R: ReturnScalar>(side: Side, now: &BookSnapshot, later: &BookSnapshot) -> R {
    let cost = (spr::<R>(now) + spr(later)) / R::from_ticks(2, 1);
    let change = side.z::<R>() * mid_change(now, later) - cost;
    (change + spr(now)) / mid(now)
}

/// `(r_mid, r_spread)`.
pub fn decompose<R: ReturnScalar>(now: &BookSnapshot, later: &BookSnapshot) -> (R, R) {
    let p = mid::<R>(now);
    let r_mid = mid_change::<R>(now, later) / p.clone();
    let r_spread = (spr::<R>(later) - spr(now)) / p;
    (r_mid, r_spread)
}

/// Adjusted return assembled from the decomposition.
pub fn adjusted_from_parts<R: ReturnScalar>(side: Side, r_mid: R, r_spread: R) -> R {
    side.z::<R>() * r_mid - r_spread / R::from_ticks(2, 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnPair {
    pub r_long_adj: f64,
    pub r_short_adj: f64,
    pub r_mid: f64,
    pub r_spread: f64,
    pub horizon: usize,
}

impl ReturnPair {
    pub fn compute(now: &BookSnapshot, later: &BookSnapshot, horizon: usize) -> Self {
        let (r_mid, r_spread) = decompose::<f64>(now, later);
        ReturnPair {
            r_long_adj: adjusted_return(Side::Long, now, later),
            r_short_adj: adjusted_return(Side::Short, now, later),
            r_mid,
            r_spread,
            horizon,
        }
    }

    pub fn side(&self, side: Side) -> f64 {
        match side {
            Side::Long => self.r_long_adj,
            Side::Short => self.r_short_adj,
        }
    }
}

/// Adjusted returns for every start index `s` with `s + k` inside the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSeries {
    pub horizon: usize,
    pub long: Vec<f64>,
    pub short: Vec<f64>,
    pub mid: Vec<f64>,
    pub spread: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(snapshots: &[BookSnapshot], horizon: usize) -> Self {
        assert!(horizon > 0, "horizon must be positive");
        let n = snapshots.len().saturating_sub(horizon);
        let mut out = ReturnSeries {
            horizon,
            long: Vec::with_capacity(n),
            short: Vec::with_capacity(n),
            mid: Vec::with_capacity(n),
            spread: Vec::with_capacity(n),
        };
        for s in 0..n {
            let p = ReturnPair::compute(&snapshots[s], &snapshots[s + horizon], horizon);
            out.long.push(p.r_long_adj);
            out.short.push(p.r_short_adj);
            out.mid.push(p.r_mid);
            out.spread.push(p.r_spread);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.long.len()
    }

    pub fn is_empty(&self) -> bool {
        self.long.is_empty()
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Long => &self.long,
            Side::Short => &self.short,
        }
    }

    pub fn pair(&self, start: usize) -> ReturnPair {
        ReturnPair {
            r_long_adj: self.long[start],
            r_short_adj: self.short[start],
            r_mid: self.mid[start],
            r_spread: self.spread[start],
            horizon: self.horizon,
        }
    }
}

/// One model input/target pair ending at `window.end_index`.
#[derive(Clone, Copy, Debug)]
pub struct LabeledSample<'a> {
    pub window: FeatureWindow<'a>,
    pub end_ts_ns: i64,
    /// Adjusted long returns starting at `end - k - T + 1 ..= end - k`, each
    /// fully realized by the window's end.
    pub aux_long: &'a [f64],
    pub aux_short: &'a [f64],
    pub target: ReturnPair,
}

impl<'a> LabeledSample<'a> {
    pub fn end_index(&self) -> usize {
        self.window.end_index
    }

    pub fn aux(&self, side: Side) -> &'a [f64] {
        match side {
            Side::Long => self.aux_long,
            Side::Short => self.aux_short,
        }
    }

    /// Most recent fully observed adjusted return for `side`.
    pub fn last_observed(&self, side: Side) -> f64 {
        *self.aux(side).last().expect("aux history is non-empty")
    }
}

#[derive(Clone, Debug)]
pub struct Labeled<'a> {
    pub samples: Vec<LabeledSample<'a>>,
    /// Windows dropped for lacking a complete auxiliary history or horizon.
    pub skipped: usize,
}

/// Pairs every window with its target over `[t, t+k]` and auxiliary
/// histories ending at `t-k`. Windows without a full history or future are
/// skipped and counted.
pub fn label_stream<'a>(
    snapshots: &[BookSnapshot],
    series: &'a ReturnSeries,
    windows: &[FeatureWindow<'a>],
) -> Labeled<'a> {
    let k = series.horizon;
    let mut samples = Vec::with_capacity(windows.len());
    let mut skipped = 0;
    for w in windows {
        let t = w.end_index;
        let len = w.rows();
        let has_future = t + k < snapshots.len();
        let has_history = t + 1 >= k + len;
        if !(has_future && has_history) || len == 0 {
            skipped += 1;
            continue;
        }
        let first = t + 1 - k - len;
        samples.push(LabeledSample {
            window: *w,
            end_ts_ns: snapshots[t].timestamp_ns(),
            aux_long: &series.long[first..=t - k],
            aux_short: &series.short[first..=t - k],
            target: series.pair(t),
        });
    }
    Labeled { samples, skipped }
}

/// Writes `end_ts_ns,k,r_long_adj,r_short_adj,r_mid,r_spread` with 17
/// significant digits.
pub fn write_labels<W: Write>(mut w: W, samples: &[LabeledSample<'_>]) -> std::io::Result<()> {
    writeln!(w, "end_ts_ns,k,r_long_adj,r_short_adj,r_mid,r_spread")?;
    for s in samples {
        let t = &s.target;
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.end_ts_ns, t.horizon, t.r_long_adj, t.r_short_adj, t.r_mid, t.r_spread
        )?;
    }
    w.flush()
}
