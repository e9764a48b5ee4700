//! Snapshot stream I/O, causal rolling normalization, windowing and
//! chronological splitting.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::lob::{validate_snapshot, BookError, BookSnapshot, RawSnapshot, TimestampGuard, FEATURES, LEVELS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected the {FEATURES}+1 column LOB schema")]
    BadHeader,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-monotone timestamp at line {line}: {source}")]
    NonMonotoneTimestamp { line: u64, source: BookError },
    #[error("tick size {0} must be positive and finite")]
    InvalidTickSize(f64),
    #[error("normalization window must be at least 2, got {0}")]
    NormalizationWindow(usize),
    #[error("stream too short: need {needed} usable rows, have {available}")]
    StreamTooShort { needed: usize, available: usize },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
}

/// Header of the snapshot CSV schema.
pub fn csv_header() -> Vec<String> {
    let mut cols = vec!["ts_ns".to_string()];
    for side in ["ask", "bid"] {
        for lvl in 1..=LEVELS {
            cols.push(format!("{side}_px_{lvl}"));
            cols.push(format!("{side}_sz_{lvl}"));
        }
    }
    cols
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub error: BookError,
}

/// Parsed stream: accepted snapshots plus every row that failed a book invariant.
#[derive(Clone, Debug, Default)]
pub struct ParsedStream {
    pub snapshots: Vec<BookSnapshot>,
    pub rejects: Vec<Rejection>,
}

impl ParsedStream {
    pub fn reject_count(&self) -> usize {
        self.rejects.len()
    }
}

pub fn parse_stream(path: impl AsRef<Path>, tick_size: f64) -> Result<ParsedStream, IngestError> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file), tick_size)
}

/// Reads the CSV schema. Structural problems (wrong column count, unparsable
/// numbers, timestamps going backwards) abort; book-invariant failures are
/// recorded in [`ParsedStream::rejects`] and skipped.
pub fn read_stream<R: Read>(reader: R, tick_size: f64) -> Result<ParsedStream, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?;
    let expected = csv_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(IngestError::BadHeader);
    }
    let mut out = ParsedStream::default();
    let mut guard = TimestampGuard::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != expected.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("{} columns, expected {}", record.len(), expected.len()),
            });
        }
        let mut vals = [0i64; 1 + FEATURES];
        for (i, field) in record.iter().enumerate() {
            vals[i] = field.trim().parse().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("column {} ({field:?}) is not an integer", expected[i]),
            })?;
        }
        let mut raw = RawSnapshot { timestamp_ns: vals[0], asks: [(0, 0); LEVELS], bids: [(0, 0); LEVELS] };
        for i in 0..LEVELS {
            raw.asks[i] = (vals[1 + 2 * i], vals[2 + 2 * i]);
            raw.bids[i] = (vals[1 + 2 * LEVELS + 2 * i], vals[2 + 2 * LEVELS + 2 * i]);
        }
        guard.check(raw.timestamp_ns).map_err(|source| IngestError::NonMonotoneTimestamp { line, source })?;
        match validate_snapshot(&raw, tick_size) {
            Ok(s) => out.snapshots.push(s),
            Err(BookError::InvalidTickSize(t)) => return Err(IngestError::InvalidTickSize(t)),
            Err(error) => out.rejects.push(Rejection { line, error }),
        }
    }
    Ok(out)
}

pub fn write_stream<W: Write>(writer: W, snapshots: &[BookSnapshot]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    let mut row: Vec<String> = Vec::with_capacity(1 + FEATURES);
    for s in snapshots {
        row.clear();
        row.push(s.timestamp_ns().to_string());
        for l in s.asks().iter() {
            row.push(l.price.to_string());
            row.push(l.size.to_string());
        }
        for l in s.bids().iter() {
            row.push(l.price.to_string());
            row.push(l.size.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stream_file(path: impl AsRef<Path>, snapshots: &[BookSnapshot]) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_stream(std::io::BufWriter::new(file), snapshots)
}

/// Output of [`RollingNormalizer::push`].
#[derive(Clone, Debug, PartialEq)]
pub enum NormalizedRow {
    /// Fewer than `window` rows seen so far; the raw row is passed through.
    Warmup([f64; FEATURES]),
    Ready([f64; FEATURES]),
}

/// Trailing per-column z-score over the previous `window` rows.
///
/// Row `t` is scaled with statistics of rows `t-window..t`, never row `t`
/// itself. Population standard deviation, floored at `epsilon_std`.
#[derive(Clone, Debug)]
pub struct RollingNormalizer {
    window: usize,
    epsilon_std: f64,
    history: VecDeque<[f64; FEATURES]>,
    // sums of (x - shift) keep cancellation small for price columns
    shift: Option<[f64; FEATURES]>,
    sum: [f64; FEATURES],
    sum_sq: [f64; FEATURES],
    pushed: usize,
}

impl RollingNormalizer {
    pub fn new(window: usize, epsilon_std: f64) -> Result<Self, IngestError> {
        if window < 2 {
            return Err(IngestError::NormalizationWindow(window));
        }
        Ok(Self {
            window,
            epsilon_std,
            history: VecDeque::with_capacity(window + 1),
            shift: None,
            sum: [0.0; FEATURES],
            sum_sq: [0.0; FEATURES],
            pushed: 0,
        })
    }

    pub fn push(&mut self, x: [f64; FEATURES]) -> NormalizedRow {
        let shift = *self.shift.get_or_insert(x);
        let out = if self.history.len() < self.window {
            NormalizedRow::Warmup(x)
        } else {
            let n = self.window as f64;
            let mut z = [0.0; FEATURES];
            for c in 0..FEATURES {
                let mean = self.sum[c] / n;
                let var = (self.sum_sq[c] / n - mean * mean).max(0.0);
                let std = var.sqrt().max(self.epsilon_std);
                z[c] = (x[c] - shift[c] - mean) / std;
            }
            NormalizedRow::Ready(z)
        };
        self.history.push_back(x);
        for c in 0..FEATURES {
            let d = x[c] - shift[c];
            self.sum[c] += d;
            self.sum_sq[c] += d * d;
        }
        if self.history.len() > self.window {
            let old = self.history.pop_front().expect("history is non-empty");
            for c in 0..FEATURES {
                let d = old[c] - shift[c];
                self.sum[c] -= d;
                self.sum_sq[c] -= d * d;
            }
        }
        self.pushed += 1;
        if self.pushed % self.window == 0 {
            self.resum();
        }
        out
    }

    /// Recomputes the running sums from the stored history so rounding error
    /// cannot accumulate across a long stream.
    fn resum(&mut self) {
        let shift = self.shift.unwrap_or([0.0; FEATURES]);
        self.sum = [0.0; FEATURES];
        self.sum_sq = [0.0; FEATURES];
        for row in &self.history {
            for c in 0..FEATURES {
                let d = row[c] - shift[c];
                self.sum[c] += d;
                self.sum_sq[c] += d * d;
            }
        }
    }
}

/// Normalized rows of a stream, excluding the warm-up prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedStream {
    /// Stream index of the first normalized row (equals the warm-up length).
    pub offset: usize,
    /// Row-major `rows x 40` values.
    pub values: Vec<f64>,
}

impl NormalizedStream {
    pub fn len(&self) -> usize {
        self.values.len() / FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Normalized features of the row at stream index `index`.
    pub fn row(&self, index: usize) -> &[f64] {
        let i = index - self.offset;
        &self.values[i * FEATURES..(i + 1) * FEATURES]
    }
}

pub fn normalize(
    snapshots: &[BookSnapshot],
    window: usize,
    epsilon_std: f64,
) -> Result<NormalizedStream, IngestError> {
    let rows: Vec<[f64; FEATURES]> = snapshots.iter().map(BookSnapshot::features).collect();
    normalize_rows(&rows, window, epsilon_std)
}

pub fn normalize_rows(
    rows: &[[f64; FEATURES]],
    window: usize,
    epsilon_std: f64,
) -> Result<NormalizedStream, IngestError> {
    let mut norm = RollingNormalizer::new(window, epsilon_std)?;
    let mut values = Vec::with_capacity(rows.len().saturating_sub(window) * FEATURES);
    let mut warmup = 0;
    for r in rows {
        match norm.push(*r) {
            NormalizedRow::Warmup(_) => warmup += 1,
            NormalizedRow::Ready(z) => values.extend_from_slice(&z),
        }
    }
    Ok(NormalizedStream { offset: warmup, values })
}

/// `T x 40` view into a normalized stream, oldest row first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureWindow<'a> {
    pub values: &'a [f64],
    /// Stream index of the newest row.
    pub end_index: usize,
}

impl<'a> FeatureWindow<'a> {
    pub fn rows(&self) -> usize {
        self.values.len() / FEATURES
    }
}

/// All stride-1 windows of `len` rows over the normalized part of a stream.
pub fn make_windows(stream: &NormalizedStream, len: usize) -> Result<Vec<FeatureWindow<'_>>, IngestError> {
    let usable = stream.len();
    if len == 0 || usable < len {
        return Err(IngestError::StreamTooShort { needed: len.max(1), available: usable });
    }
    Ok((0..=usable - len)
        .map(|i| FeatureWindow {
            values: &stream.values[i * FEATURES..(i + len) * FEATURES],
            end_index: stream.offset + i + len - 1,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.5, validation: 0.25, test: 0.25 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let f = [self.train, self.validation, self.test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(IngestError::InvalidSplit(format!("{f:?} has a negative or non-finite entry")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidSplit(format!("{f:?} does not sum to 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous train/validation/test ranges over `n` time-ordered samples.
///
/// Nominal boundaries are at the rounded fractions; the first `gap` indices
/// of validation and test are dropped so that no input window or label
/// horizon spans two splits.
pub fn chronological_split(n: usize, spec: &SplitSpec, gap: usize) -> Result<SplitRanges, IngestError> {
    spec.validate()?;
    let b1 = ((n as f64) * spec.train).round() as usize;
    let b2 = (((n as f64) * (spec.train + spec.validation)).round() as usize).clamp(b1, n);
    let train = 0..b1.min(n);
    let validation = (b1 + gap).min(b2)..b2;
    let test = (b2 + gap).min(n)..n;
    for (name, r) in [("train", &train), ("validation", &validation), ("test", &test)] {
        if r.is_empty() {
            return Err(IngestError::EmptySplit(name));
        }
    }
    Ok(SplitRanges { train, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::tests::ladder;

    fn csv_of(snaps: &[RawSnapshot]) -> String {
        let mut s = csv_header().join(",");
        s.push('\n');
        for r in snaps {
            let mut cols = vec![r.timestamp_ns.to_string()];
            for (p, q) in r.asks.iter() {
                cols.push(p.to_string());
                cols.push(q.to_string());
            }
            for (p, q) in r.bids.iter() {
                cols.push(p.to_string());
                cols.push(q.to_string());
            }
            s.push_str(&cols.join(","));
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_three_row_file() {
        let text = csv_of(&[ladder(1, 101, 99), ladder(2, 102, 100), ladder(3, 103, 101)]);
        let p = read_stream(text.as_bytes(), 0.01).unwrap();
        assert_eq!(p.snapshots.len(), 3);
        assert_eq!(p.reject_count(), 0);
        assert_eq!(p.snapshots[2].best_ask().price, 103);
    }

    #[test]
    fn short_row_is_malformed() {
        let mut text = csv_of(&[ladder(1, 101, 99)]);
        text.push_str(&(0..39).map(|i| i.to_string()).collect::<Vec<_>>().join(","));
        text.push('\n');
        match read_stream(text.as_bytes(), 0.01) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn crossed_row_counted_and_skipped() {
        let text = csv_of(&[ladder(1, 101, 99), ladder(2, 101, 102), ladder(3, 103, 101)]);
        let p = read_stream(text.as_bytes(), 0.01).unwrap();
        assert_eq!(p.snapshots.len(), 2);
        assert_eq!(p.rejects, vec![Rejection { line: 3, error: BookError::CrossedBook { ask: 101, bid: 102 } }]);
    }

    #[test]
    fn backwards_timestamp_is_fatal() {
        let text = csv_of(&[ladder(5, 101, 99), ladder(4, 101, 99)]);
        assert!(matches!(read_stream(text.as_bytes(), 0.01), Err(IngestError::NonMonotoneTimestamp { line: 3, .. })));
    }

    #[test]
    fn header_is_required() {
        let text = csv_of(&[ladder(1, 101, 99)]);
        let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_stream(body.as_bytes(), 0.01), Err(IngestError::BadHeader)));
    }

    #[test]
    fn write_then_read_is_identity() {
        let snaps: Vec<_> = (0..5)
            .map(|i| validate_snapshot(&ladder(i + 1, 101 + i, 99 + i), 0.01).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_stream(&mut buf, &snaps).unwrap();
        let back = read_stream(buf.as_slice(), 0.01).unwrap();
        assert_eq!(back.snapshots, snaps);
        let mut buf2 = Vec::new();
        write_stream(&mut buf2, &back.snapshots).unwrap();
        assert_eq!(buf, buf2);
    }

    fn column_rows(col: &[f64]) -> Vec<[f64; FEATURES]> {
        col.iter()
            .map(|&v| {
                let mut r = [0.0; FEATURES];
                r[3] = v;
                r
            })
            .collect()
    }

    #[test]
    fn trailing_zscore_hand_value() {
        let ns = normalize_rows(&column_rows(&[1.0, 2.0, 3.0, 4.0]), 3, 1e-8).unwrap();
        assert_eq!(ns.offset, 3);
        assert_eq!(ns.len(), 1);
        // mean 2, population std sqrt(2/3)
        let expect = 2.0 / (2.0f64 / 3.0).sqrt();
        assert!((ns.row(3)[3] - expect).abs() < 1e-12);
        assert!((ns.row(3)[3] - 2.449).abs() < 1e-3);
        // constant column 0 is floored to exactly zero
        assert_eq!(ns.row(3)[0], 0.0);
    }

    #[test]
    fn warmup_rows_are_flagged() {
        let mut n = RollingNormalizer::new(2, 1e-8).unwrap();
        let r = [1.0; FEATURES];
        assert!(matches!(n.push(r), NormalizedRow::Warmup(_)));
        assert!(matches!(n.push(r), NormalizedRow::Warmup(_)));
        assert_eq!(n.push(r), NormalizedRow::Ready([0.0; FEATURES]));
        assert!(RollingNormalizer::new(1, 1e-8).is_err());
    }

    #[test]
    fn normalization_is_causal_and_column_independent() {
        let rows: Vec<[f64; FEATURES]> = (0..200)
            .map(|t| {
                let mut r = [0.0; FEATURES];
                for (c, v) in r.iter_mut().enumerate() {
                    *v = ((t * 7 + c * 13) % 17) as f64 + (t as f64 * 0.1 * c as f64).sin();
                }
                r
            })
            .collect();
        let full = normalize_rows(&rows, 10, 1e-8).unwrap();
        let prefix = normalize_rows(&rows[..120], 10, 1e-8).unwrap();
        assert_eq!(&full.values[..prefix.values.len()], &prefix.values[..]);

        let swapped: Vec<[f64; FEATURES]> = rows
            .iter()
            .map(|r| {
                let mut s = *r;
                s.swap(0, 39);
                s
            })
            .collect();
        let sw = normalize_rows(&swapped, 10, 1e-8).unwrap();
        for i in 0..full.len() {
            let a = &full.values[i * FEATURES..(i + 1) * FEATURES];
            let b = &sw.values[i * FEATURES..(i + 1) * FEATURES];
            assert_eq!(a[0], b[39]);
            assert_eq!(a[39], b[0]);
            assert_eq!(a[5], b[5]);
        }
    }

    fn stream_of(rows: usize) -> NormalizedStream {
        NormalizedStream { offset: 7, values: (0..rows * FEATURES).map(|v| v as f64).collect() }
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&stream_of(100), 50).unwrap().len(), 51);
        assert_eq!(make_windows(&stream_of(50), 50).unwrap().len(), 1);
        assert!(matches!(
            make_windows(&stream_of(49), 50),
            Err(IngestError::StreamTooShort { needed: 50, available: 49 })
        ));
    }

    #[test]
    fn windows_are_ordered_views() {
        let s = stream_of(10);
        let w = make_windows(&s, 4).unwrap();
        assert_eq!(w[0].end_index, 7 + 3);
        assert_eq!(w[0].rows(), 4);
        assert_eq!(w[6].values[0], (6 * FEATURES) as f64);
        assert_eq!(w[6].values.last().copied(), Some((10 * FEATURES - 1) as f64));
    }

    #[test]
    fn split_example_and_gap_oracle() {
        let r = chronological_split(1000, &SplitSpec::default(), 150).unwrap();
        assert_eq!(r.train, 0..500);
        assert_eq!(r.validation, 650..750);
        assert_eq!(r.test, 900..1000);
        // brute force: no index in two splits, and windows/horizons never straddle
        let gap = 150;
        let all = [r.train.clone(), r.validation.clone(), r.test.clone()];
        for (i, a) in all.iter().enumerate() {
            for b in all.iter().skip(i + 1) {
                for x in (*a).clone() {
                    for y in (*b).clone() {
                        assert!(x != y);
                        assert!(x + gap <= y);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_splits() {
        let spec = SplitSpec { train: 1.0, validation: 0.0, test: 0.0 };
        assert!(matches!(chronological_split(1000, &spec, 10), Err(IngestError::EmptySplit("validation"))));
        let bad = SplitSpec { train: 0.5, validation: 0.5, test: 0.5 };
        assert!(matches!(chronological_split(1000, &bad, 10), Err(IngestError::InvalidSplit(_))));
        assert!(matches!(chronological_split(100, &SplitSpec::default(), 60), Err(IngestError::EmptySplit(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_gap_invariant(n in 20usize..3000, tr in 0.1f64..0.8, va_share in 0.1f64..0.9, gap in 0usize..50) {
                let va = (1.0 - tr) * va_share;
                let spec = SplitSpec { train: tr, validation: va, test: 1.0 - tr - va };
                if let Ok(r) = chronological_split(n, &spec, gap) {
                    prop_assert!(r.train.end - 1 + gap <= r.validation.start);
                    prop_assert!(r.validation.end + gap <= r.test.start);
                    prop_assert_eq!(r.train.start, 0);
                    prop_assert_eq!(r.test.end, n);
                }
            }
        }
    }
}
