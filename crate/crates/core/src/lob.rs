//! Order book value types: levels, validated snapshots, mid-price and spread.
//!
//! Prices are integer tick counts. Conversion to real price units happens only
//! through [`BookSnapshot::tick_size`], so book invariants are checked exactly.

use thiserror::Error;

/// Number of price levels kept on each side of the book.
pub const LEVELS: usize = 10;

/// Raw features per snapshot: price and size for every level of both sides.
pub const FEATURES: usize = 4 * LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BookSide {
    Ask,
    Bid,
}

impl std::fmt::Display for BookSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BookSide::Ask => f.write_str("ask"),
            BookSide::Bid => f.write_str("bid"),
        }
    }
}

/// Snapshot rejections. Levels are reported 1-based, as on the wire.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum BookError {
    #[error("crossed or locked book: best ask {ask} <= best bid {bid}")]
    CrossedBook { ask: i64, bid: i64 },
    #[error("{side} prices not strictly monotone at level {level}")]
    NonMonotoneLevels { side: BookSide, level: usize },
    #[error("{side} size {size} at level {level} is not positive")]
    NonPositiveSize { side: BookSide, level: usize, size: i64 },
    #[error("timestamp {current} does not increase on previous {previous}")]
    NonMonotoneTimestamp { previous: i64, current: i64 },
    #[error("tick size {0} must be positive and finite")]
    InvalidTickSize(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BookLevel {
    /// Price in ticks.
    pub price: i64,
    pub size: u64,
}

/// Unvalidated snapshot fields, as read from a file or produced by a generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSnapshot {
    pub timestamp_ns: i64,
    /// `(price_ticks, size)` for levels 1..=10, best first.
    pub asks: [(i64, i64); LEVELS],
    pub bids: [(i64, i64); LEVELS],
}

/// A validated book state. Only constructible through [`validate_snapshot`].
#[derive(Clone, Debug, PartialEq)]
pub struct BookSnapshot {
    timestamp_ns: i64,
    asks: [BookLevel; LEVELS],
    bids: [BookLevel; LEVELS],
    tick_size: f64,
}

/// Mid-price and spread in real price units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quote {
    pub mid: f64,
    pub spread: f64,
}

/// Builds a snapshot iff every book invariant holds.
pub fn validate_snapshot(raw: &RawSnapshot, tick_size: f64) -> Result<BookSnapshot, BookError> {
    if !(tick_size.is_finite() && tick_size > 0.0) {
        return Err(BookError::InvalidTickSize(tick_size));
    }
    let asks = check_side(BookSide::Ask, &raw.asks)?;
    let bids = check_side(BookSide::Bid, &raw.bids)?;
    if asks[0].price <= bids[0].price {
        return Err(BookError::CrossedBook { ask: asks[0].price, bid: bids[0].price });
    }
    Ok(BookSnapshot { timestamp_ns: raw.timestamp_ns, asks, bids, tick_size })
}

fn check_side(side: BookSide, levels: &[(i64, i64); LEVELS]) -> Result<[BookLevel; LEVELS], BookError> {
    let mut out = [BookLevel { price: 0, size: 0 }; LEVELS];
    for (i, &(price, size)) in levels.iter().enumerate() {
        if size <= 0 {
            return Err(BookError::NonPositiveSize { side, level: i + 1, size });
        }
        if i > 0 {
            let prev = levels[i - 1].0;
            let ordered = match side {
                BookSide::Ask => price > prev,
                BookSide::Bid => price < prev,
            };
            if !ordered {
                return Err(BookError::NonMonotoneLevels { side, level: i + 1 });
            }
        }
        out[i] = BookLevel { price, size: size as u64 };
    }
    Ok(out)
}

impl BookSnapshot {
    pub fn timestamp_ns(&self) -> i64 {
        self.timestamp_ns
    }

    pub fn asks(&self) -> &[BookLevel; LEVELS] {
        &self.asks
    }

    pub fn bids(&self) -> &[BookLevel; LEVELS] {
        &self.bids
    }

    pub fn tick_size(&self) -> f64 {
        self.tick_size
    }

    pub fn best_ask(&self) -> BookLevel {
        self.asks[0]
    }

    pub fn best_bid(&self) -> BookLevel {
        self.bids[0]
    }

    /// Twice the mid-price, in ticks. Exact.
    pub fn mid_half_ticks(&self) -> i64 {
        self.asks[0].price + self.bids[0].price
    }

    /// Best ask minus best bid, in ticks. Always at least 1.
    pub fn spread_ticks(&self) -> i64 {
        self.asks[0].price - self.bids[0].price
    }

    pub fn mid_price(&self) -> f64 {
        self.mid_half_ticks() as f64 * self.tick_size / 2.0
    }

    pub fn spread(&self) -> f64 {
        self.spread_ticks() as f64 * self.tick_size
    }

    pub fn quote(&self) -> Quote {
        Quote { mid: self.mid_price(), spread: self.spread() }
    }

    /// Book imbalance `(sum bid size - sum ask size) / (sum of both)`.
    pub fn imbalance(&self) -> f64 {
        let bid: u64 = self.bids.iter().map(|l| l.size).sum();
        let ask: u64 = self.asks.iter().map(|l| l.size).sum();
        (bid as f64 - ask as f64) / (bid + ask) as f64
    }

    /// The 40 raw features in file column order: ask price/size pairs for
    /// levels 1..=10, then bid price/size pairs. Prices stay in ticks.
    pub fn features(&self) -> [f64; FEATURES] {
        let mut out = [0.0; FEATURES];
        for (i, l) in self.asks.iter().enumerate() {
            out[2 * i] = l.price as f64;
            out[2 * i + 1] = l.size as f64;
        }
        for (i, l) in self.bids.iter().enumerate() {
            out[2 * LEVELS + 2 * i] = l.price as f64;
            out[2 * LEVELS + 2 * i + 1] = l.size as f64;
        }
        out
    }

    pub fn to_raw(&self) -> RawSnapshot {
        let conv = |ls: &[BookLevel; LEVELS]| {
            let mut out = [(0i64, 0i64); LEVELS];
            for (o, l) in out.iter_mut().zip(ls) {
                *o = (l.price, l.size as i64);
            }
            out
        };
        RawSnapshot { timestamp_ns: self.timestamp_ns, asks: conv(&self.asks), bids: conv(&self.bids) }
    }
}

pub fn mid_price(snap: &BookSnapshot) -> f64 {
    snap.mid_price()
}

pub fn spread(snap: &BookSnapshot) -> f64 {
    snap.spread()
}

/// Enforces strictly increasing timestamps across a stream.
#[derive(Clone, Debug, Default)]
pub struct TimestampGuard {
    last: Option<i64>,
}

impl TimestampGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, ts: i64) -> Result<(), BookError> {
        if let Some(prev) = self.last {
            if ts <= prev {
                return Err(BookError::NonMonotoneTimestamp { previous: prev, current: ts });
            }
        }
        self.last = Some(ts);
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Ladder with best ask `ask1`, best bid `bid1`, one-tick spacing, size 10.
    pub(crate) fn ladder(ts: i64, ask1: i64, bid1: i64) -> RawSnapshot {
        let mut asks = [(0, 10); LEVELS];
        let mut bids = [(0, 10); LEVELS];
        for i in 0..LEVELS {
            asks[i].0 = ask1 + i as i64;
            bids[i].0 = bid1 - i as i64;
        }
        RawSnapshot { timestamp_ns: ts, asks, bids }
    }

    #[test]
    fn mid_and_spread_examples() {
        let s = validate_snapshot(&ladder(0, 101, 99), 1.0).unwrap();
        assert_eq!(s.mid_price(), 100.0);
        assert_eq!(s.spread(), 2.0);
        let s = validate_snapshot(&ladder(0, 103, 101), 1.0).unwrap();
        assert_eq!(mid_price(&s), 102.0);
        // 100.5 / 100 with half-unit ticks
        let s = validate_snapshot(&ladder(0, 201, 200), 0.5).unwrap();
        assert_eq!(spread(&s), 0.5);
        assert_eq!(s.mid_price(), 100.25);
    }

    #[test]
    fn accepts_well_formed_ladder() {
        let raw = ladder(1, 101, 99);
        let s = validate_snapshot(&raw, 0.01).unwrap();
        assert_eq!(s.asks()[9].price, 110);
        assert_eq!(s.bids()[9].price, 90);
        assert_eq!(s.to_raw(), raw);
    }

    #[test]
    fn locked_and_crossed_books_rejected() {
        assert_eq!(
            validate_snapshot(&ladder(0, 100, 100), 1.0),
            Err(BookError::CrossedBook { ask: 100, bid: 100 })
        );
        assert_eq!(
            validate_snapshot(&ladder(0, 101, 102), 1.0),
            Err(BookError::CrossedBook { ask: 101, bid: 102 })
        );
    }

    #[test]
    fn non_monotone_levels_rejected() {
        let mut raw = ladder(0, 101, 99);
        raw.asks[2].0 = 101; // level 3 below level 2 (102)
        assert_eq!(
            validate_snapshot(&raw, 1.0),
            Err(BookError::NonMonotoneLevels { side: BookSide::Ask, level: 3 })
        );
        let mut raw = ladder(0, 101, 99);
        raw.bids[5].0 = raw.bids[4].0;
        assert_eq!(
            validate_snapshot(&raw, 1.0),
            Err(BookError::NonMonotoneLevels { side: BookSide::Bid, level: 6 })
        );
    }

    #[test]
    fn non_positive_size_rejected() {
        let mut raw = ladder(0, 101, 99);
        raw.bids[7].1 = 0;
        assert_eq!(
            validate_snapshot(&raw, 1.0),
            Err(BookError::NonPositiveSize { side: BookSide::Bid, level: 8, size: 0 })
        );
    }

    #[test]
    fn bad_tick_size_rejected() {
        assert!(matches!(validate_snapshot(&ladder(0, 101, 99), 0.0), Err(BookError::InvalidTickSize(_))));
    }

    #[test]
    fn timestamp_guard() {
        let mut g = TimestampGuard::new();
        g.check(5).unwrap();
        g.check(6).unwrap();
        assert_eq!(g.check(6), Err(BookError::NonMonotoneTimestamp { previous: 6, current: 6 }));
    }

    #[test]
    fn imbalance_sign() {
        let mut raw = ladder(0, 101, 99);
        for b in raw.bids.iter_mut() {
            b.1 = 30;
        }
        let s = validate_snapshot(&raw, 1.0).unwrap();
        assert!((s.imbalance() - 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_raw() -> impl Strategy<Value = RawSnapshot> {
            (
                1i64..1_000_000,
                1i64..50,
                prop::array::uniform10(1i64..5),
                prop::array::uniform10(1i64..5),
                prop::array::uniform10(1i64..10_000),
                prop::array::uniform10(1i64..10_000),
            )
                .prop_map(|(bid1, spread, ask_gaps, bid_gaps, ask_sz, bid_sz)| {
                    let mut asks = [(0, 0); LEVELS];
                    let mut bids = [(0, 0); LEVELS];
                    let (mut a, mut b) = (bid1 + spread, bid1);
                    for i in 0..LEVELS {
                        if i > 0 {
                            a += ask_gaps[i];
                            b -= bid_gaps[i];
                        }
                        asks[i] = (a, ask_sz[i]);
                        bids[i] = (b, bid_sz[i]);
                    }
                    RawSnapshot { timestamp_ns: 7, asks, bids }
                })
        }

        proptest! {
            #[test]
            fn mid_strictly_inside_and_spread_identity(raw in arb_raw()) {
                let s = validate_snapshot(&raw, 0.01).unwrap();
                // exact in half-tick arithmetic
                prop_assert!(2 * s.best_bid().price < s.mid_half_ticks());
                prop_assert!(s.mid_half_ticks() < 2 * s.best_ask().price);
                prop_assert_eq!(s.spread_ticks(), 2 * s.best_ask().price - s.mid_half_ticks());
                prop_assert!(s.spread() > 0.0);
                let q = s.quote();
                prop_assert!(s.best_bid().price as f64 * 0.01 < q.mid);
                prop_assert!(q.mid < s.best_ask().price as f64 * 0.01);
            }
        }
    }
}
