//! Seeded synthetic order book streams with a controllable predictive signal.
//!
//! This is a testbed, not a calibrated market model. Per event:
//!
//! * level sizes are independent log-normal draws, so the book imbalance
//!   `I(t)` is a fresh, observable quantity every event;
//! * an efficient price `W` takes a Gaussian random-walk step;
//! * the quoted centre is `W(t) + beta * signal_ticks * I(t - h)`, so the
//!   expected mid change over the next `h` events given the current book is
//!   `beta * signal_ticks * I(t)` plus terms already known at `t`;
//! * the spread follows a mean-reverting AR(1) in log ticks, floored at one
//!   tick, optionally widening when the efficient price falls and narrowing
//!   when it rises.
//!
//! Quotes are rounded to whole ticks so every stream survives a CSV round trip
//! exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::kv::{KeyValues, KvError};
use crate::lob::{validate_snapshot, BookError, BookSnapshot, RawSnapshot, LEVELS};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    ConfigInvalid(String),
    #[error("generated snapshot {index} failed validation: {source}")]
    InvalidSnapshot { index: usize, source: BookError },
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_events: usize,
    pub tick_size: f64,
    pub initial_mid_ticks: i64,
    /// Standard deviation of the efficient-price step, ticks per event.
    pub mid_volatility: f64,
    /// Signal strength in `[0, 1]`.
    pub signal_strength: f64,
    /// Centre displacement, in ticks, per unit imbalance at full strength.
    pub signal_ticks: f64,
    /// Events between an imbalance and its price response.
    pub signal_horizon: usize,
    pub mean_spread_ticks: f64,
    /// AR(1) coefficient of the log spread, in `[0, 1)`.
    pub spread_persistence: f64,
    /// Innovation standard deviation of the log spread.
    pub spread_volatility: f64,
    /// Log-spread change per tick of efficient-price decline; used only by
    /// [`generate_paired_asymmetric`].
    pub spread_asymmetry: f64,
    pub level_spacing_ticks: i64,
    pub size_log_mean: f64,
    pub size_log_sigma: f64,
    pub event_interval_ns: i64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_events: 200_000,
            tick_size: 0.01,
            initial_mid_ticks: 10_000,
            mid_volatility: 0.5,
            signal_strength: 0.8,
            signal_ticks: 25.0,
            signal_horizon: 100,
            mean_spread_ticks: 2.0,
            spread_persistence: 0.9,
            spread_volatility: 0.15,
            spread_asymmetry: 1.0,
            level_spacing_ticks: 1,
            size_log_mean: 4.0,
            size_log_sigma: 0.6,
            event_interval_ns: 1_000_000,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        if self.n_events == 0 {
            return fail("n_events must be positive");
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return fail("tick_size must be positive");
        }
        if self.initial_mid_ticks <= 0 {
            return fail("initial_mid_ticks must be positive");
        }
        if !(self.mid_volatility >= 0.0 && self.mid_volatility.is_finite()) {
            return fail("mid_volatility must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return fail("signal_strength must lie in [0, 1]");
        }
        if !(self.signal_ticks >= 0.0 && self.signal_ticks.is_finite()) {
            return fail("signal_ticks must be non-negative");
        }
        if self.signal_horizon == 0 {
            return fail("signal_horizon must be positive");
        }
        if !(self.mean_spread_ticks >= 1.0 && self.mean_spread_ticks.is_finite()) {
            return fail("mean_spread_ticks must be at least 1");
        }
        if !(0.0..1.0).contains(&self.spread_persistence) {
            return fail("spread_persistence must lie in [0, 1)");
        }
        if !(self.spread_volatility >= 0.0 && self.spread_volatility.is_finite()) {
            return fail("spread_volatility must be non-negative");
        }
        if !(self.spread_asymmetry >= 0.0 && self.spread_asymmetry.is_finite()) {
            return fail("spread_asymmetry must be non-negative");
        }
        if self.level_spacing_ticks <= 0 {
            return fail("level_spacing_ticks must be positive");
        }
        if !(self.size_log_mean.is_finite() && self.size_log_sigma >= 0.0 && self.size_log_sigma.is_finite()) {
            return fail("size distribution parameters must be finite");
        }
        if self.event_interval_ns <= 0 {
            return fail("event_interval_ns must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_events", self.n_events);
        kv.set("tick_size", self.tick_size);
        kv.set("initial_mid_ticks", self.initial_mid_ticks);
        kv.set("mid_volatility", self.mid_volatility);
        kv.set("signal_strength", self.signal_strength);
        kv.set("signal_ticks", self.signal_ticks);
        kv.set("signal_horizon", self.signal_horizon);
        kv.set("mean_spread_ticks", self.mean_spread_ticks);
        kv.set("spread_persistence", self.spread_persistence);
        kv.set("spread_volatility", self.spread_volatility);
        kv.set("spread_asymmetry", self.spread_asymmetry);
        kv.set("level_spacing_ticks", self.level_spacing_ticks);
        kv.set("size_log_mean", self.size_log_mean);
        kv.set("size_log_sigma", self.size_log_sigma);
        kv.set("event_interval_ns", self.event_interval_ns);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads a config, taking defaults for absent keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, SynthError> {
        let d = GenConfig::default();
        let cfg = GenConfig {
            n_events: kv.get_or("n_events", d.n_events)?,
            tick_size: kv.get_or("tick_size", d.tick_size)?,
            initial_mid_ticks: kv.get_or("initial_mid_ticks", d.initial_mid_ticks)?,
            mid_volatility: kv.get_or("mid_volatility", d.mid_volatility)?,
            signal_strength: kv.get_or("signal_strength", d.signal_strength)?,
            signal_ticks: kv.get_or("signal_ticks", d.signal_ticks)?,
            signal_horizon: kv.get_or("signal_horizon", d.signal_horizon)?,
            mean_spread_ticks: kv.get_or("mean_spread_ticks", d.mean_spread_ticks)?,
            spread_persistence: kv.get_or("spread_persistence", d.spread_persistence)?,
            spread_volatility: kv.get_or("spread_volatility", d.spread_volatility)?,
            spread_asymmetry: kv.get_or("spread_asymmetry", d.spread_asymmetry)?,
            level_spacing_ticks: kv.get_or("level_spacing_ticks", d.level_spacing_ticks)?,
            size_log_mean: kv.get_or("size_log_mean", d.size_log_mean)?,
            size_log_sigma: kv.get_or("size_log_sigma", d.size_log_sigma)?,
            event_interval_ns: kv.get_or("event_interval_ns", d.event_interval_ns)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Stream with the spread independent of price moves.
pub fn generate(config: &GenConfig) -> Result<Vec<BookSnapshot>, SynthError> {
    config.validate()?;
    run(config, 0.0)
}

/// Stream whose spread co-moves with the efficient price, so adjusted long
/// returns and negated short returns follow different distributions.
pub fn generate_paired_asymmetric(config: &GenConfig) -> Result<Vec<BookSnapshot>, SynthError> {
    config.validate()?;
    if config.spread_persistence <= 0.0 || config.spread_volatility <= 0.0 || config.spread_asymmetry <= 0.0 {
        return Err(SynthError::ConfigInvalid(
            "asymmetric streams need positive spread persistence, volatility and asymmetry".into(),
        ));
    }
    run(config, config.spread_asymmetry)
}

fn run(cfg: &GenConfig, asymmetry: f64) -> Result<Vec<BookSnapshot>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size_dist = Normal::new(cfg.size_log_mean, cfg.size_log_sigma)
        .map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
    let amplitude = cfg.signal_strength * cfg.signal_ticks;
    let spacing = cfg.level_spacing_ticks;
    // lowest centre that keeps the deepest bid at a positive price
    let floor = |spread: i64| (spread + 2 * spacing * LEVELS as i64 + 1) as f64;

    let log_mean = cfg.mean_spread_ticks.ln();
    let mut log_spread = log_mean;
    let mut efficient = cfg.initial_mid_ticks as f64;
    let mut history = vec![0.0; cfg.signal_horizon];
    let mut out = Vec::with_capacity(cfg.n_events);

    for t in 0..cfg.n_events {
        let mut asks = [(0i64, 0i64); LEVELS];
        let mut bids = [(0i64, 0i64); LEVELS];
        for level in asks.iter_mut().chain(bids.iter_mut()) {
            let draw: f64 = size_dist.sample(&mut rng);
            level.1 = (draw.exp().round() as i64).max(1);
        }
        let bid_total: i64 = bids.iter().map(|l| l.1).sum();
        let ask_total: i64 = asks.iter().map(|l| l.1).sum();
        let imbalance = (bid_total - ask_total) as f64 / (bid_total + ask_total) as f64;

        let step: f64 = StandardNormal.sample(&mut rng);
        let shock: f64 = StandardNormal.sample(&mut rng);
        let move_ticks = if t > 0 { cfg.mid_volatility * step } else { 0.0 };
        efficient += move_ticks;
        let slot = t % cfg.signal_horizon;
        let lagged = if t >= cfg.signal_horizon { history[slot] } else { 0.0 };
        history[slot] = imbalance;
        let center = efficient + amplitude * lagged;
        if t > 0 {
            log_spread = log_mean
                + cfg.spread_persistence * (log_spread - log_mean)
                + cfg.spread_volatility * shock
                - asymmetry * move_ticks;
        }
        let spread = (log_spread.exp().round() as i64).max(1);
        let center = center.max(floor(spread));
        let bid1 = (center - spread as f64 / 2.0).round() as i64;
        let ask1 = bid1 + spread;
        for i in 0..LEVELS {
            asks[i].0 = ask1 + i as i64 * spacing;
            bids[i].0 = bid1 - i as i64 * spacing;
        }
        let raw = RawSnapshot { timestamp_ns: (t as i64 + 1) * cfg.event_interval_ns, asks, bids };
        let snap =
            validate_snapshot(&raw, cfg.tick_size).map_err(|source| SynthError::InvalidSnapshot { index: t, source })?;
        out.push(snap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{ReturnSeries, Side};

    fn small(seed: u64, n: usize) -> GenConfig {
        GenConfig { n_events: n, seed, ..GenConfig::default() }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn imbalance_vs_future_mid(stream: &[BookSnapshot], k: usize) -> f64 {
        let n = stream.len() - k;
        let imb: Vec<f64> = stream[..n].iter().map(BookSnapshot::imbalance).collect();
        let dm: Vec<f64> =
            (0..n).map(|t| (stream[t + k].mid_half_ticks() - stream[t].mid_half_ticks()) as f64).collect();
        correlation(&imb, &dm)
    }

    #[test]
    fn no_signal_means_no_correlation() {
        let cfg = GenConfig { signal_strength: 0.0, ..small(1, 50_100) };
        let c = imbalance_vs_future_mid(&generate(&cfg).unwrap(), 100);
        assert!(c.abs() < 0.02, "{c}");
    }

    #[test]
    fn strong_signal_is_visible() {
        let c = imbalance_vs_future_mid(&generate(&small(2, 50_100)).unwrap(), 100);
        assert!(c > 0.2, "{c}");
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = generate(&small(3, 2_000)).unwrap();
        let b = generate(&small(3, 2_000)).unwrap();
        assert_eq!(a, b);
        let longer = generate(&small(3, 3_000)).unwrap();
        assert_eq!(&longer[..2_000], &a[..]);
        assert_ne!(generate(&small(4, 2_000)).unwrap(), a);
    }

    #[test]
    fn spread_stays_at_least_one_tick() {
        let cfg = GenConfig { mean_spread_ticks: 1.0, spread_volatility: 1.0, ..small(5, 20_000) };
        let s = generate(&cfg).unwrap();
        assert!(s.iter().all(|x| x.spread_ticks() >= 1));
        assert!(s.iter().any(|x| x.spread_ticks() > 1));
    }

    #[test]
    fn low_prices_stay_valid() {
        let cfg = GenConfig { initial_mid_ticks: 30, mid_volatility: 3.0, ..small(6, 20_000) };
        let s = generate(&cfg).unwrap();
        assert!(s.iter().all(|x| x.bids()[LEVELS - 1].price >= 1));
    }

    #[test]
    fn constant_spread_mirrors_sides() {
        let cfg = GenConfig { spread_volatility: 0.0, ..small(7, 3_000) };
        let s = generate(&cfg).unwrap();
        assert!(s.iter().all(|x| x.spread_ticks() == 2));
        let r = ReturnSeries::new(&s, 50);
        for i in 0..r.len() {
            assert_eq!(r.side(Side::Long)[i], -r.side(Side::Short)[i]);
        }
    }

    #[test]
    fn asymmetric_generator_needs_varying_spread() {
        let cfg = GenConfig { spread_volatility: 0.0, ..small(8, 100) };
        assert!(matches!(generate_paired_asymmetric(&cfg), Err(SynthError::ConfigInvalid(_))));
    }

    #[test]
    fn config_checks_and_round_trip() {
        assert!(GenConfig { spread_persistence: 1.0, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { signal_strength: 1.5, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { n_events: 0, ..GenConfig::default() }.validate().is_err());
        let c = small(9, 1234);
        assert_eq!(GenConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn many_seeds_valid() {
        for seed in 0..100 {
            assert!(generate_paired_asymmetric(&small(seed, 500)).is_ok());
        }
    }
}
