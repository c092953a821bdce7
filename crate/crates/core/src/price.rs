//! Minute-bar ingestion, log returns and Monte Carlo trajectory generation.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HORIZON: usize = 1440;
const BAR_SECONDS: i64 = 60;

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("price series needs at least {needed} bars, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("return series of length {got} is shorter than the horizon {horizon}")]
    HorizonTooLong { got: usize, horizon: usize },
    #[error("invalid sampling parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One OHLCV bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    /// Epoch seconds.
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceSeries {
    bars: Vec<Bar>,
}

#[derive(Debug, Deserialize)]
struct RawBar {
    timestamp: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

/// Parses epoch seconds or an ISO-8601 timestamp (UTC when no offset is given).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(secs) = raw.parse::<f64>() {
        return secs.is_finite().then_some(secs as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
    .map(|dt| dt.and_utc().timestamp())
}

impl PriceSeries {
    /// Validates ordering and positivity of `bars`.
    pub fn new(bars: Vec<Bar>) -> Result<Self, PriceError> {
        for (k, bar) in bars.iter().enumerate() {
            let row = k + 1;
            if !(bar.close.is_finite() && bar.close > 0.0) {
                return Err(PriceError::Row {
                    row,
                    message: format!("close price must be positive, got {}", bar.close),
                });
            }
            if k > 0 && bar.timestamp <= bars[k - 1].timestamp {
                return Err(PriceError::Row {
                    row,
                    message: format!("timestamp {} does not increase", bar.timestamp),
                });
            }
        }
        let irregular = bars
            .windows(2)
            .filter(|w| w[1].timestamp - w[0].timestamp != BAR_SECONDS)
            .count();
        if irregular > 0 {
            log::warn!("{irregular} bar gaps differ from {BAR_SECONDS} seconds");
        }
        Ok(Self { bars })
    }

    /// Series of closes at one-minute spacing starting at `start`.
    pub fn from_closes(start: i64, closes: &[f64]) -> Result<Self, PriceError> {
        let bars = closes
            .iter()
            .enumerate()
            .map(|(k, &c)| Bar {
                timestamp: start + k as i64 * BAR_SECONDS,
                open: c,
                high: c,
                low: c,
                close: c,
                volume: 0.0,
            })
            .collect();
        Self::new(bars)
    }

    pub fn read_csv(path: &Path) -> Result<Self, PriceError> {
        let file = std::fs::File::open(path).map_err(|source| PriceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    /// Reads `timestamp,open,high,low,close,volume` rows.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, PriceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut bars = Vec::new();
        for (k, rec) in rdr.deserialize::<RawBar>().enumerate() {
            let row = k + 1;
            let raw = rec.map_err(|e| PriceError::Row {
                row,
                message: e.to_string(),
            })?;
            let timestamp = parse_timestamp(&raw.timestamp).ok_or_else(|| PriceError::Row {
                row,
                message: format!("unrecognized timestamp {:?}", raw.timestamp),
            })?;
            bars.push(Bar {
                timestamp,
                open: raw.open,
                high: raw.high,
                low: raw.low,
                close: raw.close,
                volume: raw.volume,
            });
        }
        Self::new(bars)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PriceError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "open", "high", "low", "close", "volume"])?;
        for b in &self.bars {
            w.write_record([
                b.timestamp.to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])?;
        }
        w.flush().map_err(|source| PriceError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Close of the last bar at or before `timestamp`.
    pub fn close_at(&self, timestamp: i64) -> Option<f64> {
        let idx = self.bars.partition_point(|b| b.timestamp <= timestamp);
        idx.checked_sub(1).map(|k| self.bars[k].close)
    }
}

/// `ln(close_t / close_{t−1})` for consecutive bars.
pub fn log_returns(series: &PriceSeries) -> Result<Vec<f64>, PriceError> {
    if series.len() < 2 {
        return Err(PriceError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(series
        .bars
        .windows(2)
        .map(|w| (w[1].close / w[0].close).ln())
        .collect())
}

/// A path of per-step multiplicative price factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub reversed: bool,
    pub factors: Vec<f64>,
}

impl Trajectory {
    pub fn flat(id: usize, horizon: usize) -> Self {
        Self {
            id,
            reversed: false,
            factors: vec![1.0; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Cumulative multiplier after the last step.
    pub fn terminal_multiplier(&self) -> f64 {
        self.factors.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Contiguous windows with uniformly random start offsets (overlap allowed).
    #[default]
    Window,
    /// Each step drawn independently from the return pool.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Append each draw's time reversal right after it.
    pub reverse: bool,
}

impl BootstrapOptions {
    pub fn new(draws: usize, horizon: usize, seed: u64) -> Self {
        Self {
            draws,
            horizon,
            seed,
            mode: SamplingMode::Window,
            reverse: true,
        }
    }
}

/// `n` contiguous windows plus their reversals: `2n` trajectories, with
/// trajectory `2k + 1` the reversal of trajectory `2k`.
pub fn sample_trajectories(
    returns: &[f64],
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, PriceError> {
    bootstrap(returns, &BootstrapOptions::new(n, horizon, seed))
}

pub fn bootstrap(returns: &[f64], opts: &BootstrapOptions) -> Result<Vec<Trajectory>, PriceError> {
    if opts.draws == 0 {
        return Err(PriceError::InvalidParameter(
            "draws must be at least 1".into(),
        ));
    }
    if opts.horizon == 0 {
        return Err(PriceError::InvalidParameter(
            "horizon must be at least 1".into(),
        ));
    }
    if returns.len() < opts.horizon {
        return Err(PriceError::HorizonTooLong {
            got: returns.len(),
            horizon: opts.horizon,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let per_draw = if opts.reverse { 2 } else { 1 };
    let mut out = Vec::with_capacity(opts.draws * per_draw);
    for _ in 0..opts.draws {
        let window: Vec<f64> = match opts.mode {
            SamplingMode::Window => {
                let start = rng.random_range(0..=returns.len() - opts.horizon);
                returns[start..start + opts.horizon].to_vec()
            }
            SamplingMode::Iid => (0..opts.horizon)
                .map(|_| returns[rng.random_range(0..returns.len())])
                .collect(),
        };
        let factors: Vec<f64> = window.iter().map(|r| r.exp()).collect();
        if opts.reverse {
            let mut rev = factors.clone();
            rev.reverse();
            out.push(Trajectory {
                id: out.len(),
                reversed: false,
                factors,
            });
            out.push(Trajectory {
                id: out.len(),
                reversed: true,
                factors: rev,
            });
        } else {
            out.push(Trajectory {
                id: out.len(),
                reversed: false,
                factors,
            });
        }
    }
    Ok(out)
}

/// Geometric Brownian motion paths with factors `e^{μ − σ²/2 + σz}`.
pub fn synthetic_gbm(
    mu: f64,
    sigma_step: f64,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, PriceError> {
    if sigma_step.is_nan() || sigma_step < 0.0 {
        return Err(PriceError::InvalidParameter(format!(
            "per-step volatility must be non-negative, got {sigma_step}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = mu - 0.5 * sigma_step * sigma_step;
    Ok((0..n)
        .map(|id| Trajectory {
            id,
            reversed: false,
            factors: (0..horizon)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (drift + sigma_step * z).exp()
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_return_examples() {
        let r = log_returns(&PriceSeries::from_closes(0, &[100.0, 100.0]).unwrap()).unwrap();
        assert_eq!(r, vec![0.0]);
        let r = log_returns(&PriceSeries::from_closes(0, &[100.0, 110.0]).unwrap()).unwrap();
        assert!((r[0] - 0.09531).abs() < 1e-5);
        let r = log_returns(&PriceSeries::from_closes(0, &[100.0, 50.0, 100.0]).unwrap()).unwrap();
        assert!((r[0] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r[0] + r[1]).abs() < 1e-15);
    }

    #[test]
    fn series_validation() {
        assert!(PriceSeries::from_closes(0, &[100.0, 0.0]).is_err());
        assert!(log_returns(&PriceSeries::from_closes(0, &[100.0]).unwrap()).is_err());
        let bar = |t| Bar {
            timestamp: t,
            open: 1.0,
            high: 1.0,
            low: 1.0,
            close: 1.0,
            volume: 0.0,
        };
        assert!(PriceSeries::new(vec![bar(60), bar(60)]).is_err());
    }

    #[test]
    fn csv_timestamps_auto_detected() {
        let epoch = "timestamp,open,high,low,close,volume\n1669123860,1,1,1,0.5,10\n1669123920,1,1,1,0.6,10\n";
        let iso = "timestamp,open,high,low,close,volume\n2022-11-22T13:31:00Z,1,1,1,0.5,10\n2022-11-22 13:32:00,1,1,1,0.6,10\n";
        let a = PriceSeries::from_reader(epoch.as_bytes()).unwrap();
        let b = PriceSeries::from_reader(iso.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bars()[1].volume, 10.0);
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let bad = "timestamp,open,high,low,close,volume\n60,1,1,1,1,1\n120,1,1,1,oops,1\n";
        match PriceSeries::from_reader(bad.as_bytes()) {
            Err(PriceError::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = PriceSeries::from_closes(1_000, &[0.51, 0.52173, 0.5]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(PriceSeries::from_reader(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn close_lookup() {
        let s = PriceSeries::from_closes(60, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.close_at(59), None);
        assert_eq!(s.close_at(60), Some(1.0));
        assert_eq!(s.close_at(150), Some(2.0));
        assert_eq!(s.close_at(10_000), Some(3.0));
    }

    #[test]
    fn sampling_counts_and_pairing() {
        let returns: Vec<f64> = (0..200).map(|k| (k as f64 * 0.37).sin() * 0.01).collect();
        let t = sample_trajectories(&returns, 25, 40, 7).unwrap();
        assert_eq!(t.len(), 50);
        for (k, tr) in t.iter().enumerate() {
            assert_eq!(tr.id, k);
            assert_eq!(tr.len(), 40);
            assert!(tr.factors.iter().all(|f| *f > 0.0));
        }
        for pair in t.chunks(2) {
            let mut rev = pair[0].factors.clone();
            rev.reverse();
            assert_eq!(rev, pair[1].factors);
            assert!(!pair[0].reversed && pair[1].reversed);
            let (a, b) = (pair[0].terminal_multiplier(), pair[1].terminal_multiplier());
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let returns: Vec<f64> = (0..60).map(|k| k as f64 * 1e-3).collect();
        let t = sample_trajectories(&returns, 30, 10, 99).unwrap();
        for tr in &t {
            let mut logs: Vec<f64> = tr.factors.iter().map(|f| f.ln()).collect();
            if tr.reversed {
                logs.reverse();
            }
            let found = returns
                .windows(10)
                .any(|w| w.iter().zip(&logs).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(found, "trajectory {} is not a slice", tr.id);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let returns: Vec<f64> = (0..500)
            .map(|k| ((k * 7919) % 101) as f64 * 1e-4 - 5e-3)
            .collect();
        let a = sample_trajectories(&returns, 10, 100, 42).unwrap();
        let b = sample_trajectories(&returns, 10, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectories(&returns, 10, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iid_mode_draws_from_pool() {
        let returns = vec![0.01, -0.02, 0.005, 0.0, 0.003, -0.001];
        let mut opts = BootstrapOptions::new(5, 6, 1);
        opts.mode = SamplingMode::Iid;
        opts.reverse = false;
        let t = bootstrap(&returns, &opts).unwrap();
        assert_eq!(t.len(), 5);
        for f in t.iter().flat_map(|t| t.factors.iter()) {
            assert!(returns.iter().any(|r| (r.exp() - f).abs() < 1e-15));
        }
    }

    #[test]
    fn sampling_errors() {
        assert!(matches!(
            sample_trajectories(&[0.0; 10], 1, 11, 0),
            Err(PriceError::HorizonTooLong { .. })
        ));
        assert!(sample_trajectories(&[0.0; 10], 0, 5, 0).is_err());
    }

    #[test]
    fn gbm_degenerate_and_moments() {
        let t = synthetic_gbm(0.001, 0.0, 5, 2, 3).unwrap();
        assert!(t
            .iter()
            .flat_map(|t| &t.factors)
            .all(|f| (*f - 0.001f64.exp()).abs() < 1e-15));
        let t = synthetic_gbm(0.0, 0.0, 5, 1, 3).unwrap();
        assert!(t[0].factors.iter().all(|f| *f == 1.0));
        assert!(synthetic_gbm(0.0, -0.1, 5, 1, 3).is_err());

        let (mu, s) = (2e-4, 0.01);
        let t = synthetic_gbm(mu, s, 1000, 100, 11).unwrap();
        let logs: Vec<f64> = t
            .iter()
            .flat_map(|t| t.factors.iter().map(|f| f.ln()))
            .collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let expected = mu - s * s / 2.0;
        let stderr = s / n.sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * stderr,
            "{mean} vs {expected}"
        );
    }
}
