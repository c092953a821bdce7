//! Replays recorded liquidation calls against a recorded price series.
//!
//! The portfolio is valued in USD at the first bar; later bars move the debt
//! asset by `close_t / close_0`. Events are applied in timestamp order, after
//! any price bar carrying the same timestamp.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{AssetId, Portfolio};
use crate::montecarlo::lower_median;
use crate::price::{parse_timestamp, PriceSeries};
use crate::scalar::Scalar;

/// Relative tolerance for seizures that slightly exceed the remaining collateral.
const OVERDRAIN_TOLERANCE: f64 = 1e-9;
/// Fitted σ above this are counted separately in σ reports.
pub const SIGMA_DISPLAY_CUTOFF: f64 = 600.0;
pub const DEFAULT_BINDING_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("events row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(
        "event {index} at {timestamp} seizes {seized} but only {available} collateral remains"
    )]
    OverDrain {
        index: usize,
        timestamp: i64,
        seized: f64,
        available: f64,
    },
    #[error("event {index} at {timestamp} is out of order")]
    Unsorted { index: usize, timestamp: i64 },
    #[error("event {index} at {timestamp} lies outside the price series span")]
    OutOfRange { index: usize, timestamp: i64 },
    #[error("price series is empty")]
    NoPrices,
    #[error("no slippage factors to summarize")]
    EmptySigmas,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One historical liquidation call, in realized USD amounts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidationRecord {
    pub timestamp: i64,
    pub repaid_usd: f64,
    pub seized_usd: f64,
    pub incentive: f64,
    pub block: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    timestamp: String,
    repaid_usd: f64,
    seized_usd: f64,
    incentive: f64,
    #[serde(default)]
    block: Option<u64>,
}

/// How the `repaid_usd` column of an events file is denominated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventUnits {
    #[default]
    Usd,
    /// Debt-token quantities, converted with the close in effect at the event.
    Tokens,
}

pub fn read_events_csv(path: &Path) -> Result<Vec<LiquidationRecord>, ReplayError> {
    let file = std::fs::File::open(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_events(file)
}

/// Reads `timestamp,repaid_usd,seized_usd,incentive[,block]` rows.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<LiquidationRecord>, ReplayError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<RawRecord>().enumerate() {
        let row = k + 1;
        let bad = |message: String| ReplayError::Row { row, message };
        let raw = rec.map_err(|e| bad(e.to_string()))?;
        let timestamp = parse_timestamp(&raw.timestamp)
            .ok_or_else(|| bad(format!("unrecognized timestamp {:?}", raw.timestamp)))?;
        if !(raw.repaid_usd.is_finite() && raw.repaid_usd >= 0.0) {
            return Err(bad(format!(
                "repaid_usd must be non-negative, got {}",
                raw.repaid_usd
            )));
        }
        if !(raw.seized_usd.is_finite() && raw.seized_usd >= raw.repaid_usd) {
            return Err(bad(format!(
                "seized_usd {} is below repaid_usd {}",
                raw.seized_usd, raw.repaid_usd
            )));
        }
        if !(raw.incentive.is_finite() && raw.incentive >= 0.0) {
            return Err(bad(format!(
                "incentive must be non-negative, got {}",
                raw.incentive
            )));
        }
        out.push(LiquidationRecord {
            timestamp,
            repaid_usd: raw.repaid_usd,
            seized_usd: raw.seized_usd,
            incentive: raw.incentive,
            block: raw.block,
        });
    }
    Ok(out)
}

pub fn write_events<W: Write>(events: &[LiquidationRecord], writer: W) -> Result<(), ReplayError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "timestamp",
        "repaid_usd",
        "seized_usd",
        "incentive",
        "block",
    ])?;
    for e in events {
        w.write_record([
            e.timestamp.to_string(),
            e.repaid_usd.to_string(),
            e.seized_usd.to_string(),
            e.incentive.to_string(),
            e.block.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|source| ReplayError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Converts token-denominated repayments to USD with the close in effect at
/// each event. Seized amounts are already USD.
pub fn tokens_to_usd(
    events: &[LiquidationRecord],
    prices: &PriceSeries,
) -> Result<Vec<LiquidationRecord>, ReplayError> {
    events
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let close = prices
                .close_at(e.timestamp)
                .ok_or(ReplayError::OutOfRange {
                    index,
                    timestamp: e.timestamp,
                })?;
            Ok(LiquidationRecord {
                repaid_usd: e.repaid_usd * close,
                ..*e
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum TraceCause {
    Start,
    Price,
    Event(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub timestamp: i64,
    /// Infinite once the collateral is exhausted.
    pub ltv: f64,
    pub cause: TraceCause,
}

/// Portfolio state around one replayed event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventState {
    pub index: usize,
    pub timestamp: i64,
    pub ltv_before: f64,
    pub ltv_after: f64,
    pub debt_before: f64,
    pub collateral_before: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayTrace {
    pub points: Vec<TracePoint>,
    pub events: Vec<EventState>,
}

impl ReplayTrace {
    /// Timestamp of the first point whose LTV exceeds `frontier`.
    pub fn first_crossing(&self, frontier: f64) -> Option<i64> {
        self.points
            .iter()
            .find(|p| p.ltv > frontier)
            .map(|p| p.timestamp)
    }
}

fn ltv_or_inf(p: &Portfolio<f64>) -> f64 {
    p.ltv().unwrap_or(f64::INFINITY)
}

/// Interleaves price updates and recorded liquidations, emitting the LTV
/// after every change.
pub fn reconstruct_ltv(
    p0: &Portfolio<f64>,
    prices: &PriceSeries,
    events: &[LiquidationRecord],
    price_asset: Option<&AssetId>,
) -> Result<ReplayTrace, ReplayError> {
    let bars = prices.bars();
    let (first, last) = match (bars.first(), bars.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ReplayError::NoPrices),
    };
    for (index, e) in events.iter().enumerate() {
        if index > 0 && e.timestamp < events[index - 1].timestamp {
            return Err(ReplayError::Unsorted {
                index,
                timestamp: e.timestamp,
            });
        }
        if e.timestamp < first.timestamp || e.timestamp > last.timestamp {
            return Err(ReplayError::OutOfRange {
                index,
                timestamp: e.timestamp,
            });
        }
    }

    let mut p = p0.clone();
    let mut trace = ReplayTrace::default();
    let mut next_event = 0;
    for (k, bar) in bars.iter().enumerate() {
        let cause = if k == 0 {
            TraceCause::Start
        } else {
            // closes are validated positive, so the multiplier is too
            let _ = p.set_debt_price(price_asset, bar.close / first.close);
            TraceCause::Price
        };
        trace.points.push(TracePoint {
            timestamp: bar.timestamp,
            ltv: ltv_or_inf(&p),
            cause,
        });
        let until = bars.get(k + 1).map_or(i64::MAX, |b| b.timestamp);
        while next_event < events.len() && events[next_event].timestamp < until {
            let e = &events[next_event];
            let collateral_before = p.total_collateral();
            if e.seized_usd > collateral_before * (1.0 + OVERDRAIN_TOLERANCE) {
                return Err(ReplayError::OverDrain {
                    index: next_event,
                    timestamp: e.timestamp,
                    seized: e.seized_usd,
                    available: collateral_before,
                });
            }
            let state = EventState {
                index: next_event,
                timestamp: e.timestamp,
                ltv_before: ltv_or_inf(&p),
                ltv_after: f64::NAN,
                debt_before: p.total_debt(),
                collateral_before,
            };
            p.repay(e.repaid_usd);
            p.seize(e.seized_usd.min(collateral_before));
            let ltv = ltv_or_inf(&p);
            trace.events.push(EventState {
                ltv_after: ltv,
                ..state
            });
            trace.points.push(TracePoint {
                timestamp: e.timestamp,
                ltv,
                cause: TraceCause::Event(next_event),
            });
            next_event += 1;
        }
    }
    Ok(trace)
}

/// Equal-width histogram over the finite values of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl UniformHistogram {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() || bins == 0 {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo {
            (hi - lo) / bins as f64
        } else {
            1.0
        };
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for v in finite {
            let k = ((v - lo) / width) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }
}

/// Relative LTV changes `LTV_fin / LTV_init − 1`, split by frontier side.
#[derive(Debug, Clone, PartialEq)]
pub struct DltvDistribution {
    pub frontier: f64,
    pub below: Vec<f64>,
    pub above: Vec<f64>,
    pub below_hist: UniformHistogram,
    pub above_hist: UniformHistogram,
}

pub fn relative_change(ltv_init: f64, ltv_fin: f64) -> f64 {
    ltv_fin / ltv_init - 1.0
}

pub fn dltv_distribution(trace: &ReplayTrace, frontier: f64, bins: usize) -> DltvDistribution {
    let mut below = Vec::new();
    let mut above = Vec::new();
    for e in &trace.events {
        let change = relative_change(e.ltv_before, e.ltv_after);
        if e.ltv_before > frontier {
            above.push(change);
        } else {
            below.push(change);
        }
    }
    DltvDistribution {
        frontier,
        below_hist: UniformHistogram::from_values(&below, bins),
        above_hist: UniformHistogram::from_values(&above, bins),
        below,
        above,
    }
}

/// Slippage factor implied by a repay size assumed to be profit-optimal:
/// `σ = [(1+i)²(1−γ)² − 1] / [4(1+i)²] · L / q`.
pub fn empirical_sigma<T: Scalar>(incentive: T, gamma: T, liquidity: T, q_repay: T) -> T {
    let g = T::one() + incentive;
    let gross = g * (T::one() - gamma);
    (gross * gross - T::one()) / (T::lit(4.0) * g * g) * liquidity / q_repay
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaFit {
    pub index: usize,
    pub timestamp: i64,
    pub sigma: f64,
    /// Negative σ: the incentive cannot cover the trading fee.
    pub unprofitable: bool,
}

/// One σ per record with positive repayment; zero repayments are skipped.
pub fn fit_sigma(events: &[LiquidationRecord], gamma: f64, liquidity: f64) -> Vec<SigmaFit> {
    events
        .iter()
        .enumerate()
        .filter_map(|(index, e)| {
            if e.repaid_usd <= 0.0 {
                log::warn!("skipping event {index}: zero repayment");
                return None;
            }
            let sigma = empirical_sigma(e.incentive, gamma, liquidity, e.repaid_usd);
            if sigma < 0.0 {
                log::warn!("event {index}: unprofitable-incentive record (sigma {sigma})");
            }
            Some(SigmaFit {
                index,
                timestamp: e.timestamp,
                sigma,
                unprofitable: sigma < 0.0,
            })
        })
        .collect()
}

/// Which constraint set a historical repay size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Optimum,
    ClosingFactor,
    Collateral,
}

/// `ClosingFactor` when `q` is within `tolerance` of `c·B`, `Collateral` when
/// `(1+i)q` is within `tolerance` of `C`, `Optimum` otherwise.
pub fn classify_binding(
    record: &LiquidationRecord,
    state: &EventState,
    closing_factor: f64,
    tolerance: f64,
) -> Binding {
    let close_cap = closing_factor * state.debt_before;
    let seized = (1.0 + record.incentive) * record.repaid_usd;
    if close_cap > 0.0 && (record.repaid_usd - close_cap).abs() <= tolerance * close_cap {
        Binding::ClosingFactor
    } else if state.collateral_before > 0.0
        && (seized - state.collateral_before).abs() <= tolerance * state.collateral_before
    {
        Binding::Collateral
    } else {
        Binding::Optimum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub median_before: Option<f64>,
    pub median_after: Option<f64>,
    pub median_all: f64,
}

/// Lower-middle medians of the `split == false` subset, the `split == true`
/// subset and the full set.
pub fn sigma_summary(sigmas: &[f64], split: &[bool]) -> Result<SigmaSummary, ReplayError> {
    let median_all = lower_median(sigmas).ok_or(ReplayError::EmptySigmas)?;
    let pick = |side: bool| -> Vec<f64> {
        sigmas
            .iter()
            .zip(split)
            .filter(|(_, s)| **s == side)
            .map(|(v, _)| *v)
            .collect()
    };
    Ok(SigmaSummary {
        median_before: lower_median(&pick(false)),
        median_after: lower_median(&pick(true)),
        median_all,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRecord {
    pub index: usize,
    pub timestamp: i64,
    pub reason: String,
}

/// σ-fit output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub gamma: f64,
    pub liquidity: f64,
    pub frontier: f64,
    pub first_crossing: Option<i64>,
    pub total_events: usize,
    pub fitted: usize,
    pub count_before: usize,
    pub count_after: usize,
    pub summary: Option<SigmaSummary>,
    pub unprofitable: usize,
    /// Fitted values above the display cutoff; they are kept in the data.
    pub above_cutoff: usize,
    pub footnote: Option<String>,
    pub excluded: Vec<ExcludedRecord>,
    #[serde(skip)]
    pub fits: Vec<SigmaFit>,
    #[serde(skip)]
    pub after_crossing: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaFitOptions {
    pub gamma: f64,
    pub liquidity: f64,
    pub closing_factor: f64,
    pub tolerance: f64,
    /// Fit constraint-bound records too.
    pub include_all: bool,
    pub frontier: f64,
}

/// Fits σ to the optimum-bound records of a replay and splits them at the
/// first time the trace crosses the frontier.
pub fn sigma_report(
    events: &[LiquidationRecord],
    trace: &ReplayTrace,
    opts: &SigmaFitOptions,
) -> SigmaReport {
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    let mut kept_index = Vec::new();
    for (record, state) in events.iter().zip(&trace.events) {
        let binding = classify_binding(record, state, opts.closing_factor, opts.tolerance);
        if binding != Binding::Optimum && !opts.include_all {
            excluded.push(ExcludedRecord {
                index: state.index,
                timestamp: state.timestamp,
                reason: format!("{binding:?}-bound"),
            });
        } else {
            kept.push(*record);
            kept_index.push(state.index);
        }
    }
    let mut fits = fit_sigma(&kept, opts.gamma, opts.liquidity);
    for f in &mut fits {
        f.index = kept_index[f.index];
    }
    for (index, e) in events.iter().enumerate() {
        if e.repaid_usd <= 0.0 && !excluded.iter().any(|x| x.index == index) {
            excluded.push(ExcludedRecord {
                index,
                timestamp: e.timestamp,
                reason: "zero repayment".into(),
            });
        }
    }
    excluded.sort_by_key(|x| x.index);

    let crossing = trace.first_crossing(opts.frontier);
    let after: Vec<bool> = fits
        .iter()
        .map(|f| crossing.is_some_and(|t| f.timestamp >= t))
        .collect();
    let sigmas: Vec<f64> = fits.iter().map(|f| f.sigma).collect();
    let summary = sigma_summary(&sigmas, &after).ok();
    let above_cutoff = sigmas.iter().filter(|s| **s > SIGMA_DISPLAY_CUTOFF).count();
    let footnote = if events.is_empty() {
        Some("no events".to_string())
    } else if above_cutoff > 0 {
        Some(format!(
            "{above_cutoff} values above sigma = {SIGMA_DISPLAY_CUTOFF} (out of {} fitted)",
            fits.len()
        ))
    } else {
        None
    };
    SigmaReport {
        gamma: opts.gamma,
        liquidity: opts.liquidity,
        frontier: opts.frontier,
        first_crossing: crossing,
        total_events: events.len(),
        fitted: fits.len(),
        count_before: after.iter().filter(|a| !**a).count(),
        count_after: after.iter().filter(|a| **a).count(),
        summary,
        unprofitable: fits.iter().filter(|f| f.unprofitable).count(),
        above_cutoff,
        footnote,
        excluded,
        fits,
        after_crossing: after,
    }
}
