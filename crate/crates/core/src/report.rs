//! Output documents and CSV files, with parsers for every CSV written.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::{BadDebtReport, Histogram};
use crate::price::PriceSeries;
use crate::replay::{
    dltv_distribution, relative_change, ReplayTrace, SigmaReport, TraceCause, UniformHistogram,
};

pub const REPORT_JSON: &str = "report.json";
pub const FINAL_CSV: &str = "final_bad_debt.csv";
pub const HISTOGRAM_CSV: &str = "histograms.csv";
pub const TRACE_CSV: &str = "ltv_trace.csv";
pub const DLTV_CSV: &str = "dltv_events.csv";
pub const DLTV_HISTOGRAM_CSV: &str = "dltv_histograms.csv";
pub const SIGMA_CSV: &str = "sigma.csv";
pub const SIGMA_JSON: &str = "sigma.json";
pub const REPLAY_JSON: &str = "replay.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unexpected header: {0}")]
    Header(String),
}

pub fn series_file_name(label: &str) -> String {
    format!("series_{label}.csv")
}

/// Reproducibility stamp carried by every JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(config_sha256: &str, seed: Option<u64>) -> Self {
        Self {
            config_sha256: config_sha256.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDocument {
    pub provenance: Provenance,
    pub report: BadDebtReport,
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn open(path: &Path) -> Result<File, ReportError> {
    File::open(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(
        path,
    )?))?)
}

fn write_rows<W: Write, S: Serialize>(
    writer: W,
    rows: impl IntoIterator<Item = S>,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: "<csv>".into(),
        source,
    })
}

fn read_rows<R: Read, S: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<S>, ReportError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(ReportError::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn series_rows(mean: &[f64], lower: &[f64], upper: &[f64]) -> Vec<SeriesRow> {
    (0..mean.len())
        .map(|k| SeriesRow {
            step: k + 1,
            mean: mean[k],
            lower: lower[k],
            upper: upper[k],
        })
        .collect()
}

pub fn write_series<W: Write>(rows: &[SeriesRow], w: W) -> Result<(), ReportError> {
    write_rows(w, rows)
}

pub fn read_series<R: Read>(r: R) -> Result<Vec<SeriesRow>, ReportError> {
    read_rows(r)
}

/// Per-trajectory final bad debt, one value column per policy label.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalTable {
    pub labels: Vec<String>,
    pub rows: Vec<FinalRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalRow {
    pub trajectory_id: usize,
    pub reversed: bool,
    pub values: Vec<f64>,
}

impl FinalTable {
    pub fn from_report(report: &BadDebtReport) -> Self {
        let labels = report.policies.iter().map(|p| p.label.clone()).collect();
        let rows = (0..report.trajectories)
            .map(|k| FinalRow {
                trajectory_id: k,
                reversed: report.reversed.get(k).copied().unwrap_or(false),
                values: report.policies.iter().map(|p| p.final_samples[k]).collect(),
            })
            .collect();
        Self { labels, rows }
    }

    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["trajectory_id".to_string(), "reversed".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.trajectory_id.to_string(), r.reversed.to_string()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| ReportError::Io {
            path: "<csv>".into(),
            source,
        })
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "trajectory_id" || &header[1] != "reversed" {
            return Err(ReportError::Header(
                header.iter().collect::<Vec<_>>().join(","),
            ));
        }
        let labels: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let (id, rev, vals): (usize, bool, Vec<f64>) = rec.deserialize(None)?;
            rows.push(FinalRow {
                trajectory_id: id,
                reversed: rev,
                values: vals,
            });
        }
        Ok(Self { labels, rows })
    }
}

/// One histogram bin; the zero bin of a bad-debt histogram has `lower = upper = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

pub fn bad_debt_bins(label: &str, h: &Histogram) -> Vec<BinRow> {
    let mut rows = vec![BinRow {
        group: label.to_string(),
        lower: 0.0,
        upper: 0.0,
        count: h.zero_count,
    }];
    rows.extend(h.counts.iter().enumerate().map(|(k, &count)| BinRow {
        group: label.to_string(),
        lower: h.edges[k],
        upper: h.edges[k + 1],
        count,
    }));
    rows
}

pub fn uniform_bins(group: &str, h: &UniformHistogram) -> Vec<BinRow> {
    h.counts
        .iter()
        .enumerate()
        .map(|(k, &count)| BinRow {
            group: group.to_string(),
            lower: h.edges[k],
            upper: h.edges[k + 1],
            count,
        })
        .collect()
}

pub fn write_bins<W: Write>(rows: &[BinRow], w: W) -> Result<(), ReportError> {
    write_rows(w, rows)
}

pub fn read_bins<R: Read>(r: R) -> Result<Vec<BinRow>, ReportError> {
    read_rows(r)
}

/// Writes the JSON report, one series CSV per policy, the final-sample
/// table and the histogram table; returns the paths written.
pub fn write_simulation(dir: &Path, doc: &SimulationDocument) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let path = dir.join(REPORT_JSON);
    write_json(&path, doc)?;
    written.push(path);
    let mut bins = Vec::new();
    for p in &doc.report.policies {
        let path = dir.join(series_file_name(&p.label));
        write_series(&series_rows(&p.mean, &p.lower, &p.upper), create(&path)?)?;
        written.push(path);
        bins.extend(bad_debt_bins(&p.label, &p.histogram));
    }
    let path = dir.join(FINAL_CSV);
    FinalTable::from_report(&doc.report).write(create(&path)?)?;
    written.push(path);
    let path = dir.join(HISTOGRAM_CSV);
    write_bins(&bins, create(&path)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp: i64,
    /// `inf` once the collateral is exhausted.
    pub ltv: f64,
    /// Debt-asset close in effect at the point.
    pub close: f64,
    pub cause: String,
    pub event_index: Option<usize>,
}

pub fn trace_rows(trace: &ReplayTrace, prices: &PriceSeries) -> Vec<TraceRow> {
    let bars = prices.bars();
    let mut bar = 0;
    trace
        .points
        .iter()
        .map(|p| {
            while bar + 1 < bars.len() && bars[bar + 1].timestamp <= p.timestamp {
                bar += 1;
            }
            let (cause, event_index) = match p.cause {
                TraceCause::Start => ("start", None),
                TraceCause::Price => ("price", None),
                TraceCause::Event(k) => ("event", Some(k)),
            };
            TraceRow {
                timestamp: p.timestamp,
                ltv: p.ltv,
                close: bars[bar].close,
                cause: cause.to_string(),
                event_index,
            }
        })
        .collect()
}

pub fn write_trace<W: Write>(rows: &[TraceRow], w: W) -> Result<(), ReportError> {
    write_rows(w, rows)
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, ReportError> {
    read_rows(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DltvRow {
    pub index: usize,
    pub timestamp: i64,
    pub ltv_before: f64,
    pub ltv_after: f64,
    pub relative_change: f64,
    /// `below` or `above` the frontier.
    pub side: String,
}

pub fn dltv_rows(trace: &ReplayTrace, frontier: f64) -> Vec<DltvRow> {
    trace
        .events
        .iter()
        .map(|e| DltvRow {
            index: e.index,
            timestamp: e.timestamp,
            ltv_before: e.ltv_before,
            ltv_after: e.ltv_after,
            relative_change: relative_change(e.ltv_before, e.ltv_after),
            side: if e.ltv_before > frontier {
                "above"
            } else {
                "below"
            }
            .to_string(),
        })
        .collect()
}

pub fn write_dltv<W: Write>(rows: &[DltvRow], w: W) -> Result<(), ReportError> {
    write_rows(w, rows)
}

pub fn read_dltv<R: Read>(r: R) -> Result<Vec<DltvRow>, ReportError> {
    read_rows(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub index: usize,
    pub timestamp: i64,
    pub sigma: f64,
    /// `before` or `after` the first frontier crossing.
    pub split: String,
    pub unprofitable: bool,
}

pub fn sigma_rows(report: &SigmaReport) -> Vec<SigmaRow> {
    report
        .fits
        .iter()
        .zip(&report.after_crossing)
        .map(|(f, &after)| SigmaRow {
            index: f.index,
            timestamp: f.timestamp,
            sigma: f.sigma,
            split: if after { "after" } else { "before" }.to_string(),
            unprofitable: f.unprofitable,
        })
        .collect()
}

pub fn write_sigma<W: Write>(rows: &[SigmaRow], w: W) -> Result<(), ReportError> {
    write_rows(w, rows)
}

pub fn read_sigma<R: Read>(r: R) -> Result<Vec<SigmaRow>, ReportError> {
    read_rows(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDocument {
    pub provenance: Provenance,
    pub sigma: SigmaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDocument {
    pub provenance: Provenance,
    pub frontier: f64,
    pub points: usize,
    pub events: usize,
    pub below_frontier: usize,
    pub above_frontier: usize,
    pub first_crossing: Option<i64>,
}

pub fn write_sigma_outputs(dir: &Path, doc: &SigmaDocument) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let json = dir.join(SIGMA_JSON);
    write_json(&json, doc)?;
    let csv_path = dir.join(SIGMA_CSV);
    write_sigma(&sigma_rows(&doc.sigma), create(&csv_path)?)?;
    Ok(vec![json, csv_path])
}

/// Writes the trace, ΔLTV tables and σ fit for one replay.
pub fn write_replay(
    dir: &Path,
    provenance: &Provenance,
    trace: &ReplayTrace,
    prices: &PriceSeries,
    frontier: f64,
    bins: usize,
    sigma: &SigmaReport,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = write_sigma_outputs(
        dir,
        &SigmaDocument {
            provenance: provenance.clone(),
            sigma: sigma.clone(),
        },
    )?;
    let path = dir.join(TRACE_CSV);
    write_trace(&trace_rows(trace, prices), create(&path)?)?;
    written.push(path);

    let rows = dltv_rows(trace, frontier);
    let path = dir.join(DLTV_CSV);
    write_dltv(&rows, create(&path)?)?;
    written.push(path);

    let d = dltv_distribution(trace, frontier, bins);
    let mut hist = uniform_bins("below", &d.below_hist);
    hist.extend(uniform_bins("above", &d.above_hist));
    let path = dir.join(DLTV_HISTOGRAM_CSV);
    write_bins(&hist, create(&path)?)?;
    written.push(path);

    let path = dir.join(REPLAY_JSON);
    write_json(
        &path,
        &ReplayDocument {
            provenance: provenance.clone(),
            frontier,
            points: trace.points.len(),
            events: trace.events.len(),
            below_frontier: d.below.len(),
            above_frontier: d.above.len(),
            first_crossing: trace.first_crossing(frontier),
        },
    )?;
    written.push(path);
    Ok(written)
}
