use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use liqspiral::report::{
    read_bins, read_dltv, read_json, read_series, read_sigma, read_trace, series_file_name,
    FinalTable, ReplayDocument, SigmaDocument, SimulationDocument, DLTV_CSV, DLTV_HISTOGRAM_CSV,
    FINAL_CSV, HISTOGRAM_CSV, REPLAY_JSON, REPORT_JSON, SIGMA_CSV, SIGMA_JSON, TRACE_CSV,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liqspiral"))
}

fn demo(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../demo")
        .join(file)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FLAT: &str = r#"
seed = 1
horizon = 60
[portfolio]
collateral = [{ asset = "USDC", value = 100.0, threshold = 0.89 }]
debt = [{ asset = "CRV", value = 80.0 }]
[trajectories]
source = "synthetic"
sigma_step = 0.0
count = 8
"#;

#[test]
fn frontier_prints_six_decimals() {
    for (arg, want) in [
        ("0.045", "0.956938"),
        ("0", "1.000000"),
        ("0.10", "0.909091"),
    ] {
        let o = run(&["frontier", arg]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), want);
    }
    let o = run(&["frontier", "-0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-negative"));
}

#[test]
fn flat_simulation_reports_zero_bad_debt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flat.toml");
    fs::write(&cfg, FLAT).unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(&cols[1..], ["0.00", "0.0000", "0.00", "0.00"], "{row}");
    }
    let doc: SimulationDocument = read_json(&dir.path().join("out").join(REPORT_JSON)).unwrap();
    assert_eq!(doc.report.trajectories, 8);
    assert_eq!(doc.provenance.seed, Some(1));
    assert_eq!(doc.provenance.config_sha256.len(), 64);
}

#[test]
fn demo_simulation_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    let o = bin()
        .arg("simulate")
        .arg(demo("demo.toml"))
        .args(["--seed", "3", "--out-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let doc: SimulationDocument = read_json(&out.join(REPORT_JSON)).unwrap();
    assert_eq!(doc.provenance.seed, Some(3));
    assert_eq!(doc.report.trajectories, 200);
    assert_eq!(doc.report.policies.len(), 4);
    let series_files = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("series_")
        })
        .count();
    assert_eq!(series_files, 4);

    let finals = FinalTable::read(File::open(out.join(FINAL_CSV)).unwrap()).unwrap();
    assert_eq!(finals.rows.len(), 200);
    assert!(finals
        .rows
        .iter()
        .enumerate()
        .all(|(k, r)| r.reversed == (k % 2 == 1)));
    let bins = read_bins(File::open(out.join(HISTOGRAM_CSV)).unwrap()).unwrap();
    for p in &doc.report.policies {
        let rows = read_series(File::open(out.join(series_file_name(&p.label))).unwrap()).unwrap();
        assert_eq!(rows.len(), 1440);
        assert_eq!(rows.iter().map(|r| r.mean).collect::<Vec<_>>(), p.mean);
        assert_eq!(rows.iter().map(|r| r.lower).collect::<Vec<_>>(), p.lower);
        assert!(rows.iter().all(|r| r.lower <= r.mean && r.mean <= r.upper));

        let col = finals.column(&p.label).unwrap();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert!((mean - p.mean_final).abs() <= 1e-9 * p.mean_final.max(1.0));
        let total: usize = bins
            .iter()
            .filter(|b| b.group == p.label)
            .map(|b| b.count)
            .sum();
        assert_eq!(total, 200);
    }
}

#[test]
fn missing_price_file_exits_3_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hist.toml");
    let text = FLAT.replace(
        "source = \"synthetic\"\nsigma_step = 0.0\ncount = 8",
        "source = \"historical\"\npath = \"missing_prices.csv\"\ndraws = 4",
    );
    fs::write(&cfg, text).unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing_prices.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_price_row_exits_3_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("timestamp,open,high,low,close,volume\n");
    for k in 0..80 {
        csv.push_str(&format!("{},1,1,1,1,0\n", 60 * k));
    }
    csv.push_str("4800,1,1,1,oops,0\n");
    fs::write(dir.path().join("p.csv"), csv).unwrap();
    let text = FLAT.replace(
        "source = \"synthetic\"\nsigma_step = 0.0\ncount = 8",
        "source = \"historical\"\npath = \"p.csv\"\ndraws = 4",
    );
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, text).unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row 81"), "{}", stderr(&o));
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, format!("{FLAT}\nunexpected = true\n")).unwrap();
    assert_eq!(
        run(&["simulate", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    fs::write(&cfg, FLAT.replace("\"synthetic\"", "\"telepathic\"")).unwrap();
    assert_eq!(
        run(&["simulate", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    fs::write(
        &cfg,
        format!("{FLAT}\n[[policy]]\nkind = \"toxic_baseline\"\nc0 = 2.0\n"),
    )
    .unwrap();
    assert_eq!(
        run(&["simulate", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "/nonexistent/config.toml"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
}

#[test]
fn replay_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("replay")
        .arg(demo("replay.toml"))
        .args(["--frontier", "0.9569", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let trace = read_trace(File::open(dir.path().join(TRACE_CSV)).unwrap()).unwrap();
    let event_points: Vec<_> = trace.iter().filter(|r| r.cause == "event").collect();
    assert_eq!(event_points.len(), 6);
    // each event is a jump relative to the preceding point
    for (k, row) in trace.iter().enumerate().skip(1) {
        if row.cause == "event" {
            assert_ne!(row.ltv, trace[k - 1].ltv);
            assert_eq!(row.timestamp % 60, 17);
        }
    }

    let dltv = read_dltv(File::open(dir.path().join(DLTV_CSV)).unwrap()).unwrap();
    let sides: Vec<&str> = dltv.iter().map(|r| r.side.as_str()).collect();
    assert_eq!(
        sides,
        ["below", "below", "below", "above", "above", "above"]
    );
    assert!(dltv
        .iter()
        .all(|r| (r.relative_change < 0.0) == (r.side == "below")));
    let hist = read_bins(File::open(dir.path().join(DLTV_HISTOGRAM_CSV)).unwrap()).unwrap();
    assert_eq!(
        hist.iter()
            .filter(|b| b.group == "above")
            .map(|b| b.count)
            .sum::<usize>(),
        3
    );

    let sigma = read_sigma(File::open(dir.path().join(SIGMA_CSV)).unwrap()).unwrap();
    assert_eq!(sigma.len(), 6);
    let doc: SigmaDocument = read_json(&dir.path().join(SIGMA_JSON)).unwrap();
    let s = doc.sigma.summary.unwrap();
    assert!((s.median_before.unwrap() - 3.0).abs() < 1e-9);
    assert!((s.median_after.unwrap() - 20.0).abs() < 1e-9);
    assert!((s.median_all - 5.0).abs() < 1e-9);
    let rd: ReplayDocument = read_json(&dir.path().join(REPLAY_JSON)).unwrap();
    assert_eq!((rd.below_frontier, rd.above_frontier), (3, 3));
    assert_eq!(rd.frontier, 0.9569);
}

fn replay_dir(events: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(
        demo("replay_prices.csv"),
        dir.path().join("replay_prices.csv"),
    )
    .unwrap();
    fs::write(dir.path().join("replay_events.csv"), events).unwrap();
    fs::copy(demo("replay.toml"), dir.path().join("replay.toml")).unwrap();
    dir
}

#[test]
fn replay_without_events() {
    let dir = replay_dir("timestamp,repaid_usd,seized_usd,incentive,block\n");
    let o = run(&["replay", dir.path().join("replay.toml").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("no events"));
    let out = dir.path().join("out/replay");
    let trace = read_trace(File::open(out.join(TRACE_CSV)).unwrap()).unwrap();
    assert_eq!(trace.len(), 40);
    assert!(trace.iter().all(|r| r.cause != "event"));
    let doc: SigmaDocument = read_json(&out.join(SIGMA_JSON)).unwrap();
    assert_eq!(doc.sigma.footnote.as_deref(), Some("no events"));
    assert!(doc.sigma.summary.is_none());
}

#[test]
fn replay_malformed_event_row() {
    let dir = replay_dir(
        "timestamp,repaid_usd,seized_usd,incentive\n1667261537,100,104.5,0.045\n1667261600,100,not-a-number,0.045\n",
    );
    let o = run(&["replay", dir.path().join("replay.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn replay_overdrain_names_event() {
    let dir =
        replay_dir("timestamp,repaid_usd,seized_usd,incentive\n1667261537,1e8,1.045e8,0.045\n");
    let o = run(&["replay", dir.path().join("replay.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("event 0 at 1667261537"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn fit_slippage_writes_sigma_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("fit-slippage")
        .arg(demo("replay.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join(SIGMA_JSON).exists());
    assert!(!dir.path().join(TRACE_CSV).exists());
    let rows = read_sigma(File::open(dir.path().join(SIGMA_CSV)).unwrap()).unwrap();
    let mut fitted: Vec<f64> = rows.iter().map(|r| (r.sigma * 1e6).round() / 1e6).collect();
    fitted.sort_by(f64::total_cmp);
    assert_eq!(fitted, [1.0, 3.0, 5.0, 10.0, 20.0, 40.0]);
}
