//! Regenerates the bundled demo data.
//!
//! ```text
//! cargo run --example make_fixtures -- demo
//! ```
//!
//! Writes a two-week CRV-like minute series with four engineered pumps, plus
//! a short price series and six liquidation records for the replay demo.

use std::fs::File;
use std::path::PathBuf;

use liqspiral::price::{Bar, PriceSeries};
use liqspiral::replay::{write_events, LiquidationRecord};
use liqspiral::{Portfolio, SlippageModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const START: i64 = 1_667_260_800; // 2022-11-01T00:00:00Z
const MINUTES: usize = 14 * 1440;
const PUMP_STARTS: [usize; 4] = [3_180, 7_000, 11_500, 16_000];
const PUMP_LOG: f64 = 0.25;
const PLATEAU: usize = 30;
const REVERSION: usize = 180;

fn crv_like() -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(20221122);
    let noise = Normal::<f64>::new(0.0, 8e-4).unwrap();
    let mut log_ret: Vec<f64> = (0..MINUTES).map(|_| noise.sample(&mut rng)).collect();
    for &s in &PUMP_STARTS {
        log_ret[s] += PUMP_LOG;
        for r in &mut log_ret[s + PLATEAU..s + PLATEAU + REVERSION] {
            *r -= PUMP_LOG / REVERSION as f64;
        }
    }
    let volume = Normal::<f64>::new(0.0, 0.5).unwrap();
    let mut price: f64 = 0.55;
    let mut bars = Vec::with_capacity(MINUTES + 1);
    bars.push(Bar {
        timestamp: START,
        open: price,
        high: price,
        low: price,
        close: price,
        volume: 2e5,
    });
    for (k, r) in log_ret.iter().enumerate() {
        let open = price;
        price *= r.exp();
        let wick = 1.0 + 2e-4 * noise.sample(&mut rng).abs() / 8e-4;
        bars.push(Bar {
            timestamp: START + 60 * (k as i64 + 1),
            open,
            high: open.max(price) * wick,
            low: open.min(price) / wick,
            close: price,
            volume: 2e5 * volume.sample(&mut rng).exp(),
        });
    }
    PriceSeries::new(bars).unwrap()
}

/// 40-minute CRV path: flat, a rise toward the frontier, a pump past it.
fn replay_prices() -> PriceSeries {
    let closes: Vec<f64> = (0..40)
        .map(|k| match k {
            0..=9 => 0.50,
            10..=19 => 0.51 + 0.002 * (k - 10) as f64,
            20..=24 => 0.535,
            _ => 0.545,
        })
        .collect();
    PriceSeries::from_closes(START, &closes).unwrap()
}

/// Six events sized as the profit-optimal repay for chosen slippage
/// factors: three before the frontier crossing and three after.
fn replay_events(prices: &PriceSeries) -> Vec<LiquidationRecord> {
    let incentive = 0.045;
    let plan = [
        (12, 5.0),
        (16, 1.0),
        (19, 3.0),
        (26, 10.0),
        (30, 40.0),
        (35, 20.0),
    ];
    let mut p = Portfolio::new([("USDC", 90e6, 0.89)], [("CRV", 80.1e6)]).unwrap();
    let base = prices.bars()[0].close;
    let mut out = Vec::new();
    for (minute, sigma) in plan {
        let ts = START + 60 * minute + 17;
        let close = prices.close_at(ts).unwrap();
        p.set_debt_price(None, close / base).unwrap();
        let model = SlippageModel::new(0.003, sigma, 190e6).unwrap();
        let q = model.q_opt(incentive).unwrap();
        let seized = (1.0 + incentive) * q;
        p.repay(q);
        p.seize(seized);
        out.push(LiquidationRecord {
            timestamp: ts,
            repaid_usd: q,
            seized_usd: seized,
            incentive,
            block: Some(15_870_000 + 5 * minute as u64),
        });
    }
    out
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir).unwrap();
    crv_like()
        .write_csv(File::create(dir.join("crv_usdc_1m.csv")).unwrap())
        .unwrap();
    let prices = replay_prices();
    prices
        .write_csv(File::create(dir.join("replay_prices.csv")).unwrap())
        .unwrap();
    write_events(
        &replay_events(&prices),
        File::create(dir.join("replay_events.csv")).unwrap(),
    )
    .unwrap();
    println!("fixtures written to {}", dir.display());
}
