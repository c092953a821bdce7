//! Policy-comparison experiment over a trajectory set.
//!
//! Every `(trajectory, policy)` pair is simulated independently. Per-step
//! bad debt is the instantaneous shortfall while collateral remains; once
//! the collateral is exhausted the leftover debt is written off into a
//! frozen realized total. Aggregation is a sequential fold in trajectory-id
//! order, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liquidation::{liquidate_in_place, CascadeLimits};
use crate::market::{AssetId, MarketError, Portfolio};
use crate::policy::{PolicyConfig, PolicyError, PolicyKind};
use crate::price::Trajectory;
use crate::scalar::Scalar;
use crate::slippage::{SlippageError, SlippageModel};

pub const HISTOGRAM_BINS: usize = 50;
pub const Z_95: f64 = 1.96;
/// Trajectories simulated per parallel batch before folding.
const BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("trajectory set is empty")]
    NoTrajectories,
    #[error("at least one policy is required")]
    NoPolicies,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("trajectory {id} has {got} steps, expected {horizon}")]
    HorizonMismatch {
        id: usize,
        got: usize,
        horizon: usize,
    },
    #[error("price asset {0} is not a debt position of the portfolio")]
    UnknownAsset(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Slippage(#[from] SlippageError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions<T> {
    /// Debt asset driven by the trajectory; `None` moves every debt position.
    pub price_asset: Option<AssetId>,
    pub limits: CascadeLimits<T>,
}

impl<T: Scalar> Default for SimOptions<T> {
    fn default() -> Self {
        Self {
            price_asset: None,
            limits: CascadeLimits::default(),
        }
    }
}

/// Bad-debt series for one trajectory under one policy.
pub fn simulate_trajectory<T: Scalar>(
    p0: &Portfolio<T>,
    policy: &PolicyConfig<T>,
    model: &SlippageModel<T>,
    trajectory: &Trajectory,
) -> Vec<T> {
    simulate_trajectory_with(p0, policy, model, trajectory, &SimOptions::default())
}

pub fn simulate_trajectory_with<T: Scalar>(
    p0: &Portfolio<T>,
    policy: &PolicyConfig<T>,
    model: &SlippageModel<T>,
    trajectory: &Trajectory,
    opts: &SimOptions<T>,
) -> Vec<T> {
    let mut p = p0.clone();
    let mut realized = T::zero();
    let mut out = Vec::with_capacity(trajectory.len());
    for &factor in &trajectory.factors {
        // Multipliers stay positive for positive factors; a rejected update
        // leaves the price unchanged.
        let _ = p.scale_debt_price(opts.price_asset.as_ref(), T::lit(factor));
        liquidate_in_place(&mut p, policy, model, &opts.limits);
        if p.total_collateral() <= T::zero() && p.total_debt() > T::zero() {
            realized = realized + p.write_off_debt();
        }
        out.push(realized + p.shortfall());
    }
    out
}

/// Everything `run_experiment` needs besides the trajectories.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub portfolio: Portfolio<f64>,
    pub policies: Vec<PolicyConfig<f64>>,
    pub slippage: SlippageModel<f64>,
    pub horizon: usize,
    pub sim: SimOptions<f64>,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.horizon == 0 {
            return Err(ExperimentError::ZeroHorizon);
        }
        if self.policies.is_empty() {
            return Err(ExperimentError::NoPolicies);
        }
        for p in &self.policies {
            p.validate()?;
        }
        self.slippage.validate()?;
        if let Some(asset) = &self.sim.price_asset {
            if !self.portfolio.debt().iter().any(|d| d.asset == *asset) {
                return Err(ExperimentError::UnknownAsset(asset.to_string()));
            }
        }
        Ok(())
    }
}

/// End-of-horizon histogram with a dedicated zero bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub zero_count: usize,
    /// `HISTOGRAM_BINS + 1` edges spanning `(0, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        let zero_count = samples.iter().filter(|v| **v <= 0.0).count();
        let max = samples.iter().copied().fold(0.0_f64, f64::max);
        let edges: Vec<f64> = (0..=bins).map(|k| max * k as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        if max > 0.0 {
            for &v in samples.iter().filter(|v| **v > 0.0) {
                let k = ((v / max) * bins as f64).ceil() as usize;
                counts[k.clamp(1, bins) - 1] += 1;
            }
        }
        Self {
            zero_count,
            edges,
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.zero_count + self.counts.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub i0: f64,
    pub c0: f64,
    pub epsilon: f64,
    pub ltv_liq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub label: String,
    pub kind: PolicyKind,
    pub params: PolicyParams,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean_final: f64,
    pub median_final: f64,
    /// Fraction of trajectories ending with nonzero bad debt.
    pub prob_bad_debt: f64,
    /// Mean final bad debt over trajectories that have some.
    pub tail_mean: f64,
    pub histogram: Histogram,
    /// Final bad debt per trajectory, in trajectory-id order.
    #[serde(skip)]
    pub final_samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadDebtReport {
    pub horizon: usize,
    pub trajectories: usize,
    pub policies: Vec<PolicyReport>,
    /// Reversal flag per trajectory, in id order.
    #[serde(skip)]
    pub reversed: Vec<bool>,
}

impl BadDebtReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.label == label)
    }

    pub fn by_kind(&self, kind: PolicyKind) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.kind == kind)
    }
}

/// Running per-step mean and squared deviations (Welford).
struct SeriesAccumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    finals: Vec<f64>,
}

impl SeriesAccumulator {
    fn new(horizon: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; horizon],
            m2: vec![0.0; horizon],
            finals: Vec::new(),
        }
    }

    fn push(&mut self, series: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(series) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        self.finals.push(series.last().copied().unwrap_or(0.0));
    }

    fn band(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        self.mean
            .iter()
            .zip(&self.m2)
            .map(|(&m, &s)| {
                let sd = if self.n > 1 {
                    (s / (n - 1.0)).max(0.0).sqrt()
                } else {
                    0.0
                };
                let half = Z_95 * sd / n.sqrt();
                (m - half, m + half)
            })
            .unzip()
    }
}

/// Labels policies by kind, suffixing repeats (`toxic_baseline`, `toxic_baseline_2`, ...).
pub fn policy_labels(policies: &[PolicyConfig<f64>]) -> Vec<String> {
    let mut labels = Vec::with_capacity(policies.len());
    for (k, p) in policies.iter().enumerate() {
        let seen = policies[..k].iter().filter(|q| q.kind == p.kind).count();
        labels.push(if seen == 0 {
            p.kind.name().to_string()
        } else {
            format!("{}_{}", p.kind.name(), seen + 1)
        });
    }
    labels
}

/// Lower-middle median.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

pub fn run_experiment(
    scenario: &ScenarioConfig,
    trajectories: &[Trajectory],
) -> Result<BadDebtReport, ExperimentError> {
    scenario.validate()?;
    if trajectories.is_empty() {
        return Err(ExperimentError::NoTrajectories);
    }
    for t in trajectories {
        if t.len() != scenario.horizon {
            return Err(ExperimentError::HorizonMismatch {
                id: t.id,
                got: t.len(),
                horizon: scenario.horizon,
            });
        }
    }
    let mut ordered: Vec<&Trajectory> = trajectories.iter().collect();
    ordered.sort_by_key(|t| t.id);

    let mut builder = rayon::ThreadPoolBuilder::new();
    if scenario.workers > 0 {
        builder = builder.num_threads(scenario.workers);
    }
    let pool = builder
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let mut accs: Vec<SeriesAccumulator> = scenario
        .policies
        .iter()
        .map(|_| SeriesAccumulator::new(scenario.horizon))
        .collect();

    for batch in ordered.chunks(BATCH) {
        let results: Vec<Vec<Vec<f64>>> = pool.install(|| {
            batch
                .par_iter()
                .map(|t| {
                    scenario
                        .policies
                        .iter()
                        .map(|policy| {
                            simulate_trajectory_with(
                                &scenario.portfolio,
                                policy,
                                &scenario.slippage,
                                t,
                                &scenario.sim,
                            )
                        })
                        .collect()
                })
                .collect()
        });
        for per_policy in &results {
            for (acc, series) in accs.iter_mut().zip(per_policy) {
                acc.push(series);
            }
        }
    }

    let labels = policy_labels(&scenario.policies);
    let policies = accs
        .into_iter()
        .zip(&scenario.policies)
        .zip(labels)
        .map(|((acc, cfg), label)| {
            let (lower, upper) = acc.band();
            let n = acc.finals.len() as f64;
            let positive: Vec<f64> = acc.finals.iter().copied().filter(|v| *v > 0.0).collect();
            let tail_mean = if positive.is_empty() {
                0.0
            } else {
                positive.iter().sum::<f64>() / positive.len() as f64
            };
            PolicyReport {
                label,
                kind: cfg.kind,
                params: PolicyParams {
                    i0: cfg.i0,
                    c0: cfg.c0,
                    epsilon: cfg.epsilon,
                    ltv_liq: cfg.ltv_liq,
                },
                mean_final: acc.finals.iter().sum::<f64>() / n,
                median_final: lower_median(&acc.finals).unwrap_or(0.0),
                prob_bad_debt: positive.len() as f64 / n,
                tail_mean,
                histogram: Histogram::from_samples(&acc.finals, HISTOGRAM_BINS),
                mean: acc.mean,
                lower,
                upper,
                final_samples: acc.finals,
            }
        })
        .collect();

    Ok(BadDebtReport {
        horizon: scenario.horizon,
        trajectories: ordered.len(),
        policies,
        reversed: ordered.iter().map(|t| t.reversed).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::uc_frontier;

    fn portfolio(c: f64, b: f64) -> Portfolio<f64> {
        Portfolio::new([("USDC", c, 0.89)], [("CRV", b)]).unwrap()
    }

    fn all_policies() -> Vec<PolicyConfig<f64>> {
        PolicyKind::ALL
            .iter()
            .map(|k| PolicyConfig::new(*k))
            .collect()
    }

    #[test]
    fn flat_healthy_path_has_no_bad_debt() {
        let p = portfolio(100e6, 80e6);
        for cfg in all_policies() {
            let s = simulate_trajectory(
                &p,
                &cfg,
                &SlippageModel::default(),
                &Trajectory::flat(0, 100),
            );
            assert!(s.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn flat_toxic_path_exhausts_to_closed_form() {
        let p = portfolio(100.0, 97.0);
        let cfg = PolicyConfig::new(PolicyKind::ToxicBaseline);
        let s = simulate_trajectory(
            &p,
            &cfg,
            &SlippageModel::frictionless(),
            &Trajectory::flat(0, 20),
        );
        let expected: f64 = 97.0 - 100.0 / 1.045;
        assert!((expected - 1.3062).abs() < 1e-4);
        assert!(s.iter().all(|v| (v - expected).abs() <= 1e-9 * expected));
    }

    #[test]
    fn flat_toxic_path_halted_stays_clean() {
        let p = portfolio(100.0, 97.0);
        let cfg = PolicyConfig::new(PolicyKind::HaltAboveUc);
        let s = simulate_trajectory(
            &p,
            &cfg,
            &SlippageModel::frictionless(),
            &Trajectory::flat(0, 20),
        );
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn realized_bad_debt_is_frozen() {
        let p = portfolio(100e6, 97e6);
        let cfg = PolicyConfig::new(PolicyKind::ToxicBaseline);
        let mut t = Trajectory::flat(0, 50);
        for (k, f) in t.factors.iter_mut().enumerate() {
            *f = if k % 2 == 0 { 0.9 } else { 1.2 };
        }
        t.factors[0] = 1.0;
        let s = simulate_trajectory(&p, &cfg, &SlippageModel::default(), &t);
        assert!(s[0] > 0.0);
        for w in s.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn zero_debt_is_zero_everywhere() {
        let p = portfolio(100e6, 0.0);
        let t = crate::price::synthetic_gbm(0.0, 0.05, 200, 3, 1).unwrap();
        for cfg in all_policies() {
            for tr in &t {
                let s = simulate_trajectory(&p, &cfg, &SlippageModel::default(), tr);
                assert!(s.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn flat_dominance_above_frontier() {
        let i = 0.045;
        let ltv0 = uc_frontier(i).unwrap() + 0.01;
        let p = portfolio(90e6, ltv0 * 90e6);
        let t = Trajectory::flat(0, 30);
        let finals: Vec<f64> = [
            PolicyKind::HaltAboveUc,
            PolicyKind::DynamicIncentive,
            PolicyKind::ToxicBaseline,
        ]
        .iter()
        .map(|k| {
            *simulate_trajectory(&p, &PolicyConfig::new(*k), &SlippageModel::default(), &t)
                .last()
                .unwrap()
        })
        .collect();
        assert_eq!(finals[0], 0.0);
        assert!(finals[0] <= finals[1] && finals[1] <= finals[2]);
        assert!(finals[2] > 0.0);
    }

    fn scenario(p: Portfolio<f64>, horizon: usize, workers: usize) -> ScenarioConfig {
        ScenarioConfig {
            portfolio: p,
            policies: all_policies(),
            slippage: SlippageModel::default(),
            horizon,
            sim: SimOptions::default(),
            workers,
        }
    }

    #[test]
    fn all_zero_report() {
        let traj: Vec<_> = (0..5).map(|k| Trajectory::flat(k, 10)).collect();
        let r = run_experiment(&scenario(portfolio(100e6, 50e6), 10, 1), &traj).unwrap();
        for p in &r.policies {
            assert!(p.mean.iter().all(|v| *v == 0.0));
            assert!(p.lower.iter().chain(&p.upper).all(|v| *v == 0.0));
            assert_eq!(p.prob_bad_debt, 0.0);
            assert_eq!(p.tail_mean, 0.0);
            assert_eq!(p.histogram.zero_count, 5);
        }
    }

    #[test]
    fn two_trajectory_statistics() {
        // Start already insolvent with no liquidations possible: the shortfall
        // of 10 persists on the flat path and vanishes on the crash path.
        let p = portfolio(100.0, 110.0);
        let mut crash = Trajectory::flat(1, 3);
        crash.factors[0] = 0.5;
        let traj = vec![Trajectory::flat(0, 3), crash];
        let mut s = scenario(p, 3, 2);
        s.policies = vec![PolicyConfig::new(PolicyKind::HaltAboveUc)];
        let r = run_experiment(&s, &traj).unwrap();
        let pr = &r.policies[0];
        assert_eq!(pr.final_samples, vec![10.0, 0.0]);
        assert!((pr.mean_final - 5.0).abs() < 1e-12);
        assert_eq!(pr.prob_bad_debt, 0.5);
        assert_eq!(pr.tail_mean, 10.0);
        assert_eq!(pr.histogram.zero_count, 1);
        assert_eq!(pr.histogram.counts[HISTOGRAM_BINS - 1], 1);
        for k in 0..3 {
            assert!(pr.lower[k] <= pr.mean[k] && pr.mean[k] <= pr.upper[k]);
        }
    }

    #[test]
    fn worker_count_does_not_change_report() {
        let p = portfolio(90e6, 0.93 * 90e6);
        let traj = crate::price::synthetic_gbm(0.0, 0.004, 300, 40, 5).unwrap();
        let a = run_experiment(&scenario(p.clone(), 300, 1), &traj).unwrap();
        let b = run_experiment(&scenario(p.clone(), 300, 3), &traj).unwrap();
        let mut shuffled = traj.clone();
        shuffled.reverse();
        let c = run_experiment(&scenario(p, 300, 4), &shuffled).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn experiment_errors() {
        let s = scenario(portfolio(1.0, 0.5), 10, 1);
        assert!(matches!(
            run_experiment(&s, &[]),
            Err(ExperimentError::NoTrajectories)
        ));
        assert!(matches!(
            run_experiment(&s, &[Trajectory::flat(0, 9)]),
            Err(ExperimentError::HorizonMismatch { .. })
        ));
        let mut s2 = s.clone();
        s2.policies.clear();
        assert!(matches!(
            run_experiment(&s2, &[Trajectory::flat(0, 10)]),
            Err(ExperimentError::NoPolicies)
        ));
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let p = vec![
            PolicyConfig::new(PolicyKind::ToxicBaseline),
            PolicyConfig::new(PolicyKind::ToxicBaseline),
            PolicyConfig::new(PolicyKind::HaltAboveUc),
        ];
        assert_eq!(
            policy_labels(&p),
            ["toxic_baseline", "toxic_baseline_2", "halt_above_uc"]
        );
    }

    #[test]
    fn median_convention() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[]), None);
    }
}
