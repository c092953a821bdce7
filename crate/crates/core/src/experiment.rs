//! Experiment and replay config files, and the runs they describe.
//!
//! Relative paths inside a config file resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::liquidation::{CascadeLimits, DEFAULT_DUST_REPAY, DEFAULT_MAX_EVENTS};
use crate::market::{AssetId, Portfolio};
use crate::montecarlo::{
    run_experiment, BadDebtReport, ExperimentError, ScenarioConfig, SimOptions,
};
use crate::policy::{
    uc_frontier, PolicyConfig, PolicyKind, DEFAULT_CLOSING_FACTOR, DEFAULT_EPSILON,
    DEFAULT_INCENTIVE, DEFAULT_LTV_LIQ,
};
use crate::price::{
    bootstrap, log_returns, synthetic_gbm, BootstrapOptions, PriceSeries, SamplingMode, Trajectory,
    DEFAULT_HORIZON,
};
use crate::replay::{
    read_events_csv, reconstruct_ltv, sigma_report, tokens_to_usd, EventUnits, LiquidationRecord,
    ReplayTrace, SigmaFitOptions, SigmaReport, DEFAULT_BINDING_TOLERANCE,
};
use crate::slippage::{SlippageModel, DEFAULT_GAMMA, DEFAULT_LIQUIDITY, DEFAULT_SIGMA};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) => 3,
            RunError::Output { .. } => 1,
        }
    }
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_threshold() -> f64 {
    DEFAULT_LTV_LIQ
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollateralEntry {
    pub asset: String,
    /// USD value at the start of the run.
    pub value: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebtEntry {
    pub asset: String,
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSpec {
    pub collateral: Vec<CollateralEntry>,
    #[serde(default)]
    pub debt: Vec<DebtEntry>,
}

impl PortfolioSpec {
    pub fn build(&self) -> Result<Portfolio<f64>, RunError> {
        Portfolio::new(
            self.collateral
                .iter()
                .map(|c| (c.asset.as_str(), c.value, c.threshold)),
            self.debt.iter().map(|d| (d.asset.as_str(), d.value)),
        )
        .map_err(|e| RunError::Config(format!("portfolio: {e}")))
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlippageSpec {
    pub gamma: f64,
    pub sigma: f64,
    pub liquidity: f64,
}

impl Default for SlippageSpec {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            sigma: DEFAULT_SIGMA,
            liquidity: DEFAULT_LIQUIDITY,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub i0: Option<f64>,
    pub c0: Option<f64>,
    pub epsilon: Option<f64>,
    /// Defaults to the portfolio's collateral-weighted threshold.
    pub ltv_liq: Option<f64>,
}

impl PolicySpec {
    fn build(&self, ltv_liq: f64) -> PolicyConfig<f64> {
        PolicyConfig::new(self.kind)
            .with_incentive(self.i0.unwrap_or(DEFAULT_INCENTIVE))
            .with_closing_factor(self.c0.unwrap_or(DEFAULT_CLOSING_FACTOR))
            .with_epsilon(self.epsilon.unwrap_or(DEFAULT_EPSILON))
            .with_ltv_liq(self.ltv_liq.unwrap_or(ltv_liq))
    }
}

fn all_policies() -> Vec<PolicySpec> {
    PolicyKind::ALL
        .iter()
        .map(|&kind| PolicySpec {
            kind,
            i0: None,
            c0: None,
            epsilon: None,
            ltv_liq: None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSpec {
    pub dust: f64,
    pub max_events: usize,
}

impl Default for LimitsSpec {
    fn default() -> Self {
        Self {
            dust: DEFAULT_DUST_REPAY,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Bootstrap from a minute OHLCV file.
    Historical {
        path: PathBuf,
        draws: usize,
        #[serde(default)]
        mode: SamplingMode,
        #[serde(default = "default_true")]
        reverse: bool,
    },
    /// Geometric Brownian motion; `sigma_step = 0` gives flat paths.
    Synthetic {
        #[serde(default)]
        mu: f64,
        sigma_step: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Debt asset moved by the trajectories; every debt asset when absent.
    pub price_asset: Option<String>,
    pub portfolio: PortfolioSpec,
    #[serde(default)]
    pub slippage: SlippageSpec,
    #[serde(rename = "policy", default = "all_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub limits: LimitsSpec,
    pub trajectories: TrajectorySpec,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Raw bytes, their SHA-256 and the directory used for relative paths.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    pub text: String,
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl ConfigSource {
    pub fn read(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| RunError::Config(format!("{} is not valid UTF-8", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            text,
            sha256,
            base_dir,
        })
    }

    pub fn parse<T: for<'de> Deserialize<'de>>(&self) -> Result<T, RunError> {
        toml::from_str(&self.text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn asset_id(raw: &Option<String>) -> Result<Option<AssetId>, RunError> {
    raw.as_deref()
        .map(|s| AssetId::new(s).map_err(|e| RunError::Config(format!("price_asset: {e}"))))
        .transpose()
}

fn read_prices(path: &Path) -> Result<PriceSeries, RunError> {
    PriceSeries::read_csv(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

/// A fully validated simulation, ready to run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: ScenarioConfig,
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub config_sha256: String,
    pub output_dir: PathBuf,
}

impl Simulation {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, RunError> {
        let src = ConfigSource::read(path)?;
        let file: ExperimentFile = src.parse()?;
        Self::from_file(&file, &src, overrides)
    }

    pub fn from_file(
        file: &ExperimentFile,
        src: &ConfigSource,
        overrides: &Overrides,
    ) -> Result<Self, RunError> {
        let seed = overrides.seed.unwrap_or(file.seed);
        let portfolio = file.portfolio.build()?;
        let ltv_liq = portfolio.liq_threshold().unwrap_or(DEFAULT_LTV_LIQ);
        let scenario = ScenarioConfig {
            policies: file.policies.iter().map(|p| p.build(ltv_liq)).collect(),
            portfolio,
            slippage: SlippageModel {
                gamma: file.slippage.gamma,
                sigma: file.slippage.sigma,
                liquidity: file.slippage.liquidity,
            },
            horizon: file.horizon,
            sim: SimOptions {
                price_asset: asset_id(&file.price_asset)?,
                limits: CascadeLimits {
                    dust: file.limits.dust,
                    max_events: file.limits.max_events,
                },
            },
            workers: overrides.workers.unwrap_or(0),
        };
        scenario
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;

        let trajectories = match &file.trajectories {
            TrajectorySpec::Historical {
                path,
                draws,
                mode,
                reverse,
            } => {
                let path = src.resolve(path);
                let series = read_prices(&path)?;
                let returns = log_returns(&series)
                    .map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
                let opts = BootstrapOptions {
                    draws: *draws,
                    horizon: file.horizon,
                    seed,
                    mode: *mode,
                    reverse: *reverse,
                };
                bootstrap(&returns, &opts)
                    .map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?
            }
            TrajectorySpec::Synthetic {
                mu,
                sigma_step,
                count,
            } => {
                if *count == 0 {
                    return Err(RunError::Config(
                        "trajectories.count must be at least 1".into(),
                    ));
                }
                synthetic_gbm(*mu, *sigma_step, file.horizon, *count, seed)
                    .map_err(|e| RunError::Config(e.to_string()))?
            }
        };
        let output_dir = overrides
            .out_dir
            .clone()
            .unwrap_or_else(|| src.resolve(&file.output_dir));
        Ok(Self {
            scenario,
            trajectories,
            seed,
            config_sha256: src.sha256.clone(),
            output_dir,
        })
    }

    pub fn run(&self) -> Result<BadDebtReport, RunError> {
        run_experiment(&self.scenario, &self.trajectories).map_err(|e| match e {
            ExperimentError::NoTrajectories => RunError::Data(e.to_string()),
            other => RunError::Config(other.to_string()),
        })
    }
}

fn default_bins() -> usize {
    50
}

fn default_incentive() -> f64 {
    DEFAULT_INCENTIVE
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSpec {
    pub gamma: f64,
    pub liquidity: f64,
    /// Closing factor used to detect closing-factor-bound records.
    pub closing_factor: f64,
    pub tolerance: f64,
    pub include_all: bool,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            liquidity: DEFAULT_LIQUIDITY,
            closing_factor: DEFAULT_CLOSING_FACTOR,
            tolerance: DEFAULT_BINDING_TOLERANCE,
            include_all: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub price_asset: Option<String>,
    pub prices: PathBuf,
    pub events: PathBuf,
    #[serde(default)]
    pub event_units: EventUnits,
    /// Protocol incentive; sets the default frontier.
    #[serde(default = "default_incentive")]
    pub incentive: f64,
    pub frontier: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub portfolio: PortfolioSpec,
    #[serde(default)]
    pub fit: FitSpec,
}

/// Loaded replay inputs.
#[derive(Debug, Clone)]
pub struct Replay {
    pub portfolio: Portfolio<f64>,
    pub prices: PriceSeries,
    pub events: Vec<LiquidationRecord>,
    pub price_asset: Option<AssetId>,
    pub frontier: f64,
    pub bins: usize,
    pub fit: FitSpec,
    pub config_sha256: String,
    pub output_dir: PathBuf,
}

/// Replay results.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub trace: ReplayTrace,
    pub sigma: SigmaReport,
}

impl Replay {
    pub fn load(
        path: &Path,
        out_dir: Option<PathBuf>,
        frontier: Option<f64>,
    ) -> Result<Self, RunError> {
        let src = ConfigSource::read(path)?;
        let file: ReplayFile = src.parse()?;
        let portfolio = file.portfolio.build()?;
        let price_asset = asset_id(&file.price_asset)?;
        if let Some(a) = &price_asset {
            if !portfolio.debt().iter().any(|d| d.asset == *a) {
                return Err(RunError::Config(format!(
                    "price_asset {a} is not a debt position"
                )));
            }
        }
        let frontier = match frontier.or(file.frontier) {
            Some(f) if f > 0.0 && f.is_finite() => f,
            Some(f) => {
                return Err(RunError::Config(format!(
                    "frontier must be positive, got {f}"
                )))
            }
            None => uc_frontier(file.incentive).map_err(|e| RunError::Config(e.to_string()))?,
        };
        if file.bins == 0 {
            return Err(RunError::Config("bins must be at least 1".into()));
        }
        let prices_path = src.resolve(&file.prices);
        let prices = read_prices(&prices_path)?;
        let events_path = src.resolve(&file.events);
        let mut events = read_events_csv(&events_path)
            .map_err(|e| RunError::Data(format!("{}: {e}", events_path.display())))?;
        if file.event_units == EventUnits::Tokens {
            events = tokens_to_usd(&events, &prices).map_err(|e| RunError::Data(e.to_string()))?;
        }
        Ok(Self {
            portfolio,
            prices,
            events,
            price_asset,
            frontier,
            bins: file.bins,
            fit: file.fit,
            config_sha256: src.sha256.clone(),
            output_dir: out_dir.unwrap_or_else(|| src.resolve(&file.output_dir)),
        })
    }

    pub fn run(&self) -> Result<ReplayOutcome, RunError> {
        let trace = reconstruct_ltv(
            &self.portfolio,
            &self.prices,
            &self.events,
            self.price_asset.as_ref(),
        )
        .map_err(|e| RunError::Data(e.to_string()))?;
        let opts = SigmaFitOptions {
            gamma: self.fit.gamma,
            liquidity: self.fit.liquidity,
            closing_factor: self.fit.closing_factor,
            tolerance: self.fit.tolerance,
            include_all: self.fit.include_all,
            frontier: self.frontier,
        };
        let sigma = sigma_report(&self.events, &trace, &opts);
        Ok(ReplayOutcome { trace, sigma })
    }
}
