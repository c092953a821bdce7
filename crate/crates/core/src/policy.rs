//! Liquidation policies and the analytic LTV thresholds they are built on.
//!
//! A liquidation repaying `ΔB` of debt and seizing `(1 + i)·ΔB` of collateral
//! raises the borrower's LTV exactly when `LTV > 1 / (1 + i)`. That LTV is the
//! undercollateralization (UC) frontier: above it, every liquidation with the
//! static incentive pushes the borrower further towards insolvency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const DEFAULT_INCENTIVE: f64 = 0.045;
pub const DEFAULT_CLOSING_FACTOR: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_LTV_LIQ: f64 = 0.89;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("liquidation incentive must be non-negative, got {0}")]
    NegativeIncentive(f64),
    #[error("LTV must be positive, got {0}")]
    NonPositiveLtv(f64),
    #[error("liquidation threshold must be below 1, got {0}")]
    ThresholdTooHigh(f64),
    #[error("invalid policy parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Static incentive and closing factor; liquidate whenever above threshold.
    ToxicBaseline,
    /// As the baseline, but liquidations halt while LTV exceeds the UC frontier.
    HaltAboveUc,
    /// LTV-dependent incentive that never exceeds the non-toxic bound.
    DynamicIncentive,
    /// Dynamic incentive plus a closing factor rising linearly to 1 at LTV = 1.
    DynamicIncentiveAndClosing,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::ToxicBaseline,
        PolicyKind::HaltAboveUc,
        PolicyKind::DynamicIncentive,
        PolicyKind::DynamicIncentiveAndClosing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::ToxicBaseline => "toxic_baseline",
            PolicyKind::HaltAboveUc => "halt_above_uc",
            PolicyKind::DynamicIncentive => "dynamic_incentive",
            PolicyKind::DynamicIncentiveAndClosing => "dynamic_incentive_and_closing",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy variant with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig<T> {
    pub kind: PolicyKind,
    /// Maximal (or static) liquidation incentive.
    pub i0: T,
    /// Minimal (or static) closing factor.
    pub c0: T,
    /// Safety margin below the non-toxic incentive bound.
    pub epsilon: T,
    /// LTV above which liquidations may start.
    pub ltv_liq: T,
}

impl<T: Scalar> PolicyConfig<T> {
    /// Policy with the default parameters (`i0 = 4.5%`, `c0 = 0.5`,
    /// `ε = 1e-4`, `LTV_liq = 0.89`).
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            i0: T::lit(DEFAULT_INCENTIVE),
            c0: T::lit(DEFAULT_CLOSING_FACTOR),
            epsilon: T::lit(DEFAULT_EPSILON),
            ltv_liq: T::lit(DEFAULT_LTV_LIQ),
        }
    }

    pub fn with_incentive(mut self, i0: T) -> Self {
        self.i0 = i0;
        self
    }

    pub fn with_closing_factor(mut self, c0: T) -> Self {
        self.c0 = c0;
        self
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_ltv_liq(mut self, ltv_liq: T) -> Self {
        self.ltv_liq = ltv_liq;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |name, value: T, reason| PolicyError::InvalidParameter {
            name,
            value: value.as_f64(),
            reason,
        };
        if !(self.i0 >= T::zero() && self.i0 < T::one()) {
            return Err(bad("i0", self.i0, "must lie in [0, 1)"));
        }
        if !(self.c0 > T::zero() && self.c0 <= T::one()) {
            return Err(bad("c0", self.c0, "must lie in (0, 1]"));
        }
        if !(self.epsilon >= T::zero() && self.epsilon <= T::lit(0.01)) {
            return Err(bad("epsilon", self.epsilon, "must lie in [0, 0.01]"));
        }
        if !(self.ltv_liq > T::zero() && self.ltv_liq < T::one()) {
            return Err(bad("ltv_liq", self.ltv_liq, "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// UC frontier `1 / (1 + i)`.
pub fn uc_frontier<T: Scalar>(incentive: T) -> Result<T, PolicyError> {
    if incentive.is_nan() || incentive < T::zero() {
        return Err(PolicyError::NegativeIncentive(incentive.as_f64()));
    }
    Ok(T::one() / (T::one() + incentive))
}

/// True when a liquidation at `ltv` with incentive `incentive` raises LTV.
pub fn is_toxic<T: Scalar>(ltv: T, incentive: T) -> bool {
    ltv > T::one() / (T::one() + incentive)
}

/// `max[min[i0, 1/LTV − 1 − ε], 0]`.
pub fn dynamic_incentive<T: Scalar>(ltv: T, i0: T, epsilon: T) -> Result<T, PolicyError> {
    if ltv.is_nan() || ltv <= T::zero() {
        return Err(PolicyError::NonPositiveLtv(ltv.as_f64()));
    }
    let bound = T::one() / ltv - T::one() - epsilon;
    Ok(i0.min(bound).max(T::zero()))
}

/// Linear closing-factor schedule from `c0` at `ltv_liq` to 1 at LTV = 1.
/// Below `ltv_liq` the schedule is held at `c0`.
pub fn dynamic_closing<T: Scalar>(ltv: T, c0: T, ltv_liq: T) -> Result<T, PolicyError> {
    if ltv_liq.is_nan() || ltv_liq >= T::one() {
        return Err(PolicyError::ThresholdTooHigh(ltv_liq.as_f64()));
    }
    if ltv < ltv_liq {
        return Ok(c0);
    }
    let span = T::one() - ltv_liq;
    let c = c0 * ((T::one() - ltv) / span) + (ltv - ltv_liq) / span;
    Ok(c.min(T::one()))
}

/// What a policy permits at a given LTV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParameters<T> {
    pub allow: bool,
    pub incentive: T,
    pub closing_factor: T,
}

pub fn step_parameters<T: Scalar>(cfg: &PolicyConfig<T>, ltv: T) -> StepParameters<T> {
    let above_threshold = ltv > cfg.ltv_liq;
    // Validated configs never hit the error branches below.
    let dyn_i = || dynamic_incentive(ltv, cfg.i0, cfg.epsilon).unwrap_or(T::zero());
    match cfg.kind {
        PolicyKind::ToxicBaseline => StepParameters {
            allow: above_threshold,
            incentive: cfg.i0,
            closing_factor: cfg.c0,
        },
        PolicyKind::HaltAboveUc => StepParameters {
            allow: above_threshold && ltv <= T::one() / (T::one() + cfg.i0),
            incentive: cfg.i0,
            closing_factor: cfg.c0,
        },
        PolicyKind::DynamicIncentive => StepParameters {
            allow: above_threshold,
            incentive: if above_threshold { dyn_i() } else { cfg.i0 },
            closing_factor: cfg.c0,
        },
        PolicyKind::DynamicIncentiveAndClosing => StepParameters {
            allow: above_threshold,
            incentive: if above_threshold { dyn_i() } else { cfg.i0 },
            closing_factor: dynamic_closing(ltv, cfg.c0, cfg.ltv_liq).unwrap_or(cfg.c0),
        },
    }
}
