//! Liquidation cascades within one time step.
//!
//! Each event repays `q = min{q_opt, c·B, C/(1+i)}` and seizes `(1 + i)·q`.
//! The policy parameters and the repay size are recomputed from the new LTV
//! after every event; swap liquidity is treated as fully refreshed between
//! events.

use crate::market::Portfolio;
use crate::policy::{step_parameters, PolicyConfig};
use crate::scalar::Scalar;
use crate::slippage::{SlippageError, SlippageModel};

/// Repay sizes at or below this end a cascade.
pub const DEFAULT_DUST_REPAY: f64 = 1e-6;
pub const DEFAULT_MAX_EVENTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeLimits<T> {
    pub dust: T,
    pub max_events: usize,
}

impl<T: Scalar> Default for CascadeLimits<T> {
    fn default() -> Self {
        Self {
            dust: T::lit(DEFAULT_DUST_REPAY),
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// One executed liquidation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquidationEvent<T> {
    /// Debt repaid, `ΔB`.
    pub repaid: T,
    /// Collateral seized, `ΔC = (1 + i)·ΔB`.
    pub seized: T,
    pub incentive_used: T,
    pub closing_factor_used: T,
    /// Collateral swapped back to cover the repayment.
    pub swap_amount: T,
    pub profit: T,
    pub ltv_before: T,
    /// Infinite once all collateral is gone.
    pub ltv_after: T,
}

/// The repay size an optimizing liquidator chooses, floored at zero.
pub fn repay_amount<T: Scalar>(
    model: &SlippageModel<T>,
    incentive: T,
    closing_factor: T,
    portfolio: &Portfolio<T>,
) -> T {
    let q_opt = match model.q_opt(incentive) {
        Ok(q) => q,
        Err(SlippageError::UnboundedOptimum) => T::infinity(),
        Err(_) => T::zero(),
    };
    let by_close = closing_factor * portfolio.total_debt();
    let by_collateral = portfolio.total_collateral() / (T::one() + incentive);
    q_opt.min(by_close).min(by_collateral).max(T::zero())
}

/// Applies one forced liquidation of `repaid` at `incentive` and returns the
/// seized amount. When the seizure would consume the remaining collateral
/// (up to rounding) the whole collateral is taken and `repaid` is reduced to
/// `C / (1 + i)`.
pub fn apply_liquidation<T: Scalar>(
    portfolio: &mut Portfolio<T>,
    repaid: T,
    incentive: T,
) -> (T, T) {
    let c = portfolio.total_collateral();
    let seized = (T::one() + incentive) * repaid;
    if seized >= c * (T::one() - T::lit(4.0) * T::epsilon()) {
        let all = portfolio.seize_all();
        let repaid = all / (T::one() + incentive);
        portfolio.repay(repaid);
        (repaid, all)
    } else {
        portfolio.seize(seized);
        portfolio.repay(repaid);
        (repaid, seized)
    }
}

/// Runs the cascade on a copy of `portfolio`.
pub fn liquidate_step<T: Scalar>(
    portfolio: &Portfolio<T>,
    policy: &PolicyConfig<T>,
    model: &SlippageModel<T>,
) -> (Portfolio<T>, Vec<LiquidationEvent<T>>) {
    let mut p = portfolio.clone();
    let events = liquidate_in_place(&mut p, policy, model, &CascadeLimits::default());
    (p, events)
}

/// Runs liquidations on `portfolio` until the policy forbids them, the repay
/// size drops to dust, or the next call would not be profitable.
pub fn liquidate_in_place<T: Scalar>(
    portfolio: &mut Portfolio<T>,
    policy: &PolicyConfig<T>,
    model: &SlippageModel<T>,
    limits: &CascadeLimits<T>,
) -> Vec<LiquidationEvent<T>> {
    let mut events = Vec::new();
    while events.len() < limits.max_events {
        let Ok(ltv_before) = portfolio.ltv() else {
            break;
        };
        if portfolio.total_debt() <= T::zero() {
            break;
        }
        let params = step_parameters(policy, ltv_before);
        if !params.allow {
            break;
        }
        let i = params.incentive;
        let q = repay_amount(model, i, params.closing_factor, portfolio);
        if q <= limits.dust {
            break;
        }
        let Ok(swap) = model.swap_for(q) else { break };
        let profit = (T::one() + i) * q - swap;
        if profit <= T::zero() {
            break;
        }
        let (repaid, seized) = apply_liquidation(portfolio, q, i);
        // the exhaustion branch may shrink the repayment slightly
        let (swap, profit) = if repaid == q {
            (swap, profit)
        } else {
            let x = model.swap_for(repaid).unwrap_or(swap);
            (x, (T::one() + i) * repaid - x)
        };
        events.push(LiquidationEvent {
            repaid,
            seized,
            incentive_used: i,
            closing_factor_used: params.closing_factor,
            swap_amount: swap,
            profit,
            ltv_before,
            ltv_after: portfolio.ltv().unwrap_or(T::infinity()),
        });
    }
    if events.len() == limits.max_events {
        log::warn!(
            "liquidation cascade hit the {} event cap",
            limits.max_events
        );
    }
    events
}
