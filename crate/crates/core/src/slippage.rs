//! Linear slippage model `s(x) = γ + σ·x/L` and the liquidator's optimum.
//!
//! A liquidator repays `q` of debt (flash-loaned, free), receives `(1 + i)·q`
//! of collateral and swaps `x` of it back so that `x·(1 − s(x)) = q`. Profit
//! is `Π(q) = (1 + i)·q − x(q)`, which is concave in `q`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const DEFAULT_GAMMA: f64 = 0.003;
pub const DEFAULT_LIQUIDITY: f64 = 190e6;
pub const DEFAULT_SIGMA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlippageError {
    #[error("swap amount must be non-negative, got {0}")]
    NegativeAmount(f64),
    #[error(
        "swap infeasible at this liquidity: repaying {q} exceeds the {max} the pool can return"
    )]
    Infeasible { q: f64, max: f64 },
    /// Zero slippage factor: profit grows without bound in the repay size.
    #[error("unbounded optimum: slippage factor is zero")]
    UnboundedOptimum,
    #[error("invalid slippage model: {0}")]
    InvalidModel(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlippageModel<T> {
    /// Trading fee.
    pub gamma: T,
    /// Linear slippage factor.
    pub sigma: T,
    /// Available swap liquidity in USD.
    pub liquidity: T,
}

impl<T: Scalar> Default for SlippageModel<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(DEFAULT_GAMMA),
            sigma: T::lit(DEFAULT_SIGMA),
            liquidity: T::lit(DEFAULT_LIQUIDITY),
        }
    }
}

impl<T: Scalar> SlippageModel<T> {
    pub fn new(gamma: T, sigma: T, liquidity: T) -> Result<Self, SlippageError> {
        let m = Self {
            gamma,
            sigma,
            liquidity,
        };
        m.validate()?;
        Ok(m)
    }

    /// Fee-free, impact-free swaps.
    pub fn frictionless() -> Self {
        Self {
            gamma: T::zero(),
            sigma: T::zero(),
            liquidity: T::lit(DEFAULT_LIQUIDITY),
        }
    }

    pub fn validate(&self) -> Result<(), SlippageError> {
        if !(self.gamma >= T::zero() && self.gamma < T::lit(0.05)) {
            return Err(SlippageError::InvalidModel("gamma must lie in [0, 0.05)"));
        }
        if !(self.sigma.is_finite() && self.sigma >= T::zero()) {
            return Err(SlippageError::InvalidModel(
                "sigma must be finite and non-negative",
            ));
        }
        if !(self.liquidity.is_finite() && self.liquidity > T::zero()) {
            return Err(SlippageError::InvalidModel("liquidity must be positive"));
        }
        Ok(())
    }

    /// Fractional cost `γ + σ·x/L` of swapping `x`.
    pub fn slippage(&self, x: T) -> Result<T, SlippageError> {
        if x.is_nan() || x < T::zero() {
            return Err(SlippageError::NegativeAmount(x.as_f64()));
        }
        Ok(self.gamma + self.sigma * x / self.liquidity)
    }

    /// Largest repay size whose swap is still solvable.
    pub fn max_swappable(&self) -> T {
        if self.sigma <= T::zero() {
            return T::infinity();
        }
        let keep = T::one() - self.gamma;
        self.liquidity * keep * keep / (T::lit(4.0) * self.sigma)
    }

    /// Swap size `x` with `x·(1 − s(x)) = q`.
    ///
    /// Evaluated as `2q / ((1 − γ)(1 + √(1 − D)))`, `D = 4σq / (L(1 − γ)²)`,
    /// the cancellation-free form of the usual root; it reduces to
    /// `q / (1 − γ)` when `σ = 0`.
    pub fn swap_for(&self, q: T) -> Result<T, SlippageError> {
        if q.is_nan() || q < T::zero() {
            return Err(SlippageError::NegativeAmount(q.as_f64()));
        }
        let keep = T::one() - self.gamma;
        let two = T::lit(2.0);
        let d = T::lit(4.0) * self.sigma * q / (self.liquidity * keep * keep);
        if d > T::one() + T::lit(4.0) * T::epsilon() {
            return Err(SlippageError::Infeasible {
                q: q.as_f64(),
                max: self.max_swappable().as_f64(),
            });
        }
        let root = (T::one() - d).max(T::zero()).sqrt();
        Ok(two * q / (keep * (T::one() + root)))
    }

    /// Liquidator profit `(1 + i)·q − x(q)`.
    pub fn profit(&self, incentive: T, q: T) -> Result<T, SlippageError> {
        Ok((T::one() + incentive) * q - self.swap_for(q)?)
    }

    /// Profit-maximizing repay size `L·[(1+i)²(1−γ)² − 1] / [4σ(1+i)²]`,
    /// or zero when no repay size is profitable.
    pub fn q_opt(&self, incentive: T) -> Result<T, SlippageError> {
        let gross = (T::one() + incentive) * (T::one() - self.gamma);
        if gross <= T::one() {
            return Ok(T::zero());
        }
        if self.sigma <= T::zero() {
            return Err(SlippageError::UnboundedOptimum);
        }
        let g2 = (T::one() + incentive) * (T::one() + incentive);
        Ok(self.liquidity * (gross * gross - T::one()) / (T::lit(4.0) * self.sigma * g2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_model() -> SlippageModel<f64> {
        SlippageModel::new(0.003, 1.0, 190e6).unwrap()
    }

    #[test]
    fn slippage_examples() {
        let m = paper_model();
        assert!((m.slippage(1.9e6).unwrap() - 0.013).abs() < 1e-15);
        assert_eq!(m.slippage(0.0).unwrap(), 0.003);
        let flat = SlippageModel::new(0.003, 0.0, 190e6).unwrap();
        assert_eq!(flat.slippage(5e7).unwrap(), 0.003);
        assert!(m.slippage(-1.0).is_err());
    }

    #[test]
    fn swap_for_examples() {
        let flat = SlippageModel::new(0.003, 0.0, 190e6).unwrap();
        assert!((flat.swap_for(100.0_f64).unwrap() - 100.0 / 0.997).abs() < 1e-12);

        let m = paper_model();
        let x = m.swap_for(1e6).unwrap();
        assert!((x - 1.0084e6).abs() < 100.0, "{x}");
        let back = x * (1.0 - m.slippage(x).unwrap());
        assert!((back - 1e6).abs() <= 1e-9 * 1e6);

        assert_eq!(m.swap_for(0.0).unwrap(), 0.0);
        assert!(m.swap_for(m.max_swappable()).is_ok());
        assert!(matches!(
            m.swap_for(1e9),
            Err(SlippageError::Infeasible { .. })
        ));
    }

    #[test]
    fn q_opt_examples() {
        let m = paper_model();
        let q = m.q_opt(0.045).unwrap();
        assert!((q - 3.718e6).abs() < 1e3, "{q}");
        // grid oracle
        let best = (0..=20_000)
            .map(|k| k as f64 * 1e3)
            .max_by(|a, b| {
                m.profit(0.045, *a)
                    .unwrap()
                    .total_cmp(&m.profit(0.045, *b).unwrap())
            })
            .unwrap();
        assert!((best - q).abs() <= 1e3);

        assert_eq!(m.q_opt(0.0).unwrap(), 0.0);
        let twice = SlippageModel::new(0.003, 1.0, 380e6).unwrap();
        assert!((twice.q_opt(0.045).unwrap() - 2.0 * q).abs() < 1e-6);

        let flat = SlippageModel::new(0.003, 0.0, 190e6).unwrap();
        assert_eq!(flat.q_opt(0.045), Err(SlippageError::UnboundedOptimum));
    }

    #[test]
    fn model_validation() {
        assert!(SlippageModel::new(0.05, 1.0, 1.0).is_err());
        assert!(SlippageModel::new(0.0, -1.0, 1.0).is_err());
        assert!(SlippageModel::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn f32_model() {
        let m = SlippageModel::<f32>::new(0.003, 1.0, 190e6).unwrap();
        let q = m.q_opt(0.045).unwrap();
        assert!((q - 3.718e6).abs() < 2e3);
    }

    proptest! {
        #[test]
        fn swap_round_trip(gamma in 0.0f64..0.05, sigma in 1e-3f64..600.0, l in 1e3f64..1e10, frac in 0.0f64..1.0) {
            let m = SlippageModel::new(gamma, sigma, l).unwrap();
            let q = frac * m.max_swappable();
            let x = m.swap_for(q).unwrap();
            let back = x * (1.0 - m.slippage(x).unwrap());
            prop_assert!((back - q).abs() <= 1e-9 * q.max(f64::MIN_POSITIVE));
        }
    }
}
