//! Borrower portfolio state, price application and LTV / shortfall accounting.
//!
//! All values are USD. Each position stores a token quantity expressed in
//! "base USD" units (its USD value at multiplier 1.0) together with the
//! current price multiplier, so a liquidation that removes part of a position
//! composes with later price moves without double counting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Positions whose USD value falls below this are rounded to zero.
pub const DUST_USD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("asset identifier must be non-empty")]
    EmptyAssetId,
    #[error("asset {0} appears twice on the same side of the portfolio")]
    DuplicateAsset(String),
    #[error("position {asset} has invalid value {value}")]
    InvalidValue { asset: String, value: f64 },
    #[error("liquidation threshold for {asset} must lie in (0, 1), got {value}")]
    InvalidThreshold { asset: String, value: f64 },
    #[error("price multiplier for {asset} must be positive and finite, got {value}")]
    InvalidMultiplier { asset: String, value: f64 },
    /// All collateral has been repossessed; LTV is undefined.
    #[error("portfolio is fully repossessed (zero collateral)")]
    FullyRepossessed,
}

/// Opaque token symbol such as `"CRV"` or `"USDC"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssetId(String);

impl AssetId {
    pub fn new(symbol: impl Into<String>) -> Result<Self, MarketError> {
        let symbol = symbol.into();
        if symbol.trim().is_empty() {
            return Err(MarketError::EmptyAssetId);
        }
        Ok(Self(symbol))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AssetId {
    type Err = MarketError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<String> for AssetId {
    type Error = MarketError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<AssetId> for String {
    fn from(a: AssetId) -> String {
        a.0
    }
}

/// Per-asset USD price multipliers relative to the scenario start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceState<T> {
    multipliers: BTreeMap<AssetId, T>,
}

impl<T: Scalar> PriceState<T> {
    pub fn new() -> Self {
        Self {
            multipliers: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, asset: AssetId, multiplier: T) -> Result<(), MarketError> {
        check_multiplier(&asset, multiplier)?;
        self.multipliers.insert(asset, multiplier);
        Ok(())
    }

    pub fn with(mut self, asset: &str, multiplier: T) -> Result<Self, MarketError> {
        self.set(AssetId::new(asset)?, multiplier)?;
        Ok(self)
    }

    /// Multiplier for `asset`; assets without an entry sit at 1.0.
    pub fn multiplier(&self, asset: &AssetId) -> T {
        self.multipliers.get(asset).copied().unwrap_or_else(T::one)
    }
}

fn check_multiplier<T: Scalar>(asset: &AssetId, m: T) -> Result<(), MarketError> {
    if m.is_finite() && m > T::zero() {
        Ok(())
    } else {
        Err(MarketError::InvalidMultiplier {
            asset: asset.to_string(),
            value: m.as_f64(),
        })
    }
}

/// One collateral or debt holding.
#[derive(Debug, Clone, PartialEq)]
pub struct Position<T> {
    pub asset: AssetId,
    /// Quantity in base-USD units (value at multiplier 1.0).
    pub units: T,
    /// Current price multiplier.
    pub price: T,
}

impl<T: Scalar> Position<T> {
    pub fn value(&self) -> T {
        self.units * self.price
    }
}

/// A single borrower's collateral and debt.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio<T> {
    collateral: Vec<Position<T>>,
    debt: Vec<Position<T>>,
    thresholds: BTreeMap<AssetId, T>,
}

impl<T: Scalar> Portfolio<T> {
    /// Builds a portfolio from `(asset, usd_value, liq_threshold)` collateral
    /// entries and `(asset, usd_value)` debt entries, all at multiplier 1.0.
    pub fn new<A, C, D>(collateral: C, debt: D) -> Result<Self, MarketError>
    where
        A: AsRef<str>,
        C: IntoIterator<Item = (A, T, T)>,
        D: IntoIterator<Item = (A, T)>,
    {
        let mut thresholds = BTreeMap::new();
        let mut coll = Vec::new();
        for (asset, value, threshold) in collateral {
            let asset = AssetId::new(asset.as_ref())?;
            check_value(&asset, value)?;
            if !(threshold > T::zero() && threshold < T::one()) {
                return Err(MarketError::InvalidThreshold {
                    asset: asset.to_string(),
                    value: threshold.as_f64(),
                });
            }
            if thresholds.insert(asset.clone(), threshold).is_some() {
                return Err(MarketError::DuplicateAsset(asset.to_string()));
            }
            coll.push(Position {
                asset,
                units: value,
                price: T::one(),
            });
        }
        let mut debt_side: Vec<Position<T>> = Vec::new();
        for (asset, value) in debt {
            let asset = AssetId::new(asset.as_ref())?;
            check_value(&asset, value)?;
            if debt_side.iter().any(|p| p.asset == asset) {
                return Err(MarketError::DuplicateAsset(asset.to_string()));
            }
            debt_side.push(Position {
                asset,
                units: value,
                price: T::one(),
            });
        }
        Ok(Self {
            collateral: coll,
            debt: debt_side,
            thresholds,
        })
    }

    pub fn collateral(&self) -> &[Position<T>] {
        &self.collateral
    }

    pub fn debt(&self) -> &[Position<T>] {
        &self.debt
    }

    pub fn threshold(&self, asset: &AssetId) -> Option<T> {
        self.thresholds.get(asset).copied()
    }

    /// Total collateral value `C`.
    pub fn total_collateral(&self) -> T {
        self.collateral.iter().map(Position::value).sum()
    }

    /// Total debt value `B`.
    pub fn total_debt(&self) -> T {
        self.debt.iter().map(Position::value).sum()
    }

    /// Loan-to-value `B / C`.
    pub fn ltv(&self) -> Result<T, MarketError> {
        let c = self.total_collateral();
        if c <= T::zero() {
            return Err(MarketError::FullyRepossessed);
        }
        Ok(self.total_debt() / c)
    }

    /// Collateral-weighted average of the per-asset liquidation thresholds.
    pub fn liq_threshold(&self) -> Result<T, MarketError> {
        let c = self.total_collateral();
        if c <= T::zero() {
            return Err(MarketError::FullyRepossessed);
        }
        Ok(self
            .collateral
            .iter()
            .map(|p| p.value() / c * self.thresholds[&p.asset])
            .sum())
    }

    /// Instantaneous bad debt `max(0, B - C)`.
    pub fn shortfall(&self) -> T {
        (self.total_debt() - self.total_collateral()).max(T::zero())
    }

    /// Returns a copy repriced with the multipliers in `prices`. Remaining
    /// quantities are kept, so earlier liquidations are preserved.
    pub fn apply_prices(&self, prices: &PriceState<T>) -> Result<Self, MarketError> {
        let mut out = self.clone();
        out.reprice(prices)?;
        Ok(out)
    }

    /// In-place form of [`Portfolio::apply_prices`].
    pub fn reprice(&mut self, prices: &PriceState<T>) -> Result<(), MarketError> {
        for pos in self.collateral.iter_mut().chain(self.debt.iter_mut()) {
            let m = prices.multiplier(&pos.asset);
            check_multiplier(&pos.asset, m)?;
            pos.price = m;
        }
        Ok(())
    }

    /// Multiplies the current multiplier of every debt position matching
    /// `asset` (or all debt positions when `asset` is `None`) by `factor`.
    pub fn scale_debt_price(
        &mut self,
        asset: Option<&AssetId>,
        factor: T,
    ) -> Result<(), MarketError> {
        for pos in self.debt.iter_mut() {
            if asset.is_none_or(|a| *a == pos.asset) {
                let m = pos.price * factor;
                check_multiplier(&pos.asset, m)?;
                pos.price = m;
            }
        }
        Ok(())
    }

    /// Sets the absolute multiplier of the matching debt positions (all of
    /// them when `asset` is `None`).
    pub fn set_debt_price(
        &mut self,
        asset: Option<&AssetId>,
        multiplier: T,
    ) -> Result<(), MarketError> {
        for pos in self.debt.iter_mut() {
            if asset.is_none_or(|a| *a == pos.asset) {
                check_multiplier(&pos.asset, multiplier)?;
                pos.price = multiplier;
            }
        }
        Ok(())
    }

    /// Reduces debt by `usd`, pro rata across debt positions.
    pub fn repay(&mut self, usd: T) {
        remove_pro_rata(&mut self.debt, usd);
    }

    /// Removes `usd` of collateral, pro rata across collateral positions.
    pub fn seize(&mut self, usd: T) {
        remove_pro_rata(&mut self.collateral, usd);
    }

    /// Removes all remaining collateral, returning its value.
    pub fn seize_all(&mut self) -> T {
        let c = self.total_collateral();
        for pos in &mut self.collateral {
            pos.units = T::zero();
        }
        c
    }

    /// Zeroes every debt position and returns the written-off value.
    pub fn write_off_debt(&mut self) -> T {
        let b = self.total_debt();
        for pos in &mut self.debt {
            pos.units = T::zero();
        }
        b
    }
}

fn check_value<T: Scalar>(asset: &AssetId, value: T) -> Result<(), MarketError> {
    if value.is_finite() && value >= T::zero() {
        Ok(())
    } else {
        Err(MarketError::InvalidValue {
            asset: asset.to_string(),
            value: value.as_f64(),
        })
    }
}

fn remove_pro_rata<T: Scalar>(side: &mut [Position<T>], usd: T) {
    let total: T = side.iter().map(Position::value).sum();
    if total <= T::zero() || usd <= T::zero() {
        return;
    }
    let dust = T::lit(DUST_USD);
    if usd >= total {
        for pos in side.iter_mut() {
            pos.units = T::zero();
        }
        return;
    }
    for pos in side.iter_mut() {
        let take = usd * (pos.value() / total);
        pos.units = (pos.units - take / pos.price).max(T::zero());
        if pos.value() < dust {
            pos.units = T::zero();
        }
    }
}
