//! Liquidation-spiral simulator for overcollateralized lending markets.
//!
//! The math modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod cli;
pub mod experiment;
pub mod liquidation;
pub mod market;
pub mod montecarlo;
pub mod policy;
pub mod price;
pub mod replay;
pub mod report;
pub mod scalar;
pub mod slippage;

pub use scalar::Scalar;

pub type Portfolio = market::Portfolio<f64>;
pub type Portfolio32 = market::Portfolio<f32>;
pub type PriceState = market::PriceState<f64>;
pub type PriceState32 = market::PriceState<f32>;
pub type PolicyConfig = policy::PolicyConfig<f64>;
pub type PolicyConfig32 = policy::PolicyConfig<f32>;
pub type SlippageModel = slippage::SlippageModel<f64>;
pub type SlippageModel32 = slippage::SlippageModel<f32>;
pub type LiquidationEvent = liquidation::LiquidationEvent<f64>;
pub type LiquidationEvent32 = liquidation::LiquidationEvent<f32>;
