//! Detection of model-free static arbitrage in option markets.
//!
//! The crate computes exact superhedging values of the zero payoff with a
//! cutting-plane solver ([`lsip`]), labels sampled markets with them, and
//! trains a bounded-output multilayer perceptron ([`nn`], [`train`]) whose
//! output is a static trading strategy for any quote vector. [`eval`] scores
//! trained detectors and backtests them on option-chain data ([`dataio`]).

pub mod dataio;
pub mod eval;
pub mod lp;
pub mod lsip;
pub mod market;
pub mod nn;
pub mod train;

pub use market::{
    ArbitrageVerdict, DomainError, MarketBounds, MarketInstance, OptionFamily, PayoffKind,
    PayoffSpec, RawMarket, Strategy,
};
