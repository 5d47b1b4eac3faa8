//! Depeg detection for StableSwap-style AMM pools.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – shared domain types and series transforms.
//! * [`stableswap`] – invariant solver, swap math, virtual and LP share prices.
//! * [`metrics`] – pool composition, flow, volatility, markout, shark and PIN series.
//! * [`bocd`] – online Bayesian changepoint detection with a Student-t predictive.
//! * [`evaluation`] – depeg labelling, leading F-score and hyperparameter grid search.
//! * [`simulator`] – seeded synthetic pool scenarios with planted depegs.
//! * [`pipeline`] – CSV/JSON schemas, ingestion, manifests and end-to-end commands.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bocd;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod stableswap;

pub use error::{Error, Result};
pub use exec::Execution;
