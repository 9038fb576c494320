//! Zero-shot dynamics forecasting with in-context learners.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajdata`]: trajectory containers, CSV/JSONL ingestion and the min-max +
//!   standard scaling pipeline used before error metrics.
//! - [`tokenizer`]: the numeric encoding that turns a real series into
//!   fixed-width digit tokens (bin ids) and back.
//! - [`forecaster`]: backends producing a categorical next-value distribution
//!   for every position of a tokenized series.
//! - [`disentangle`]: PCA feature maps.
//! - [`dicl`]: the vICL / DICL-(s) / DICL-(s,a) predictors and autoregressive
//!   rollouts.
//! - [`metrics`]: multi-step MSE, quantile calibration, KS, coverage and
//!   one-at-a-time sensitivity.
//! - [`envs`]: tabular MDPs and a native pendulum.
//! - [`boundlab`]: exact and Monte Carlo checks of the multi-branch return bound.
//! - [`rl`]: MLPs, replay buffers, SAC and the forecaster-augmented trainer.
//! - [`policyeval`]: hybrid online/forecast policy evaluation.

pub mod boundlab;
pub mod dicl;
pub mod disentangle;
pub mod envs;
pub mod error;
pub mod forecaster;
pub mod metrics;
pub mod policyeval;
pub mod rl;
pub mod stats;
pub mod tokenizer;
pub mod trajdata;

pub use error::{DiclError, Result};
