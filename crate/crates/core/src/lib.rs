//! Desk-scale engine for training portfolio-management RL agents on OHLCV
//! panels and grading the results on a six-axis evaluation compass.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`market`] — CSV ingestion, temporal features, rolling splits, fetch
//! - [`env`] — the portfolio MDP (simplex weights, value accounting)
//! - [`nn`] — MLP / Adam / Gaussian head used by every learner
//! - [`agent`] — SAC baseline and the bootstrapped expert ensemble
//! - [`metrics`] — per-run financial metrics (return, risk, diversity)
//! - [`score`] — market-relative scores, profiles, ranks, axis aggregation
//! - [`report`] — compass document, star table, heatmaps, equity curves
//! - [`cli`] — the `compass` command suite gluing the stages together
//!
//! Everything is deterministic given `(data, config, master seed)`; see
//! [`seed`] for the stream-derivation contract.

pub mod agent;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod market;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod score;
pub mod seed;

pub use error::{CoreError, Result};
