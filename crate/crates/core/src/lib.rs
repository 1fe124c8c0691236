//! Residential microgrid simulator: PV and wind generation, four households and
//! four bidirectional EV charging stations, exposed as an episodic decision
//! process with action masking, shaped rewards and energy-accounting metrics.
//!
//! The crate is organised bottom-up:
//!
//! * [`timeseries`] loads, resamples, synthesizes and perturbs one-year scenarios.
//! * [`events`] draws charging events, assigns them to stations and runs the
//!   uncontrolled charging baseline.
//! * [`env`] is the environment itself (observation, mask, adaptive power, step).
//! * [`rewards`] holds every reward shape.
//! * [`metrics`] turns traces into key parameters, flows and histograms.
//! * [`controllers`] has rule-based policies, logit masking and a cross-entropy
//!   policy search.
//! * [`bridge`] serves an environment over a line-delimited JSON protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod controllers;
pub mod env;
pub mod error;
pub mod events;
pub mod metrics;
pub mod rewards;
pub mod timeseries;

pub use error::{Result, VppError};

/// Length of one simulation step in hours (15 minutes).
pub const STEP_HOURS: f64 = 0.25;

/// Number of quarter-hour rows in one non-leap year, including the first
/// row of the following year.
pub const YEAR_STEPS: usize = 35_041;
