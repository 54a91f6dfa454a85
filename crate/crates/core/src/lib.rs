//! Reverse Stackelberg incentive design between a utility company (leader)
//! and a myopic energy consumer (follower).
//!
//! The leader never sees the consumer's satisfaction function. It learns a
//! polynomial estimate from the responses to the incentives it has issued,
//! then designs a quadratic incentive that makes its preferred consumption
//! the consumer's best response. The device-level variant runs one such loop
//! per appliance on consumption recovered from the aggregate meter signal by
//! a simulated, error-bounded disaggregation step.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod follower;
pub mod leader;
pub mod model;
pub mod output;
pub mod search;

pub use engine::{
    run_aggregate, run_device_level, DeviceRound, DeviceSpec, Disaggregator, IterationRecord,
    RunOutcome, Scenario, StopReason,
};
pub use error::{Error, Result};
pub use estimator::{EstimationResult, FitMethod, ObservationHistory};
pub use follower::{best_response, BestResponse, Boundary};
pub use leader::{design_incentive, desired_point, DesiredPoint};
pub use model::{
    GameParams, LeaderObjective, QuadraticIncentive, Satisfaction, SatisfactionPoly,
    TrueSatisfaction,
};
