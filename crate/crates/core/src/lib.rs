//! Target tracking with contextual bandits: choose tariff allocations so
//! that observed electricity consumption follows a target signal.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below fix the usual choice.

// `!(x > 0)` is used on purpose so NaN fails validation; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod covariance;
pub mod domain;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod policy;
pub mod ridge;
pub mod scalar;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AllocationF64 = domain::Allocation<f64>;
pub type AllocationF32 = domain::Allocation<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type RidgeStateF64 = ridge::RidgeState<f64>;
pub type RidgeStateF32 = ridge::RidgeState<f32>;
pub type ScenarioF64 = sim::Scenario<f64>;
pub type ScenarioF32 = sim::Scenario<f32>;
pub type Model1PolicyF64 = policy::Model1Policy<f64>;
pub type Model2PolicyF64 = policy::Model2Policy<f64>;
pub type RegretLedgerF64 = eval::RegretLedger<f64>;
pub type EnvironmentF64 = experiment::Environment<f64>;
