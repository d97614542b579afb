//! Intersection coordination for mixed cooperative and non-cooperative traffic.

pub mod config;
pub mod kinematics;
pub mod long_horizon;
pub mod safety;
pub mod short_horizon;
pub mod traffic;
pub mod engine;
pub mod metrics;
pub mod verify;
pub mod harness;
