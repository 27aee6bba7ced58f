//! Cooperative multipath SLAM for road vehicles.
//!
//! A road scene with one base station and building facades produces
//! single-bounce multipath. Every path looks like a line-of-sight link from
//! a *virtual transmitter* (VT), the mirror image of the base station across
//! the reflecting facade. Vehicles that see the same facade therefore see the
//! same VT. This crate
//!
//! * synthesizes noisy range/angle observations for each path ([`geometry`],
//!   [`measurement`]),
//! * groups per-vehicle VT estimates into common virtual transmitters (CVTs)
//!   with affinity propagation ([`clustering`]),
//! * runs coupled particle filters over CVT and vehicle positions
//!   ([`filters`], [`orchestrator`]),
//! * and drives Monte Carlo density sweeps with CSV output ([`experiments`]).

pub mod clustering;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod geometry;
pub mod measurement;
pub mod orchestrator;
pub mod rng;

pub use error::{Error, Result};
