//! Adaptive quantum detection and estimation of weak magnetic signals with
//! simulated NV-centre sensors.

pub mod array;
pub mod baseline;
pub mod belief;
pub mod detection;
pub mod error;
pub mod experiments;
pub mod information;
pub mod learning;
pub mod measurement;
pub mod nn;
pub mod nonmarkov;
pub mod pareto;
pub mod quantum;
pub mod rapid;
pub mod rng;
pub mod sac;
pub mod scenario;
pub mod sensing;
pub mod signal;
pub mod tracking;

pub use error::{RapidError, Result};
