//! Slot-level simulator for XR traffic over a 5G NR indoor-hotspot system.

pub mod drx;
pub mod engine;
pub mod error;
pub mod harness;
pub mod l4s;
pub mod mac;
pub mod qos;
pub mod radio;
pub mod reporting;
pub mod rng;
pub mod time;
pub mod traffic;

pub use error::{Error, Result};

/// Simulation time in microseconds.
pub type Micros = i64;
