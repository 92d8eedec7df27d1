//! Topometric localization: a discrete Bayes filter over a place graph with an
//! explicit off-map state, used for loop closure detection and wakeup.

pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod instrument;
pub mod map;
pub mod measurement;
pub mod motion;
pub mod seeds;
pub mod simulator;
pub mod tasks;
pub mod traverse;

pub use error::{Error, Result};
