//! Objective metrics for music source separation and their agreement with
//! listening-test ratings.

pub mod audio;
pub mod correlation;
pub mod energy;
pub mod error;
pub mod fad;
pub mod ratings;

pub use error::{Error, Result};
