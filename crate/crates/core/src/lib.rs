pub mod action_space;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod nn;
pub mod numeric;
pub mod policies;
pub mod rewards;
pub mod simulator;

pub use error::{Error, Result};
