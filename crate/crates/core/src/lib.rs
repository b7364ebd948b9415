//! Fairness-aware linear classifiers trained online, with multiplier
//! bootstrap confidence intervals for their disparate impact and disparate
//! mistreatment.

pub mod asymptotics;
pub mod bootstrap;
pub mod cli;
pub mod constraints;
pub mod data;
pub mod error;
pub mod fairness;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
