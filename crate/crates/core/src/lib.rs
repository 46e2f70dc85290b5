pub mod cli;
pub mod data;
pub mod dgp;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod features;
pub mod linalg;
pub mod montecarlo;
pub mod nuisance;
pub mod quasi;
pub mod rng;

pub use error::{Error, Result};
