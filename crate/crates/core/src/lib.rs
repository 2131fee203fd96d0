pub mod aae;
pub mod baselines;
pub mod dataset;
pub mod elastic_fl;
pub mod env;
pub mod error;
pub mod harness;
pub mod maddpg;
pub mod nn;
pub mod policy;
pub mod prediction;
pub mod seed;

pub use error::{Error, Result};
