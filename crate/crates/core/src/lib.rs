//! Dynamic Bayesian mixture model for age-at-death distributions across
//! several populations.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod model;
pub mod prior;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
