pub mod bench;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod env;
pub mod manifold;
pub mod nn;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
