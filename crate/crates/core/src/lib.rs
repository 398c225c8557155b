pub mod cli;
pub mod confusion;
pub mod coreset;
pub mod divergence;
pub mod error;
pub mod policy;
pub mod pool;
pub mod simulator;

pub use error::{Error, Result};
