pub mod anneal;
pub mod chain;
pub mod continuous;
pub mod error;
pub mod exec;
pub mod group;
pub mod model;
pub mod montecarlo;
pub mod states;

pub use error::{QerrError, Result};
pub use exec::Execution;

#[cfg(test)]
mod tests;
