//! Scenario I/O, random scenario generation, a grid-search + tracking
//! baseline, and the benchmark harness around the solver library.

pub mod baseline;
pub mod bench;
pub mod cli;
pub mod error;
pub mod generate;
pub mod report;
pub mod scenario;
pub mod schema;

pub use error::CliError;
pub use scenario::{CostModel, InputModel, Problem, Scenario, SystemModel};
