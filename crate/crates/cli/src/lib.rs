//! Library surface of the `geoflow` command line: scenario loading, task
//! execution and deterministic output formatting. The binary in `main.rs` is
//! a thin argument-parsing shell over this.

pub mod csvout;
pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{RunReport, TaskReport};
pub use runner::{run_scenario, validate_scenario, RunError};
pub use scenario::{load, Scenario, ScenarioError, Task};
