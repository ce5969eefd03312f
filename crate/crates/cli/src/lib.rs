//! Library side of the `sidapbc` binary: config parsing, the verification
//! suites and the simulation driver. Kept separate from `main.rs` so the
//! commands can be exercised in-process.

pub mod config;
pub mod run;

pub use config::{parse, LoadedConfig, RunConfig, SchemaError};
pub use run::{cmd_count_pdes, cmd_simulate, cmd_verify, Check, SimulationSummary, VerifyReport};
