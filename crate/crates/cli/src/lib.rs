//! Configuration, oracle suite and subcommand bodies behind the `nsfide`
//! binary.

pub mod config;
pub mod output;
pub mod runs;
pub mod validate;

pub use config::{parse_config, RunConfig};
pub use runs::{run, Command, RunOutcome};
