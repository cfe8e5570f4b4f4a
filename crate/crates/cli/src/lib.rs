//! Experiment runner for the `sqd` decoding engine: fixture generation,
//! corpus decoding, length-predictor training, hyperparameter sweeps and
//! rank-score statistics.

pub mod cli;
pub mod commands;
pub mod corpus;
pub mod error;
pub mod results;
pub mod settings;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult};
pub use settings::{DecodeSettings, Strategy};
