//! Experiment driver: configuration grammar, the `fig-*` experiment presets, CSV
//! output and the self-check suites behind the `biqm` binary.

pub mod checks;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::{parse_config, parse_config_str, to_text, ExperimentConfig, InitialSpec};
pub use error::{CliError, ConfigError, Result};
pub use output::emit_csv;
pub use presets::{preset, PRESET_NAMES};
pub use runner::{load_config, preset_config, run_experiment, run_preset, run_to_dir};
