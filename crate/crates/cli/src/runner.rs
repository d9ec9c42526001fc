//! Running configured experiments.

use std::path::{Path, PathBuf};

use biqm_core::experiment::{reconstruct_traced, InitialGuess, ReconstructionResult, TraceEntry};

use crate::config::{self, parse_entries, parse_override, ExperimentConfig, InitialSpec};
use crate::error::{CliError, ConfigError, Result};
use crate::output;
use crate::presets;

/// Longest chain of `chain:<preset>` initial guesses followed.
pub const MAX_CHAIN_DEPTH: usize = 4;

/// Loads a configuration file (or the defaults) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let (mut entries, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            (parse_entries(&text)?, p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf))
        }
        None => (Vec::new(), PathBuf::from(".")),
    };
    for o in overrides {
        entries.push(parse_override(o)?);
    }
    Ok(config::build_config(entries, &base)?)
}

/// A preset's configuration with seed and overrides applied.
pub fn preset_config(name: &str, seed: u64, overrides: &[String]) -> Result<ExperimentConfig> {
    presets::preset(name)?;
    let mut entries = vec![parse_override(&format!("run.preset={name}"))?, parse_override(&format!("run.seed={seed}"))?];
    for o in overrides {
        entries.push(parse_override(o)?);
    }
    Ok(config::build_config(entries, Path::new("."))?)
}

/// Resolves a chained initial guess by running the named preset with this
/// experiment's lattice, seed and data.
fn resolve_chain(config: &ExperimentConfig, depth: usize) -> Result<ExperimentConfig> {
    let InitialSpec::Chain(name) = &config.initial else {
        return Ok(config.clone());
    };
    if depth >= MAX_CHAIN_DEPTH {
        return Err(
            ConfigError::Range { key: "initial.guess".into(), message: format!("chain deeper than {MAX_CHAIN_DEPTH} presets") }.into()
        );
    }
    let mut parent = presets::preset(name)?;
    let (rc, pc) = (&config.reconstruction, &mut parent.reconstruction);
    pc.lattice_size = rc.lattice_size;
    pc.mass = rc.mass;
    pc.beta = rc.beta;
    pc.seed = rc.seed;
    pc.data = rc.data.clone();
    parent.data_file = config.data_file.clone();
    let parent = resolve_chain(&parent, depth + 1)?;
    let previous = reconstruct_traced(&parent.reconstruction, &mut Vec::new())?;
    let mut resolved = config.clone();
    resolved.reconstruction.initial = InitialGuess::Given(previous.v_star);
    Ok(resolved)
}

/// Runs an experiment; `trace` holds the rows recorded so far, also when
/// the run fails.
pub fn run_experiment_traced(config: &ExperimentConfig, trace: &mut Vec<TraceEntry>) -> Result<ReconstructionResult> {
    trace.clear();
    let resolved = resolve_chain(config, 0)?;
    Ok(reconstruct_traced(&resolved.reconstruction, trace)?)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ReconstructionResult> {
    run_experiment_traced(config, &mut Vec::new())
}

pub fn run_preset(name: &str, seed: u64, overrides: &[String]) -> Result<ReconstructionResult> {
    run_experiment(&preset_config(name, seed, overrides)?)
}

/// Runs and writes the file set into `dir`; a failed run leaves its
/// configuration and partial trace there.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<ReconstructionResult> {
    let mut trace = Vec::new();
    match run_experiment_traced(config, &mut trace) {
        Ok(result) => {
            output::emit_csv(&result, config, dir)?;
            Ok(result)
        }
        Err(e) => {
            if matches!(e, CliError::Numerical(_)) {
                output::emit_failure(dir, config, &trace)?;
            }
            Err(e)
        }
    }
}
