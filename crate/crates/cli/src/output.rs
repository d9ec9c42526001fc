//! CSV emission.
//!
//! Every run directory holds `potentials.csv`, `densities.csv`, `trace.csv`,
//! `diagnostics.csv`, the effective `config.ini` and the measurements in
//! `samples.txt`; runs with an auxiliary field add `field.csv`. Lattice
//! sites are written as x = 1..=N, reals with 17 significant digits in
//! scientific notation, lines end in `\n`, and column order is fixed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use biqm_core::experiment::{ReconstructionResult, TraceEntry};

use crate::config::{self, ExperimentConfig};
use crate::error::{CliError, Result};

/// The published average energy of the reference potential, written
/// next to the recomputed κ.
pub const REFERENCE_KAPPA: f64 = -0.330;

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn table(header: &[&str], columns: &[&[f64]]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        let _ = write!(out, "{}", i + 1);
        for column in columns {
            let _ = write!(out, ",{}", real(column[i]));
        }
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("iter,neg_log_post,grad_norm,mu,nu,event\n");
    for t in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.iteration,
            real(t.objective),
            real(t.gradient_norm),
            real(t.mu),
            real(t.nu),
            t.event.name()
        );
    }
    out
}

pub fn diagnostics_csv(result: &ReconstructionResult, config: &ExperimentConfig) -> String {
    let d = &result.diagnostics;
    let mut rows: Vec<(&str, String)> = vec![
        ("rmse", real(d.rmse)),
        ("rmse_unperturbed", real(d.rmse_unperturbed)),
        ("kl_emp_rec", real(d.kl_emp_rec)),
        ("kl_emp_true", real(d.kl_emp_true)),
        ("u_star", real(d.u_star)),
        ("u_true", real(d.u_true)),
        ("kappa", real(d.kappa)),
    ];
    if config.reconstruction.kappa == biqm_core::KappaSpec::Auto {
        rows.push(("kappa_reference", real(REFERENCE_KAPPA)));
    }
    rows.extend([
        ("u_gap", real(d.u_gap)),
        ("log_likelihood_rec", real(d.log_likelihood_rec)),
        ("log_likelihood_true", real(d.log_likelihood_true)),
        ("iterations", d.iterations.to_string()),
        ("stop_reason", d.stop_reason.name().to_string()),
        ("final_gradient_norm", real(d.final_gradient_norm)),
        ("final_objective", real(d.final_objective)),
        ("regularization_applied", d.regularization_applied.to_string()),
        ("jitter_retries", d.jitter_retries.to_string()),
        ("preconditioner", config.reconstruction.optimizer.preconditioner.name().to_string()),
        ("seed", config.reconstruction.seed.to_string()),
        ("samples", result.samples.len().to_string()),
    ]);
    if let Some((requested, used)) = d.period_rounding {
        rows.push(("period_requested", real(requested)));
        rows.push(("period_used", used.to_string()));
    }
    if let Some(n) = d.discontinuities {
        rows.push(("discontinuities", n.to_string()));
    }
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Writes the configuration and a partial trace for a failed run.
pub fn emit_failure(dir: &Path, config: &ExperimentConfig, trace: &[TraceEntry]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(dir, "config.ini", &config::to_text(config))?;
    write(dir, "trace.csv", &trace_csv(trace))?;
    Ok(())
}

/// Writes the full file set of a run; returns the paths written.
pub fn emit_csv(result: &ReconstructionResult, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = vec![
        write(
            dir,
            "potentials.csv",
            &table(
                &["x", "v_true", "v_rec", "v0_template"],
                &[result.v_true.as_slice(), result.v_star.as_slice(), result.template.as_slice()],
            ),
        )?,
        write(
            dir,
            "densities.csv",
            &table(&["x", "p_emp", "p_true", "p_rec"], &[result.p_emp.as_slice(), result.p_true.as_slice(), result.p_rec.as_slice()]),
        )?,
    ];
    if let Some(field) = &result.field {
        written.push(write(dir, "field.csv", &table(&["x", "field"], &[field.values.as_slice()]))?);
    }
    written.push(write(dir, "trace.csv", &trace_csv(&result.trace))?);
    written.push(write(dir, "diagnostics.csv", &diagnostics_csv(result, config))?);
    written.push(write(dir, "config.ini", &config::to_text(config))?);
    written.push(write(dir, "samples.txt", &result.samples.to_text())?);
    Ok(written)
}
