use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use biqm_cli::checks;
use biqm_cli::error::{CliError, Result};
use biqm_cli::output;
use biqm_cli::runner;
use biqm_cli::ExperimentConfig;
use biqm_core::datagen::{empirical_density, sample_positions, true_potential};
use biqm_core::ensemble::{likelihood_density, Ensemble};
use biqm_core::experiment::{DataSource, ReconstructionResult};

#[derive(Parser)]
#[command(name = "biqm", version, about = "Bayesian reconstruction of lattice potentials from thermal position measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a preset (overridden by --config keys and --override).
    #[arg(long)]
    preset: Option<String>,
    /// Random seed for data generation and annealing.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`, applied after the configuration file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw measurements from the reference potential.
    Sample(ConfigArgs),
    /// Reconstruct a potential from a configuration.
    Reconstruct(ConfigArgs),
    /// Run presets over seeds in parallel; writes <out>/<preset>/seed-<s>/.
    Preset {
        /// Preset name; repeat for several, `all` for every preset.
        #[arg(long, required = true)]
        preset: Vec<String>,
        /// Seed; repeat for several.
        #[arg(long, default_values_t = [1u64])]
        seed: Vec<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare every analytic gradient with central differences.
    CheckGradients,
    /// Annealer against exhaustive enumeration on a 12-site toy problem.
    AnnealDemo {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn experiment(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    overrides.extend(args.preset.as_ref().map(|p| format!("run.preset={p}")));
    overrides.extend(args.seed.map(|s| format!("run.seed={s}")));
    runner::load_config(args.config.as_deref(), &overrides)
}

fn summarize(result: &ReconstructionResult, dir: &Path) {
    let d = &result.diagnostics;
    println!(
        "{}: {} after {} iterations, rmse {:.4}, kl(emp|rec) {:.4}, kl(emp|true) {:.4}, U* {:.5} (kappa {:.5})",
        dir.display(),
        d.stop_reason.name(),
        d.iterations,
        d.rmse,
        d.kl_emp_rec,
        d.kl_emp_true,
        d.u_star,
        d.kappa
    );
}

fn sample(args: &ConfigArgs) -> Result<()> {
    let config = experiment(args)?;
    let rc = &config.reconstruction;
    let count = match &rc.data {
        DataSource::Generate { count } => *count,
        DataSource::Given(s) => s.len(),
    };
    let v_true = true_potential(rc.lattice_size);
    let p_true = likelihood_density(&Ensemble::for_potential(&v_true, rc.mass, rc.beta)?);
    let samples = sample_positions(&p_true, count, rc.seed)?;
    let p_emp = empirical_density(&samples, rc.lattice_size)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let path = args.out.join("samples.txt");
    std::fs::write(&path, samples.to_text()).map_err(|e| CliError::io(&path, e))?;
    let mut csv = String::from("x,p_emp,p_true\n");
    for x in 0..rc.lattice_size {
        csv.push_str(&format!("{},{},{}\n", x + 1, output::real(p_emp[x]), output::real(p_true[x])));
    }
    let dpath = args.out.join("densities.csv");
    std::fs::write(&dpath, csv).map_err(|e| CliError::io(&dpath, e))?;
    println!("{count} samples written to {}", path.display());
    Ok(())
}

fn presets(names: &[String], seeds: &[u64], overrides: &[String], out: &Path) -> Result<()> {
    let names: Vec<String> =
        if names.iter().any(|n| n == "all") { biqm_cli::PRESET_NAMES.iter().map(|s| s.to_string()).collect() } else { names.to_vec() };
    let jobs: Vec<(String, u64, ExperimentConfig)> = names
        .iter()
        .flat_map(|n| seeds.iter().map(move |&s| (n.clone(), s)))
        .map(|(n, s)| runner::preset_config(&n, s, overrides).map(|c| (n, s, c)))
        .collect::<Result<_>>()?;
    let outcomes: Vec<(PathBuf, Result<ReconstructionResult>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(name, seed, config)| {
                let dir = out.join(name).join(format!("seed-{seed}"));
                scope.spawn(move || {
                    let r = runner::run_to_dir(config, &dir);
                    (dir, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut first_error = None;
    for (dir, outcome) in outcomes {
        match outcome {
            Ok(result) => summarize(&result, &dir),
            Err(e) => {
                eprintln!("{}: {e}", dir.display());
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(args) => sample(&args),
        Command::Reconstruct(args) => {
            let config = experiment(&args)?;
            let result = runner::run_to_dir(&config, &args.out)?;
            summarize(&result, &args.out);
            Ok(())
        }
        Command::Preset { preset, seed, overrides, out } => presets(&preset, &seed, &overrides, &out),
        Command::CheckGradients => {
            let suite = checks::gradient_suite()?;
            let failed = suite.iter().filter(|c| !c.passed()).count();
            for c in &suite {
                println!("{c}");
            }
            println!("{} checks, {failed} failed", suite.len());
            if failed > 0 {
                return Err(CliError::CheckFailed(format!("{failed} gradient checks exceeded tolerance")));
            }
            Ok(())
        }
        Command::AnnealDemo { seed } => {
            let demo = checks::anneal_demo(seed)?;
            println!("enumerated optimum {:.12}", demo.optimum);
            for (i, e) in demo.runs.iter().enumerate() {
                let mark = if (e - demo.optimum).abs() <= 1e-12 { "optimum" } else { "missed" };
                println!("run {i}: {e:.12} {mark}");
            }
            println!("{}/{} runs reached the optimum", demo.hits(), demo.runs.len());
            println!("beta_ann = 0: {}/{} moves accepted", demo.zero_temperature_accepted, demo.zero_temperature_trials);
            if demo.hits() < 9 || demo.zero_temperature_accepted != demo.zero_temperature_trials {
                return Err(CliError::CheckFailed("annealer missed the enumeration optimum".into()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
