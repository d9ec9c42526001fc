//! The experiment configuration grammar.
//!
//! A configuration is a sequence of `[section]` headers and `key = value`
//! lines. Blank lines and lines starting with `#` or `;` are ignored. Every
//! key belongs to one of the sections `lattice`, `data`, `prior`, `energy`,
//! `optimizer`, `initial` and `run`; unknown sections or keys and repeated
//! keys are errors that report their line number. A `run.preset` key starts
//! from that preset's configuration and the remaining keys override it.
//!
//! Structured values use a call syntax with real arguments:
//!
//! | key                     | values                                                          |
//! |-------------------------|-----------------------------------------------------------------|
//! | `prior.kind`            | `gaussian`, `switch-fixed`, `switch-two`, `hyperfield`, `cup`   |
//! | `prior.template*`       | `zero`, `sine(amplitude, period, phase)`, `signed-square(period)` |
//! | `prior.covariance`      | `laplacian`, `identity`, `periodic(gamma, period)`              |
//! | `optimizer.steepness`   | `step`, `fixed(nu)`, `ramp(start, end, stages)`                 |
//! | `optimizer.preconditioner` | `prior`, `identity`, `gauss-newton`                          |
//! | `energy.kappa`          | `auto` or a number                                              |
//! | `initial.guess`         | `zero`, `template`, `masked-template`, `annealed-mix`, `chain:<preset>`, `file:<path>` |
//!
//! Relative paths are resolved against the directory of the configuration
//! file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use biqm_core::experiment::{
    CovarianceSpec, DataSource, InitialGuess, KappaSpec, OptimizerConfig, PriorSpec, ReconstructionConfig, SteepnessSchedule, TemplateSpec,
};
use biqm_core::optimizer::PreconditionerKind;
use biqm_core::priors::CupParams;
use biqm_core::{BiqmError, GridFunction, SampleSet};

use crate::error::{ConfigError, Origin};
use crate::presets;

pub const SECTIONS: [&str; 7] = ["lattice", "data", "prior", "energy", "optimizer", "initial", "run"];

/// Initial guess as written in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Zero,
    Template,
    MaskedTemplate,
    AnnealedMix,
    /// The solution of another preset, run with this experiment's seed and data.
    Chain(String),
    /// A potential read from a file; loaded into the reconstruction config.
    File(PathBuf),
}

/// A parsed experiment: the reconstruction config plus the file references
/// it was loaded from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub reconstruction: ReconstructionConfig,
    /// Sample file as written in the configuration (`data.file`).
    pub data_file: Option<PathBuf>,
    pub initial: InitialSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let n = 36;
        let mut optimizer = OptimizerConfig::default_for(n);
        optimizer.preconditioner = PreconditionerKind::GaussNewton;
        Self {
            reconstruction: ReconstructionConfig {
                lattice_size: n,
                mass: 0.25,
                beta: 4.0,
                seed: 1,
                data: DataSource::Generate { count: 200 },
                prior: default_prior("gaussian").expect("known kind"),
                mu: 0.0,
                kappa: KappaSpec::Auto,
                optimizer,
                initial: InitialGuess::Zero,
            },
            data_file: None,
            initial: InitialSpec::Zero,
        }
    }
}

/// One `key = value` assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

impl Entry {
    fn name(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }

    fn invalid(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Value { origin: self.origin.clone(), key: self.name(), message: message.into() }
    }
}

/// Splits configuration text into entries, checking the section names.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut section: Option<String> = None;
    let mut entries = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let origin = Origin::Line(index + 1);
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { origin: origin.clone(), message: format!("unterminated section header {line:?}") })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::UnknownSection { origin, section: name.to_string() });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { origin: origin.clone(), message: format!("expected `key = value`, found {line:?}") })?;
        let section = section
            .clone()
            .ok_or_else(|| ConfigError::Syntax { origin: origin.clone(), message: "assignment before the first [section]".into() })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { origin, message: "empty key".into() });
        }
        entries.push(Entry { section, key: key.to_string(), value: value.trim().to_string(), origin });
    }
    Ok(entries)
}

/// Parses a `section.key=value` command-line override.
pub fn parse_override(text: &str) -> Result<Entry, ConfigError> {
    let syntax = |message: String| ConfigError::Syntax { origin: Origin::Override, message };
    let (name, value) = text.split_once('=').ok_or_else(|| syntax(format!("expected `section.key=value`, found {text:?}")))?;
    let (section, key) = name.trim().split_once('.').ok_or_else(|| syntax(format!("key {name:?} must be `section.key`")))?;
    if !SECTIONS.contains(&section) {
        return Err(ConfigError::UnknownSection { origin: Origin::Override, section: section.to_string() });
    }
    Ok(Entry { section: section.to_string(), key: key.to_string(), value: value.trim().to_string(), origin: Origin::Override })
}

/// Parses configuration text; `base_dir` anchors relative paths.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    build_config(parse_entries(text)?, base_dir)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

/// Builds a validated configuration from entries: preset first, then the
/// prior kind, then every other key in order.
pub fn build_config(entries: Vec<Entry>, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for e in &entries {
        if let Origin::Line(line) = e.origin {
            if let Some(&first) = seen.get(&e.name()) {
                return Err(ConfigError::DuplicateKey { origin: e.origin.clone(), key: e.name(), first });
            }
            seen.insert(e.name(), line);
        }
    }
    // later entries (overrides) win for the two ordering-sensitive keys
    let preset = entries.iter().rev().find(|e| e.name() == "run.preset");
    let mut config = match preset {
        Some(e) => presets::preset(&e.value).map_err(|_| e.invalid(format!("unknown preset {:?}", e.value)))?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = entries.iter().rev().find(|e| e.name() == "prior.kind") {
        if config.reconstruction.prior.kind_name() != e.value {
            config.reconstruction.prior = default_prior(&e.value).ok_or_else(|| {
                e.invalid(format!("expected one of gaussian, switch-fixed, switch-two, hyperfield, cup; found {:?}", e.value))
            })?;
        }
    }
    for e in entries.iter().filter(|e| e.name() != "run.preset" && e.name() != "prior.kind") {
        apply_entry(&mut config, e, base_dir)?;
    }
    validate(&config)?;
    Ok(config)
}

/// Range checks with the offending key named.
pub fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    config.reconstruction.validate().map_err(|e| match e {
        BiqmError::InvalidParameter { name, reason } => ConfigError::Range { key: name.to_string(), message: reason },
        other => ConfigError::Range { key: "config".into(), message: other.to_string() },
    })
}

/// A prior of the given kind with the reference experiments' parameters.
pub fn default_prior(kind: &str) -> Option<PriorSpec> {
    let sine = TemplateSpec::Sine { amplitude: 1.0, period: 6.0, phase: 0.0 };
    let v1 = TemplateSpec::Sine { amplitude: 2.0 / 3.0, period: 6.0, phase: 0.0 };
    let v2 = TemplateSpec::SignedSquare { period: 6.0 };
    Some(match kind {
        "gaussian" => PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero },
        "switch-fixed" => PriorSpec::SwitchFixed { lambda1: 0.2, lambda2: 0.2, threshold: 0.15, template: sine },
        "switch-two" => PriorSpec::SwitchTwo { lambda1: 10.0, lambda2: 10.0, threshold: 0.0, tau: 20.0, template1: v1, template2: v2 },
        "hyperfield" => PriorSpec::Hyperfield { lambda1: 10.0, lambda2: 1.0, tau: 20.0, template1: v1, template2: v2 },
        "cup" => PriorSpec::Cup { params: CupParams { a: 1.0, b: 1.0, gamma: 2.0, x0: 0.0 }, template: sine },
        _ => return None,
    })
}

fn parse_f64(e: &Entry) -> Result<f64, ConfigError> {
    e.value.parse::<f64>().map_err(|_| e.invalid(format!("expected a number, found {:?}", e.value)))
}

fn parse_usize(e: &Entry) -> Result<usize, ConfigError> {
    e.value.parse::<usize>().map_err(|_| e.invalid(format!("expected a nonnegative integer, found {:?}", e.value)))
}

/// `name` or `name(a, b, …)` with real arguments.
fn parse_call(e: &Entry) -> Result<(String, Vec<f64>), ConfigError> {
    let v = e.value.as_str();
    let Some(open) = v.find('(') else {
        return Ok((v.to_string(), Vec::new()));
    };
    let inner = v[open + 1..].strip_suffix(')').ok_or_else(|| e.invalid("missing closing parenthesis"))?;
    let args = inner
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| e.invalid(format!("argument {:?} is not a number", a.trim()))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((v[..open].trim().to_string(), args))
}

fn expect_args(e: &Entry, name: &str, args: &[f64], count: usize) -> Result<(), ConfigError> {
    if args.len() != count {
        return Err(e.invalid(format!("{name} takes {count} argument(s), found {}", args.len())));
    }
    Ok(())
}

fn parse_template(e: &Entry) -> Result<TemplateSpec, ConfigError> {
    let (name, args) = parse_call(e)?;
    match name.as_str() {
        "zero" => {
            expect_args(e, "zero", &args, 0)?;
            Ok(TemplateSpec::Zero)
        }
        "sine" => {
            expect_args(e, "sine", &args, 3)?;
            Ok(TemplateSpec::Sine { amplitude: args[0], period: args[1], phase: args[2] })
        }
        "signed-square" => {
            expect_args(e, "signed-square", &args, 1)?;
            Ok(TemplateSpec::SignedSquare { period: args[0] })
        }
        other => Err(e.invalid(format!("unknown template {other:?}"))),
    }
}

fn parse_covariance(e: &Entry) -> Result<CovarianceSpec, ConfigError> {
    let (name, args) = parse_call(e)?;
    match name.as_str() {
        "laplacian" => {
            expect_args(e, "laplacian", &args, 0)?;
            Ok(CovarianceSpec::Laplacian)
        }
        "identity" => {
            expect_args(e, "identity", &args, 0)?;
            Ok(CovarianceSpec::Identity)
        }
        "periodic" => {
            expect_args(e, "periodic", &args, 2)?;
            Ok(CovarianceSpec::Periodic { gamma: args[0], period: args[1] })
        }
        other => Err(e.invalid(format!("unknown covariance {other:?}"))),
    }
}

fn parse_steepness(e: &Entry) -> Result<SteepnessSchedule, ConfigError> {
    let (name, args) = parse_call(e)?;
    match name.as_str() {
        "step" => {
            expect_args(e, "step", &args, 0)?;
            Ok(SteepnessSchedule::Step)
        }
        "fixed" => {
            expect_args(e, "fixed", &args, 1)?;
            Ok(SteepnessSchedule::Fixed(args[0]))
        }
        "ramp" => {
            expect_args(e, "ramp", &args, 3)?;
            if !(args[2] >= 1.0 && args[2].fract() == 0.0) {
                return Err(e.invalid("ramp stage count must be a positive integer"));
            }
            Ok(SteepnessSchedule::Ramp { start: args[0], end: args[1], stages: args[2] as usize })
        }
        other => Err(e.invalid(format!("unknown steepness schedule {other:?}"))),
    }
}

fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// Reads a potential: either a `potentials.csv` written by this tool (the
/// `v_rec` column) or one value per line.
pub fn read_potential(path: &Path, n: usize) -> Result<GridFunction, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let mut values = Vec::new();
    let first = lines.next().ok_or("file is empty")?;
    if first.contains("v_rec") {
        let column = first.split(',').position(|c| c.trim() == "v_rec").expect("header contains v_rec");
        for (i, line) in lines.enumerate() {
            let cell = line.split(',').nth(column).ok_or_else(|| format!("row {} has no v_rec column", i + 2))?;
            values.push(cell.trim().parse::<f64>().map_err(|_| format!("row {}: invalid number {cell:?}", i + 2))?);
        }
    } else {
        for line in std::iter::once(first).chain(lines) {
            values.push(line.trim().parse::<f64>().map_err(|_| format!("invalid number {:?}", line.trim()))?);
        }
    }
    if values.len() != n {
        return Err(format!("expected {n} values, found {}", values.len()));
    }
    GridFunction::new(values).map_err(|e| e.to_string())
}

fn apply_entry(config: &mut ExperimentConfig, e: &Entry, base_dir: &Path) -> Result<(), ConfigError> {
    let rc = &mut config.reconstruction;
    let kind = rc.prior.kind_name();
    let not_for_kind = || e.invalid(format!("does not apply to prior kind {kind}"));
    match (e.section.as_str(), e.key.as_str()) {
        ("lattice", "n") => rc.lattice_size = parse_usize(e)?,
        ("lattice", "mass") => rc.mass = parse_f64(e)?,
        ("lattice", "beta") => rc.beta = parse_f64(e)?,
        ("data", "samples") => {
            rc.data = DataSource::Generate { count: parse_usize(e)? };
            config.data_file = None;
        }
        ("data", "file") => {
            let written = PathBuf::from(&e.value);
            let path = resolve(base_dir, &written);
            let text = std::fs::read_to_string(&path).map_err(|err| ConfigError::File { path: path.clone(), message: err.to_string() })?;
            let samples = SampleSet::from_text(&text).map_err(|err| ConfigError::File { path: path.clone(), message: err.to_string() })?;
            rc.data = DataSource::Given(samples);
            config.data_file = Some(written);
        }
        ("prior", key) => match (key, &mut rc.prior) {
            ("lambda", PriorSpec::Gaussian { lambda, .. }) => *lambda = parse_f64(e)?,
            ("covariance", PriorSpec::Gaussian { covariance, .. }) => *covariance = parse_covariance(e)?,
            (
                "template",
                PriorSpec::Gaussian { template, .. } | PriorSpec::SwitchFixed { template, .. } | PriorSpec::Cup { template, .. },
            ) => *template = parse_template(e)?,
            (
                "lambda1",
                PriorSpec::SwitchFixed { lambda1, .. } | PriorSpec::SwitchTwo { lambda1, .. } | PriorSpec::Hyperfield { lambda1, .. },
            ) => *lambda1 = parse_f64(e)?,
            (
                "lambda2",
                PriorSpec::SwitchFixed { lambda2, .. } | PriorSpec::SwitchTwo { lambda2, .. } | PriorSpec::Hyperfield { lambda2, .. },
            ) => *lambda2 = parse_f64(e)?,
            ("threshold", PriorSpec::SwitchFixed { threshold, .. } | PriorSpec::SwitchTwo { threshold, .. }) => *threshold = parse_f64(e)?,
            ("tau", PriorSpec::SwitchTwo { tau, .. } | PriorSpec::Hyperfield { tau, .. }) => *tau = parse_f64(e)?,
            ("template1", PriorSpec::SwitchTwo { template1, .. } | PriorSpec::Hyperfield { template1, .. }) => {
                *template1 = parse_template(e)?
            }
            ("template2", PriorSpec::SwitchTwo { template2, .. } | PriorSpec::Hyperfield { template2, .. }) => {
                *template2 = parse_template(e)?
            }
            ("a", PriorSpec::Cup { params, .. }) => params.a = parse_f64(e)?,
            ("b", PriorSpec::Cup { params, .. }) => params.b = parse_f64(e)?,
            ("gamma", PriorSpec::Cup { params, .. }) => params.gamma = parse_f64(e)?,
            ("x0", PriorSpec::Cup { params, .. }) => params.x0 = parse_f64(e)?,
            (
                "lambda" | "covariance" | "template" | "lambda1" | "lambda2" | "threshold" | "tau" | "template1" | "template2" | "a" | "b"
                | "gamma" | "x0",
                _,
            ) => return Err(not_for_kind()),
            _ => return Err(ConfigError::UnknownKey { origin: e.origin.clone(), key: e.name() }),
        },
        ("energy", "mu") => rc.mu = parse_f64(e)?,
        ("energy", "kappa") => {
            rc.kappa = if e.value == "auto" { KappaSpec::Auto } else { KappaSpec::Value(parse_f64(e)?) };
        }
        ("optimizer", "preconditioner") => {
            rc.optimizer.preconditioner = match e.value.as_str() {
                "prior" => PreconditionerKind::Prior,
                "identity" => PreconditionerKind::Identity,
                "gauss-newton" => PreconditionerKind::GaussNewton,
                other => return Err(e.invalid(format!("expected prior, identity or gauss-newton; found {other:?}"))),
            }
        }
        ("optimizer", "tolerance") => rc.optimizer.tolerance = parse_f64(e)?,
        ("optimizer", "max_iterations") => rc.optimizer.max_iterations = parse_usize(e)?,
        ("optimizer", "stage_iterations") => rc.optimizer.stage_iterations = parse_usize(e)?,
        ("optimizer", "mu_stages") => rc.optimizer.mu_stages = parse_usize(e)?,
        ("optimizer", "steepness") => rc.optimizer.steepness = parse_steepness(e)?,
        ("optimizer", "anneal_t_start") => rc.optimizer.anneal.t_start = parse_f64(e)?,
        ("optimizer", "anneal_t_end") => rc.optimizer.anneal.t_end = parse_f64(e)?,
        ("optimizer", "anneal_cooling") => rc.optimizer.anneal.cooling = parse_f64(e)?,
        ("optimizer", "anneal_moves") => rc.optimizer.anneal.moves_per_temperature = parse_usize(e)?,
        ("optimizer", "field_update_interval") => rc.optimizer.field_update_interval = parse_usize(e)?,
        ("initial", "guess") => {
            let value = e.value.as_str();
            let (spec, guess) = if let Some(name) = value.strip_prefix("chain:") {
                if !presets::PRESET_NAMES.contains(&name) {
                    return Err(e.invalid(format!("unknown preset {name:?} in chain")));
                }
                (InitialSpec::Chain(name.to_string()), InitialGuess::Zero)
            } else if let Some(file) = value.strip_prefix("file:") {
                let written = PathBuf::from(file);
                let path = resolve(base_dir, &written);
                let v = read_potential(&path, rc.lattice_size).map_err(|message| ConfigError::File { path, message })?;
                (InitialSpec::File(written), InitialGuess::Given(v))
            } else {
                match value {
                    "zero" => (InitialSpec::Zero, InitialGuess::Zero),
                    "template" => (InitialSpec::Template, InitialGuess::Template),
                    "masked-template" => (InitialSpec::MaskedTemplate, InitialGuess::MaskedTemplate),
                    "annealed-mix" => (InitialSpec::AnnealedMix, InitialGuess::AnnealedMix),
                    other => return Err(e.invalid(format!("unknown initial guess {other:?}"))),
                }
            };
            config.initial = spec;
            rc.initial = guess;
        }
        ("run", "seed") => rc.seed = e.value.parse::<u64>().map_err(|_| e.invalid(format!("expected a u64, found {:?}", e.value)))?,
        _ => return Err(ConfigError::UnknownKey { origin: e.origin.clone(), key: e.name() }),
    }
    Ok(())
}

fn template_text(t: &TemplateSpec) -> String {
    match *t {
        TemplateSpec::Zero => "zero".into(),
        TemplateSpec::Sine { amplitude, period, phase } => format!("sine({amplitude}, {period}, {phase})"),
        TemplateSpec::SignedSquare { period } => format!("signed-square({period})"),
    }
}

/// Writes a configuration that parses back to an equal value.
pub fn to_text(config: &ExperimentConfig) -> String {
    let rc = &config.reconstruction;
    let mut out = String::new();
    let mut section = |name: &str, keys: Vec<(&str, String)>| {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in keys {
            out.push_str(&format!("{k} = {v}\n"));
        }
    };
    section("lattice", vec![("n", rc.lattice_size.to_string()), ("mass", rc.mass.to_string()), ("beta", rc.beta.to_string())]);
    section(
        "data",
        match (&config.data_file, &rc.data) {
            (Some(path), _) => vec![("file", path.display().to_string())],
            (None, DataSource::Generate { count }) => vec![("samples", count.to_string())],
            (None, DataSource::Given(s)) => vec![("samples", s.len().to_string())],
        },
    );
    let mut prior = vec![("kind", rc.prior.kind_name().to_string())];
    match &rc.prior {
        PriorSpec::Gaussian { lambda, covariance, template } => {
            prior.push(("lambda", lambda.to_string()));
            prior.push((
                "covariance",
                match covariance {
                    CovarianceSpec::Laplacian => "laplacian".into(),
                    CovarianceSpec::Identity => "identity".into(),
                    CovarianceSpec::Periodic { gamma, period } => format!("periodic({gamma}, {period})"),
                },
            ));
            prior.push(("template", template_text(template)));
        }
        PriorSpec::SwitchFixed { lambda1, lambda2, threshold, template } => {
            prior.push(("lambda1", lambda1.to_string()));
            prior.push(("lambda2", lambda2.to_string()));
            prior.push(("threshold", threshold.to_string()));
            prior.push(("template", template_text(template)));
        }
        PriorSpec::SwitchTwo { lambda1, lambda2, threshold, tau, template1, template2 } => {
            prior.push(("lambda1", lambda1.to_string()));
            prior.push(("lambda2", lambda2.to_string()));
            prior.push(("threshold", threshold.to_string()));
            prior.push(("tau", tau.to_string()));
            prior.push(("template1", template_text(template1)));
            prior.push(("template2", template_text(template2)));
        }
        PriorSpec::Hyperfield { lambda1, lambda2, tau, template1, template2 } => {
            prior.push(("lambda1", lambda1.to_string()));
            prior.push(("lambda2", lambda2.to_string()));
            prior.push(("tau", tau.to_string()));
            prior.push(("template1", template_text(template1)));
            prior.push(("template2", template_text(template2)));
        }
        PriorSpec::Cup { params, template } => {
            prior.push(("a", params.a.to_string()));
            prior.push(("b", params.b.to_string()));
            prior.push(("gamma", params.gamma.to_string()));
            prior.push(("x0", params.x0.to_string()));
            prior.push(("template", template_text(template)));
        }
    }
    section("prior", prior);
    section(
        "energy",
        vec![
            ("mu", rc.mu.to_string()),
            (
                "kappa",
                match rc.kappa {
                    KappaSpec::Auto => "auto".into(),
                    KappaSpec::Value(k) => k.to_string(),
                },
            ),
        ],
    );
    let o = &rc.optimizer;
    section(
        "optimizer",
        vec![
            ("preconditioner", o.preconditioner.name().to_string()),
            ("tolerance", o.tolerance.to_string()),
            ("max_iterations", o.max_iterations.to_string()),
            ("stage_iterations", o.stage_iterations.to_string()),
            ("mu_stages", o.mu_stages.to_string()),
            (
                "steepness",
                match o.steepness {
                    SteepnessSchedule::Step => "step".into(),
                    SteepnessSchedule::Fixed(nu) => format!("fixed({nu})"),
                    SteepnessSchedule::Ramp { start, end, stages } => format!("ramp({start}, {end}, {stages})"),
                },
            ),
            ("anneal_t_start", o.anneal.t_start.to_string()),
            ("anneal_t_end", o.anneal.t_end.to_string()),
            ("anneal_cooling", o.anneal.cooling.to_string()),
            ("anneal_moves", o.anneal.moves_per_temperature.to_string()),
            ("field_update_interval", o.field_update_interval.to_string()),
        ],
    );
    section(
        "initial",
        vec![(
            "guess",
            match &config.initial {
                InitialSpec::Zero => "zero".into(),
                InitialSpec::Template => "template".into(),
                InitialSpec::MaskedTemplate => "masked-template".into(),
                InitialSpec::AnnealedMix => "annealed-mix".into(),
                InitialSpec::Chain(name) => format!("chain:{name}"),
                InitialSpec::File(path) => format!("file:{}", path.display()),
            },
        )],
    );
    section("run", vec![("seed", rc.seed.to_string())]);
    out
}
