//! The reference reconstruction experiments.
//!
//! Every preset shares the data model of the first experiment: N = 36,
//! m = 0.25, β = 4, 200 measurements of the reference potential. The tables
//! below pin each experiment's parameters; `optimizer.preconditioner` is
//! `gauss-newton` throughout so the runs meet the convergence tolerance
//! (set it to `prior` for the plain A = K0 iteration).

use biqm_core::experiment::{CovarianceSpec, InitialGuess, KappaSpec, PriorSpec, SteepnessSchedule, TemplateSpec};

use crate::config::{ExperimentConfig, InitialSpec};
use crate::error::ConfigError;

pub const PRESET_NAMES: [&str; 8] = ["fig-p162", "fig-p19", "fig-p22", "fig-p155", "fig-p31", "fig-p102", "fig-p75", "fig-p120"];

const PERIODIC_TEMPLATE: TemplateSpec = TemplateSpec::Sine { amplitude: 1.0, period: 6.0, phase: 0.0 };
const SMOOTH_TEMPLATE: TemplateSpec = TemplateSpec::Sine { amplitude: 2.0 / 3.0, period: 6.0, phase: 0.0 };
const STEP_TEMPLATE: TemplateSpec = TemplateSpec::SignedSquare { period: 6.0 };

/// Segment-flip moves per temperature for the presets that anneal a
/// binary field: 4 per site keeps a 36-site run to seconds.
pub const PRESET_ANNEAL_MOVES_PER_SITE: usize = 4;

fn set_initial(c: &mut ExperimentConfig, spec: InitialSpec) {
    c.reconstruction.initial = match spec {
        InitialSpec::Zero | InitialSpec::Chain(_) => InitialGuess::Zero,
        InitialSpec::Template => InitialGuess::Template,
        InitialSpec::MaskedTemplate => InitialGuess::MaskedTemplate,
        InitialSpec::AnnealedMix => InitialGuess::AnnealedMix,
        InitialSpec::File(_) => unreachable!("presets do not read files"),
    };
    c.initial = spec;
}

/// The configuration of a named preset, with seed 1.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::default();
    let gaussian = |covariance, template| PriorSpec::Gaussian { lambda: 0.2, covariance, template };
    match name {
        "fig-p162" => {
            c.reconstruction.prior = gaussian(CovarianceSpec::Laplacian, TemplateSpec::Zero);
            c.reconstruction.mu = 1000.0;
            set_initial(&mut c, InitialSpec::Zero);
        }
        "fig-p19" => {
            c.reconstruction.prior = gaussian(CovarianceSpec::Laplacian, PERIODIC_TEMPLATE);
            c.reconstruction.mu = 0.0;
            set_initial(&mut c, InitialSpec::Template);
        }
        "fig-p22" => {
            c = preset("fig-p19")?;
            c.reconstruction.mu = 1000.0;
            set_initial(&mut c, InitialSpec::Chain("fig-p19".into()));
        }
        "fig-p155" => {
            c = preset("fig-p22")?;
            set_initial(&mut c, InitialSpec::MaskedTemplate);
        }
        "fig-p31" => {
            c.reconstruction.prior = gaussian(CovarianceSpec::Periodic { gamma: 1.0, period: 6.0 }, TemplateSpec::Zero);
            c.reconstruction.mu = 1000.0;
            set_initial(&mut c, InitialSpec::Zero);
        }
        "fig-p102" => {
            c.reconstruction.prior = PriorSpec::SwitchFixed { lambda1: 0.2, lambda2: 0.2, threshold: 0.15, template: PERIODIC_TEMPLATE };
            c.reconstruction.mu = 0.0;
            c.reconstruction.optimizer.steepness = SteepnessSchedule::Ramp { start: 1.0, end: 1e3, stages: 10 };
            set_initial(&mut c, InitialSpec::MaskedTemplate);
        }
        "fig-p75" => {
            c.reconstruction.prior = PriorSpec::SwitchTwo {
                lambda1: 10.0,
                lambda2: 10.0,
                threshold: 0.0,
                tau: 20.0,
                template1: SMOOTH_TEMPLATE,
                template2: STEP_TEMPLATE,
            };
            c.reconstruction.mu = 0.0;
            c.reconstruction.optimizer.steepness = SteepnessSchedule::Step;
            c.reconstruction.optimizer.anneal.moves_per_temperature = PRESET_ANNEAL_MOVES_PER_SITE * c.reconstruction.lattice_size;
            set_initial(&mut c, InitialSpec::AnnealedMix);
        }
        "fig-p120" => {
            c.reconstruction.prior =
                PriorSpec::Hyperfield { lambda1: 10.0, lambda2: 1.0, tau: 20.0, template1: SMOOTH_TEMPLATE, template2: STEP_TEMPLATE };
            c.reconstruction.mu = 0.0;
            c.reconstruction.optimizer.anneal.moves_per_temperature = PRESET_ANNEAL_MOVES_PER_SITE * c.reconstruction.lattice_size;
            set_initial(&mut c, InitialSpec::AnnealedMix);
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    c.reconstruction.kappa = KappaSpec::Auto;
    Ok(c)
}
