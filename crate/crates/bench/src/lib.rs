//! Shared fixtures for the benchmarks: the N = 36 reference problem.

use biqm_core::experiment::{OptimizerConfig, PriorSpec, ReconstructionConfig, TemplateSpec};
use biqm_core::{
    likelihood_density, sample_positions, true_potential, CovarianceSpec, DataSource, Ensemble, GridFunction, InitialGuess, KappaSpec,
    PreconditionerKind, SampleSet,
};

pub const N: usize = 36;
pub const MASS: f64 = 0.25;
pub const BETA: f64 = 4.0;

pub fn reference_potential() -> GridFunction {
    true_potential(N)
}

pub fn reference_ensemble() -> Ensemble {
    Ensemble::for_potential(&reference_potential(), MASS, BETA).expect("reference potential is valid")
}

/// 200 measurements of the reference potential.
pub fn reference_samples(seed: u64) -> SampleSet {
    sample_positions(&likelihood_density(&reference_ensemble()), 200, seed).expect("density is normalized")
}

/// The energy-constrained smooth-prior experiment.
pub fn smooth_prior_config(seed: u64) -> ReconstructionConfig {
    let mut optimizer = OptimizerConfig::default_for(N);
    optimizer.preconditioner = PreconditionerKind::GaussNewton;
    ReconstructionConfig {
        lattice_size: N,
        mass: MASS,
        beta: BETA,
        seed,
        data: DataSource::Generate { count: 200 },
        prior: PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero },
        mu: 1000.0,
        kappa: KappaSpec::Auto,
        optimizer,
        initial: InitialGuess::Zero,
    }
}
