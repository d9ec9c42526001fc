//! Bayesian reconstruction of one-dimensional lattice potentials from
//! position measurements of a quantum system in a canonical ensemble.
//!
//! The crate is organised along the pipeline:
//! [`lattice`] operators → [`ensemble`] spectra and likelihood →
//! [`priors`] energies → [`gradients`] → [`optimizer`], with
//! [`datagen`] providing the reference potential and reproducible samples.

pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod lattice;
mod linalg;
pub mod optimizer;
pub mod priors;

pub use datagen::{empirical_density, sample_positions, true_potential, SampleSet, SplitMix64};
pub use ensemble::{average_energy, build_hamiltonian, diagonalize, likelihood_density, log_likelihood, Ensemble, LogLikelihood};
pub use error::{BiqmError, Result};
pub use experiment::{
    reconstruct, reconstruct_traced, CovarianceSpec, DataSource, Diagnostics, InitialGuess, KappaSpec, OptimizerConfig, PriorSpec,
    ReconstructionConfig, ReconstructionResult, SteepnessSchedule, StopReason, TemplateSpec, TraceEntry, TraceEvent,
};
pub use gradients::{fd_check, grad_energy_penalty, grad_log_likelihood, grad_prior, DegeneracyPolicy, GradientReport};
pub use lattice::{Boundary, GridFunction, OperatorMatrix};
pub use optimizer::{anneal_binary_field, line_search, map_step, AnnealSchedule, IterationState, PreconditionerKind};
pub use priors::{FieldKind, FieldState, PriorModel, Steepness};
