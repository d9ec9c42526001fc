//! Self-checks exposed as subcommands: the finite-difference gradient suite
//! and the annealer-versus-enumeration demonstration.

use std::fmt;

use nalgebra::DVector;

use biqm_core::datagen::{sample_positions, true_potential, SplitMix64};
use biqm_core::ensemble::{average_energy, likelihood_density, log_likelihood, Ensemble};
use biqm_core::experiment::{build_prior, CovarianceSpec, PriorSpec, TemplateSpec};
use biqm_core::gradients::DegeneracyPolicy;
use biqm_core::gradients::{
    energy_penalty, fd_check, grad_eigenvalue, grad_energy_penalty, grad_log_likelihood_with, grad_log_partition, grad_prior,
};
use biqm_core::optimizer::{anneal_binary_field, metropolis_sweep, AnnealSchedule};
use biqm_core::priors::{discontinuity_count, CupParams, FieldState, Steepness};
use biqm_core::{GridFunction, Result};

pub const FD_STEP: f64 = 1e-5;
pub const SPECTRAL_TOLERANCE: f64 = 1e-4;
pub const PRIOR_TOLERANCE: f64 = 1e-6;
pub const SUITE_SIZE: usize = 36;
pub const SUITE_POTENTIALS: u64 = 10;
const MASS: f64 = 0.25;
const BETA: f64 = 4.0;

/// One gradient compared against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub name: String,
    pub seed: u64,
    pub error: f64,
    pub tolerance: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for GradientCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok" } else { "FAIL" };
        write!(f, "{status:4} seed {:2} {:28} error {:.3e} (tolerance {:.0e})", self.seed, self.name, self.error, self.tolerance)
    }
}

/// The reference potential plus a seeded perturbation of amplitude 0.5.
pub fn suite_potential(seed: u64, n: usize) -> GridFunction {
    let mut rng = SplitMix64::new(seed);
    let base = true_potential(n);
    GridFunction::new((0..n).map(|x| base[x] + 0.5 * (2.0 * rng.next_f64() - 1.0)).collect()).expect("finite values")
}

fn suite_priors() -> Vec<(&'static str, PriorSpec)> {
    let sine = TemplateSpec::Sine { amplitude: 1.0, period: 6.0, phase: 0.0 };
    let v1 = TemplateSpec::Sine { amplitude: 2.0 / 3.0, period: 6.0, phase: 0.0 };
    let v2 = TemplateSpec::SignedSquare { period: 6.0 };
    vec![
        ("prior gaussian laplacian", PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Laplacian, template: sine }),
        (
            "prior gaussian periodic",
            PriorSpec::Gaussian {
                lambda: 0.2,
                covariance: CovarianceSpec::Periodic { gamma: 1.0, period: 6.0 },
                template: TemplateSpec::Zero,
            },
        ),
        ("prior switch-fixed", PriorSpec::SwitchFixed { lambda1: 0.2, lambda2: 0.2, threshold: 0.15, template: sine }),
        (
            "prior switch-two",
            PriorSpec::SwitchTwo { lambda1: 10.0, lambda2: 10.0, threshold: 0.0, tau: 20.0, template1: v1, template2: v2 },
        ),
        ("prior hyperfield", PriorSpec::Hyperfield { lambda1: 10.0, lambda2: 1.0, tau: 20.0, template1: v1, template2: v2 }),
        ("prior cup", PriorSpec::Cup { params: CupParams { a: 1.0, b: 1.0, gamma: 2.0, x0: 0.0 }, template: sine }),
    ]
}

/// Every analytic gradient against central differences at one seeded
/// potential: likelihood, three eigenvalues, the energy penalty, ln Z and
/// each prior variant (sigmoid steepness ν = 2, a seeded binary hyperfield).
pub fn gradient_checks_for(seed: u64, n: usize) -> Result<Vec<GradientCheck>> {
    let v = suite_potential(seed, n);
    let ensemble = |v: &GridFunction| Ensemble::for_potential(v, MASS, BETA);
    let at = |x: &DVector<f64>| GridFunction::from_vector(x.clone()).and_then(|g| ensemble(&g));
    let e = ensemble(&v)?;
    let data = sample_positions(&likelihood_density(&ensemble(&true_potential(n))?), 200, seed)?;
    let mut checks = Vec::new();
    let mut push = |name: String, error: f64, tolerance: f64| checks.push(GradientCheck { name, seed, error, tolerance });

    let g = grad_log_likelihood_with(&e, &data, DegeneracyPolicy::Strict)?.gradient;
    push(
        "likelihood".into(),
        fd_check(|x| Ok(log_likelihood(&data, &at(x)?)?.value), g.as_vector(), v.as_vector(), FD_STEP)?,
        SPECTRAL_TOLERANCE,
    );

    for alpha in [0, 1, n / 2] {
        let g = grad_eigenvalue(&e, alpha)?;
        let error = fd_check(|x| Ok(at(x)?.eigenvalues()[alpha]), g.as_vector(), v.as_vector(), FD_STEP)?;
        push(format!("eigenvalue {alpha}"), error, SPECTRAL_TOLERANCE);
    }

    let (mu, kappa) = (1000.0, average_energy(&ensemble(&true_potential(n))?));
    let g = grad_energy_penalty(&e, mu, kappa)?;
    push(
        "energy penalty".into(),
        fd_check(|x| Ok(energy_penalty(&at(x)?, mu, kappa)), g.as_vector(), v.as_vector(), FD_STEP)?,
        SPECTRAL_TOLERANCE,
    );

    let g = grad_log_partition(&e);
    push("log partition".into(), fd_check(|x| Ok(at(x)?.log_partition()), g.as_vector(), v.as_vector(), FD_STEP)?, SPECTRAL_TOLERANCE);

    let mut rng = SplitMix64::new(seed).fork(7);
    let theta = FieldState::binary((0..n).map(|_| rng.below(2) as f64).collect())?;
    for (name, spec) in suite_priors() {
        let (model, _) = build_prior(&spec, n, Steepness::Finite(2.0), Some(&theta))?;
        let g = grad_prior(&model, &v)?.gradient;
        push(name.into(), fd_check(|x| model.energy(x), g.as_vector(), v.as_vector(), FD_STEP)?, PRIOR_TOLERANCE);
    }
    Ok(checks)
}

/// The full suite over seeds 1..=10 on N = 36.
pub fn gradient_suite() -> Result<Vec<GradientCheck>> {
    let mut all = Vec::new();
    for seed in 1..=SUITE_POTENTIALS {
        all.extend(gradient_checks_for(seed, SUITE_SIZE)?);
    }
    Ok(all)
}

/// A 12-site binary problem: seeded site fields plus a coupling per
/// discontinuity.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub fields: Vec<f64>,
    pub coupling: f64,
}

impl ToyProblem {
    pub const SIZE: usize = 12;

    pub fn seeded(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self { fields: (0..Self::SIZE).map(|_| 2.0 * rng.next_f64() - 1.0).collect(), coupling: 0.6 }
    }

    pub fn energy(&self, b: &[f64]) -> f64 {
        let local: f64 = self.fields.iter().zip(b).map(|(h, b)| h * b).sum();
        local + self.coupling * discontinuity_count(b) as f64
    }

    /// Minimum over all 2¹² fields.
    pub fn enumerate_minimum(&self) -> f64 {
        let n = Self::SIZE;
        (0u32..1 << n)
            .map(|bits| {
                let b: Vec<f64> = (0..n).map(|i| f64::from((bits >> i) & 1)).collect();
                self.energy(&b)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealDemo {
    pub optimum: f64,
    /// Best energy found by each run.
    pub runs: Vec<f64>,
    pub zero_temperature_trials: usize,
    pub zero_temperature_accepted: usize,
}

impl AnnealDemo {
    pub fn hits(&self) -> usize {
        self.runs.iter().filter(|&&e| (e - self.optimum).abs() <= 1e-12).count()
    }
}

/// Ten seeded annealing runs against enumeration, then 10⁴ moves at β_ann = 0.
pub fn anneal_demo(problem_seed: u64) -> Result<AnnealDemo> {
    let problem = ToyProblem::seeded(problem_seed);
    let optimum = problem.enumerate_minimum();
    let schedule = AnnealSchedule::default_for(ToyProblem::SIZE);
    let start = FieldState::binary(vec![0.0; ToyProblem::SIZE])?;
    let mut runs = Vec::new();
    for run in 0..10 {
        let mut rng = SplitMix64::new(problem_seed).fork(100 + run);
        let outcome = anneal_binary_field(&start, |b| Ok(problem.energy(b.as_slice())), &schedule, &mut rng)?;
        runs.push(outcome.energy);
    }

    let trials = 10_000;
    let mut rng = SplitMix64::new(problem_seed).fork(999);
    let mut field = start.values.as_vector().clone();
    let mut energy = problem.energy(field.as_slice());
    let mut best = (field.clone(), energy);
    let mut energy_fn = |b: &DVector<f64>| Ok(problem.energy(b.as_slice()));
    let accepted = metropolis_sweep(&mut field, &mut energy, &mut energy_fn, 0.0, trials, &mut rng, &mut best)?;
    Ok(AnnealDemo { optimum, runs, zero_temperature_trials: trials, zero_temperature_accepted: accepted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_seed_of_the_suite_passes() {
        let checks = gradient_checks_for(3, 12).unwrap();
        assert_eq!(checks.len(), 6 + suite_priors().len());
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn toy_problem_enumeration() {
        let p = ToyProblem { fields: vec![-1.0; 12], coupling: 0.5 };
        assert_eq!(p.enumerate_minimum(), -12.0);
        let p = ToyProblem { fields: vec![1.0; 12], coupling: 0.5 };
        assert_eq!(p.enumerate_minimum(), 0.0);
    }

    #[test]
    fn anneal_demo_finds_optimum() {
        let demo = anneal_demo(1).unwrap();
        assert!(demo.hits() >= 9, "{demo:?}");
        assert_eq!(demo.zero_temperature_accepted, demo.zero_temperature_trials);
    }
}
