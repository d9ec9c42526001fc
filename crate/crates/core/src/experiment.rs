//! Experiment description and the full reconstruction pipeline: reference
//! potential → samples → continuation-scheduled MAP optimization → densities
//! and diagnostics.

use nalgebra::DVector;

use crate::datagen::{empirical_density, impurity_band, sample_positions, true_potential, SampleSet, SplitMix64};
use crate::ensemble::{average_energy, likelihood_density, log_likelihood, Ensemble};
use crate::error::{BiqmError, Result};
use crate::gradients::DegeneracyPolicy;
use crate::lattice::{build_laplacian, build_periodic_invcov, round_period, GridFunction, OperatorMatrix};
use crate::optimizer::{
    anneal_binary_field, map_step, AnnealSchedule, IterationState, Objective, Posterior, Preconditioner, PreconditionerKind, SchedulePhase,
};
use crate::priors::{
    discontinuity_count, periodic_template, signed_square_template, AuxEnergy, CupParams, CupPrior, FieldKind, FieldState,
    FilteredDifference, GaussianTerm, PriorModel, Steepness,
};

/// Magnitude of the random perturbation applied when a spectrum is degenerate.
pub const JITTER_SCALE: f64 = 1e-8;
/// Jitter attempts before switching to the exact degenerate limit.
pub const MAX_JITTER_RETRIES: usize = 3;

/// A template potential on `x = 1..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemplateSpec {
    Zero,
    /// `amplitude · sin(2πx/period + phase)`.
    Sine {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// `sin²(2πx/period)·sign(sin(2πx/period))`.
    SignedSquare {
        period: f64,
    },
}

impl TemplateSpec {
    pub fn build(&self, n: usize) -> Result<GridFunction> {
        match *self {
            TemplateSpec::Zero => Ok(GridFunction::zeros(n)),
            TemplateSpec::Sine { amplitude, period, phase } => periodic_template(amplitude, period, phase, n),
            TemplateSpec::SignedSquare { period } => signed_square_template(period, n),
        }
    }
}

/// Inverse covariance of a Gaussian prior, before scaling by λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceSpec {
    /// `−Δ`.
    Laplacian,
    /// `−Δ − γΔ_θ`; the real period is rounded to an integer shift.
    Periodic {
        gamma: f64,
        period: f64,
    },
    Identity,
}

/// Prior variants reachable from an experiment description.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// `½⟨v − v0|λK|v − v0⟩`.
    Gaussian { lambda: f64, covariance: CovarianceSpec, template: TemplateSpec },
    /// `(λ₁/2)Σ|v − v0|²(1 − B) + (λ₂/2)⟨v|−Δ|v⟩`, `B = σ(|v − v0|² − ϑ)`.
    SwitchFixed { lambda1: f64, lambda2: f64, threshold: f64, template: TemplateSpec },
    /// `(λ₁/2)Σ(1 − B)|ω₁|² + (λ₂/2)ΣB|ω₂|² + (τ/2)N_d(B)`, `ωᵢ = ∇(v − vᵢ)`.
    SwitchTwo { lambda1: f64, lambda2: f64, threshold: f64, tau: f64, template1: TemplateSpec, template2: TemplateSpec },
    /// `(λ₁/2)‖v − v0(θ)‖² + (λ₂/2)⟨v|−Δ|v⟩ + (τ/2)N_d(θ)` with binary θ.
    Hyperfield { lambda1: f64, lambda2: f64, tau: f64, template1: TemplateSpec, template2: TemplateSpec },
    /// `½Σψ(∇(v − v0))` with the cup function ψ.
    Cup { params: CupParams, template: TemplateSpec },
}

impl PriorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PriorSpec::Gaussian { .. } => "gaussian",
            PriorSpec::SwitchFixed { .. } => "switch-fixed",
            PriorSpec::SwitchTwo { .. } => "switch-two",
            PriorSpec::Hyperfield { .. } => "hyperfield",
            PriorSpec::Cup { .. } => "cup",
        }
    }

    /// Whether the prior contains a `v`-dependent auxiliary field.
    pub fn has_aux_field(&self) -> bool {
        matches!(self, PriorSpec::SwitchFixed { .. } | PriorSpec::SwitchTwo { .. })
    }

    /// The two templates of switching priors.
    pub fn template_pair(&self) -> Option<(TemplateSpec, TemplateSpec, f64)> {
        match *self {
            PriorSpec::SwitchTwo { template1, template2, tau, .. } | PriorSpec::Hyperfield { template1, template2, tau, .. } => {
                Some((template1, template2, tau))
            }
            _ => None,
        }
    }

    /// The template an initial guess starts from.
    pub fn primary_template(&self) -> TemplateSpec {
        match *self {
            PriorSpec::Gaussian { template, .. } | PriorSpec::SwitchFixed { template, .. } | PriorSpec::Cup { template, .. } => template,
            PriorSpec::SwitchTwo { template1, .. } | PriorSpec::Hyperfield { template1, .. } => template1,
        }
    }
}

/// How the sigmoid steepness ν of auxiliary fields evolves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteepnessSchedule {
    Step,
    Fixed(f64),
    /// Geometric from `start` to `end` over `stages`, then step mode.
    Ramp {
        start: f64,
        end: f64,
        stages: usize,
    },
}

impl SteepnessSchedule {
    pub fn stages(&self) -> Vec<Steepness> {
        match *self {
            SteepnessSchedule::Step => vec![Steepness::Step],
            SteepnessSchedule::Fixed(nu) => vec![Steepness::Finite(nu)],
            SteepnessSchedule::Ramp { start, end, stages } => {
                let mut out = geometric(start, end, stages).into_iter().map(Steepness::Finite).collect::<Vec<_>>();
                out.push(Steepness::Step);
                out
            }
        }
    }
}

fn geometric(start: f64, end: f64, stages: usize) -> Vec<f64> {
    if stages <= 1 {
        return vec![end];
    }
    let ratio = (end / start).powf(1.0 / (stages - 1) as f64);
    (0..stages).map(|k| if k + 1 == stages { end } else { start * ratio.powi(k as i32) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaSpec {
    /// The average energy of the reference potential, recomputed per build.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Draw `count` measurements from the reference likelihood with the run seed.
    Generate {
        count: usize,
    },
    Given(SampleSet),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    Zero,
    /// The prior's (first) template.
    Template,
    /// The template outside the impurity band and zero inside it.
    MaskedTemplate,
    /// `v = (1 − c)v₁ + c·v₂` with binary `c` annealed against the likelihood
    /// and the discontinuity penalty; hyperfield priors also start from `θ = c`.
    AnnealedMix,
    Given(GridFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub preconditioner: PreconditionerKind,
    /// Convergence threshold on the preconditioned direction norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iteration budget of each non-final continuation stage.
    pub stage_iterations: usize,
    /// Number of geometric μ stages from μ/1000 to μ (1 disables the ramp).
    pub mu_stages: usize,
    pub steepness: SteepnessSchedule,
    pub anneal: AnnealSchedule,
    /// Outer iterations between hyperfield re-annealing.
    pub field_update_interval: usize,
}

impl OptimizerConfig {
    pub fn default_for(n: usize) -> Self {
        Self {
            preconditioner: PreconditionerKind::Prior,
            tolerance: 1e-6,
            max_iterations: 5000,
            stage_iterations: 300,
            mu_stages: 10,
            steepness: SteepnessSchedule::Ramp { start: 1.0, end: 1e3, stages: 10 },
            anneal: AnnealSchedule::default_for(n),
            field_update_interval: 50,
        }
    }
}

/// A complete experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionConfig {
    pub lattice_size: usize,
    pub mass: f64,
    pub beta: f64,
    pub seed: u64,
    pub data: DataSource,
    pub prior: PriorSpec,
    pub mu: f64,
    pub kappa: KappaSpec,
    pub optimizer: OptimizerConfig,
    pub initial: InitialGuess,
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(BiqmError::InvalidParameter { name, reason: format!("{value} must be positive and finite") })
    }
}

fn nonnegative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(BiqmError::InvalidParameter { name, reason: format!("{value} must be nonnegative and finite") })
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(BiqmError::InvalidParameter { name, reason: format!("{value} must be finite") })
    }
}

fn check_template(name: &'static str, t: &TemplateSpec) -> Result<()> {
    match *t {
        TemplateSpec::Zero => Ok(()),
        TemplateSpec::Sine { amplitude, period, phase } => {
            finite(name, amplitude)?;
            finite(name, phase)?;
            if period == 0.0 || !period.is_finite() {
                return Err(BiqmError::InvalidParameter { name, reason: format!("period {period} must be finite and nonzero") });
            }
            Ok(())
        }
        TemplateSpec::SignedSquare { period } => {
            if period == 0.0 || !period.is_finite() {
                return Err(BiqmError::InvalidParameter { name, reason: format!("period {period} must be finite and nonzero") });
            }
            Ok(())
        }
    }
}

impl ReconstructionConfig {
    /// Range checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.lattice_size < 2 {
            return Err(BiqmError::InvalidParameter { name: "lattice.n", reason: format!("{} must be at least 2", self.lattice_size) });
        }
        positive("lattice.mass", self.mass)?;
        nonnegative("lattice.beta", self.beta)?;
        nonnegative("energy.mu", self.mu)?;
        if let KappaSpec::Value(k) = self.kappa {
            finite("energy.kappa", k)?;
        }
        match &self.data {
            DataSource::Generate { .. } => {}
            DataSource::Given(s) => {
                if s.lattice_size() != self.lattice_size {
                    return Err(BiqmError::InvalidParameter {
                        name: "data.file",
                        reason: format!("samples are for N = {}, config has N = {}", s.lattice_size(), self.lattice_size),
                    });
                }
            }
        }
        match &self.prior {
            PriorSpec::Gaussian { lambda, covariance, template } => {
                nonnegative("prior.lambda", *lambda)?;
                if let CovarianceSpec::Periodic { gamma, period } = covariance {
                    nonnegative("prior.gamma", *gamma)?;
                    let (shift, _) = round_period(*period).map_err(|_| BiqmError::InvalidParameter {
                        name: "prior.period",
                        reason: format!("{period} does not round to a valid shift"),
                    })?;
                    if shift == 0 || shift >= self.lattice_size {
                        return Err(BiqmError::InvalidParameter { name: "prior.period", reason: format!("shift {shift} outside 1..N") });
                    }
                }
                check_template("prior.template", template)?;
            }
            PriorSpec::SwitchFixed { lambda1, lambda2, threshold, template } => {
                nonnegative("prior.lambda1", *lambda1)?;
                nonnegative("prior.lambda2", *lambda2)?;
                finite("prior.threshold", *threshold)?;
                check_template("prior.template", template)?;
            }
            PriorSpec::SwitchTwo { lambda1, lambda2, threshold, tau, template1, template2 } => {
                nonnegative("prior.lambda1", *lambda1)?;
                nonnegative("prior.lambda2", *lambda2)?;
                finite("prior.threshold", *threshold)?;
                nonnegative("prior.tau", *tau)?;
                check_template("prior.template1", template1)?;
                check_template("prior.template2", template2)?;
            }
            PriorSpec::Hyperfield { lambda1, lambda2, tau, template1, template2 } => {
                nonnegative("prior.lambda1", *lambda1)?;
                nonnegative("prior.lambda2", *lambda2)?;
                nonnegative("prior.tau", *tau)?;
                check_template("prior.template1", template1)?;
                check_template("prior.template2", template2)?;
            }
            PriorSpec::Cup { params, template } => {
                params.validate().map_err(|_| BiqmError::InvalidParameter {
                    name: "prior.cup",
                    reason: "cup parameters a, b, gamma must be positive".into(),
                })?;
                finite("prior.cup_x0", params.x0)?;
                check_template("prior.template", template)?;
            }
        }
        let o = &self.optimizer;
        positive("optimizer.tolerance", o.tolerance)?;
        if o.max_iterations == 0 {
            return Err(BiqmError::InvalidParameter { name: "optimizer.max_iterations", reason: "must be positive".into() });
        }
        if o.stage_iterations == 0 {
            return Err(BiqmError::InvalidParameter { name: "optimizer.stage_iterations", reason: "must be positive".into() });
        }
        if o.mu_stages == 0 {
            return Err(BiqmError::InvalidParameter { name: "optimizer.mu_stages", reason: "must be positive".into() });
        }
        if o.field_update_interval == 0 {
            return Err(BiqmError::InvalidParameter { name: "optimizer.field_update_interval", reason: "must be positive".into() });
        }
        match o.steepness {
            SteepnessSchedule::Step => {}
            SteepnessSchedule::Fixed(nu) => positive("optimizer.nu", nu)?,
            SteepnessSchedule::Ramp { start, end, stages } => {
                positive("optimizer.nu_start", start)?;
                positive("optimizer.nu_end", end)?;
                if stages == 0 {
                    return Err(BiqmError::InvalidParameter { name: "optimizer.nu_stages", reason: "must be positive".into() });
                }
            }
        }
        AnnealSchedule::new(o.anneal.t_start, o.anneal.t_end, o.anneal.cooling, o.anneal.moves_per_temperature)
            .map_err(|e| BiqmError::InvalidParameter { name: "anneal", reason: e.to_string() })?;
        if let InitialGuess::Given(v) = &self.initial {
            if v.len() != self.lattice_size {
                return Err(BiqmError::InvalidParameter {
                    name: "initial.guess",
                    reason: format!("given potential has {} sites, config has N = {}", v.len(), self.lattice_size),
                });
            }
        }
        if self.initial == InitialGuess::AnnealedMix && self.prior.template_pair().is_none() {
            return Err(BiqmError::InvalidParameter {
                name: "initial.guess",
                reason: format!("annealed-mix needs a two-template prior, not {}", self.prior.kind_name()),
            });
        }
        Ok(())
    }
}

/// What a trace row records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Start,
    /// An accepted descent step.
    Step,
    /// μ or ν changed; the objective is re-evaluated.
    Schedule,
    /// The hyperfield was re-annealed.
    Field,
    /// The potential was jittered to split a degenerate spectrum.
    Jitter,
}

impl TraceEvent {
    pub fn name(self) -> &'static str {
        match self {
            TraceEvent::Start => "start",
            TraceEvent::Step => "step",
            TraceEvent::Schedule => "schedule",
            TraceEvent::Field => "field",
            TraceEvent::Jitter => "jitter",
        }
    }

    /// Whether the row may increase the objective.
    pub fn exempt_from_monotonicity(self) -> bool {
        !matches!(self, TraceEvent::Step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub mu: f64,
    /// Sigmoid steepness; `inf` in step mode and 0 without auxiliary field.
    pub nu: f64,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// The line search failed with both preconditioners.
    Stalled,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub rmse: f64,
    /// RMSE outside the impurity band.
    pub rmse_unperturbed: f64,
    pub kl_emp_rec: f64,
    pub kl_emp_true: f64,
    pub u_star: f64,
    pub u_true: f64,
    pub kappa: f64,
    pub u_gap: f64,
    pub log_likelihood_rec: f64,
    pub log_likelihood_true: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub final_gradient_norm: f64,
    pub final_objective: f64,
    pub regularization_applied: bool,
    pub jitter_retries: usize,
    /// Requested real period and the integer shift used.
    pub period_rounding: Option<(f64, usize)>,
    pub discontinuities: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub v_star: GridFunction,
    pub v_true: GridFunction,
    /// The prior template (for hyperfields, `v0(θ)` at the final θ).
    pub template: GridFunction,
    /// Final auxiliary field B or hyperfield θ.
    pub field: Option<FieldState>,
    pub p_rec: GridFunction,
    pub p_true: GridFunction,
    pub p_emp: GridFunction,
    pub samples: SampleSet,
    pub trace: Vec<TraceEntry>,
    pub diagnostics: Diagnostics,
}

impl ReconstructionResult {
    /// Whether objective values are non-increasing across every step row.
    pub fn trace_is_monotone(&self, slack: f64) -> bool {
        self.trace.windows(2).all(|w| w[1].event.exempt_from_monotonicity() || w[1].objective <= w[0].objective + slack)
    }
}

/// The prior model for the given steepness and hyperfield, plus the period
/// rounding if a real period was used.
pub fn build_prior(
    spec: &PriorSpec,
    n: usize,
    steepness: Steepness,
    theta: Option<&FieldState>,
) -> Result<(PriorModel, Option<(f64, usize)>)> {
    match spec {
        PriorSpec::Gaussian { lambda, covariance, template } => {
            let (k, rounding) = match *covariance {
                CovarianceSpec::Laplacian => (build_laplacian(n, true)?.scaled(*lambda), None),
                CovarianceSpec::Identity => (OperatorMatrix::identity(n).scaled(*lambda), None),
                CovarianceSpec::Periodic { gamma, period } => {
                    let (shift, _) = round_period(period)?;
                    (build_periodic_invcov(n, shift, *lambda, gamma)?, Some((period, shift)))
                }
            };
            Ok((PriorModel::Gaussian(GaussianTerm::new(template.build(n)?, k)?), rounding))
        }
        PriorSpec::SwitchFixed { lambda1, lambda2, threshold, template } => {
            Ok((PriorModel::switch_fixed_reference(template.build(n)?, *lambda1, *lambda2, *threshold, steepness)?, None))
        }
        PriorSpec::SwitchTwo { lambda1, lambda2, threshold, tau, template1, template2 } => Ok((
            PriorModel::switch_two_references(
                template1.build(n)?,
                template2.build(n)?,
                *lambda1,
                *lambda2,
                *threshold,
                steepness,
                Some(AuxEnergy::Count { tau: *tau }),
            )?,
            None,
        )),
        PriorSpec::Hyperfield { lambda1, lambda2, tau, template1, template2 } => {
            let theta = match theta {
                Some(t) => t.clone(),
                None => FieldState::binary(vec![0.0; n])?,
            };
            Ok((PriorModel::hyperfield_templates(template1.build(n)?, template2.build(n)?, theta, *lambda1, *lambda2, *tau)?, None))
        }
        PriorSpec::Cup { params, template } => {
            let d = crate::lattice::build_shift_difference(n, 1)?;
            Ok((PriorModel::Cup(CupPrior { difference: FilteredDifference::new(d, template.build(n)?)?, params: *params }), None))
        }
    }
}

/// `Σ p_emp ln(p_emp/p)` over the support of `p_emp`.
pub fn kl_divergence(p_emp: &GridFunction, p: &GridFunction) -> f64 {
    let mut kl = 0.0;
    for x in 0..p_emp.len() {
        if p_emp[x] > 0.0 {
            if p[x] <= 0.0 {
                return f64::INFINITY;
            }
            kl += p_emp[x] * (p_emp[x] / p[x]).ln();
        }
    }
    kl
}

/// Root-mean-square difference over the given indices.
pub fn rmse(a: &GridFunction, b: &GridFunction, indices: impl IntoIterator<Item = usize>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in indices {
        sum += (a[i] - b[i]).powi(2);
        count += 1;
    }
    (sum / count.max(1) as f64).sqrt()
}

/// 0-based indices outside the impurity band.
pub fn unperturbed_indices(n: usize) -> Vec<usize> {
    let band = impurity_band(n);
    (0..n).filter(|i| !band.contains(&(i + 1))).collect()
}

fn continuation_phases(config: &ReconstructionConfig) -> Vec<SchedulePhase> {
    let mus = if config.mu > 0.0 && config.optimizer.mu_stages > 1 {
        geometric(config.mu / 1000.0, config.mu, config.optimizer.mu_stages)
    } else {
        vec![config.mu]
    };
    let nus: Vec<Option<Steepness>> =
        if config.prior.has_aux_field() { config.optimizer.steepness.stages().into_iter().map(Some).collect() } else { vec![None] };
    let count = mus.len().max(nus.len());
    (0..count).map(|k| SchedulePhase { mu: mus[k.min(mus.len() - 1)], steepness: nus[k.min(nus.len() - 1)] }).collect()
}

fn nu_value(s: Option<Steepness>) -> f64 {
    s.map_or(0.0, Steepness::nu)
}

/// `v = (1 − c)v₁ + c·v₂` with the boundary site pinned to zero.
fn mix_templates(v1: &GridFunction, v2: &GridFunction, c: &DVector<f64>, fixed: &[usize]) -> DVector<f64> {
    let mut v = DVector::from_fn(v1.len(), |x, _| (1.0 - c[x]) * v1[x] + c[x] * v2[x]);
    for &i in fixed {
        v[i] = 0.0;
    }
    v
}

struct Run<'a, 't> {
    config: &'a ReconstructionConfig,
    data: SampleSet,
    kappa: f64,
    fixed: Vec<usize>,
    policy: DegeneracyPolicy,
    regularization_applied: bool,
    jitter_retries: usize,
    trace: &'t mut Vec<TraceEntry>,
    rng: SplitMix64,
}

impl Run<'_, '_> {
    fn posterior<'p>(&'p self, prior: &'p PriorModel, mu: f64) -> Posterior<'p> {
        Posterior { prior, data: &self.data, mass: self.config.mass, beta: self.config.beta, mu, kappa: self.kappa, policy: self.policy }
    }

    fn push(&mut self, state: &IterationState, event: TraceEvent, iteration: usize) {
        self.trace.push(TraceEntry {
            iteration,
            objective: state.objective,
            gradient_norm: state.gradient_norm,
            mu: state.phase.mu,
            nu: nu_value(state.phase.steepness),
            event,
        });
    }

    /// Anneals the binary mixing field `c` against `−Σ ln p + (τ/2)N_d(c)`.
    fn anneal_mix(&mut self, v1: &GridFunction, v2: &GridFunction, tau: f64) -> Result<DVector<f64>> {
        let n = v1.len();
        let (mass, beta) = (self.config.mass, self.config.beta);
        let data = &self.data;
        let fixed = &self.fixed;
        let energy = |c: &DVector<f64>| -> Result<f64> {
            let v = GridFunction::from_vector(mix_templates(v1, v2, c, fixed))?;
            let ll = log_likelihood(data, &Ensemble::for_potential(&v, mass, beta)?)?;
            let e_b = 0.5 * tau * discontinuity_count(c.as_slice()) as f64;
            Ok(if ll.zero_density { f64::INFINITY } else { -ll.value + e_b })
        };
        let mut rng = self.rng.fork(0xC0);
        let outcome = anneal_binary_field(&FieldState::binary(vec![0.0; n])?, energy, &self.config.optimizer.anneal, &mut rng)?;
        Ok(outcome.field.values.into_vector())
    }

    fn jitter(&mut self, v: &GridFunction) -> Result<GridFunction> {
        let mut w = v.as_vector().clone();
        for i in 0..w.len() {
            if !self.fixed.contains(&i) {
                w[i] += JITTER_SCALE * (2.0 * self.rng.next_f64() - 1.0);
            }
        }
        GridFunction::from_vector(w)
    }
}

/// Re-anneals the hyperfield of `prior` (if any) for fixed `v`, keeping the
/// result only if it lowers the θ-dependent energy. Returns whether θ changed.
fn update_hyperfield(prior: &mut PriorModel, v: &GridFunction, schedule: &AnnealSchedule, rng: &mut SplitMix64) -> Result<bool> {
    let Some(h) = prior.hyperfield_component() else {
        return Ok(false);
    };
    let v = v.as_vector();
    let mut stream = rng.fork(0xF1E1D);
    let outcome = anneal_binary_field(&h.field, |t| h.energy_with_field(v, t), schedule, &mut stream)?;
    if outcome.energy < h.energy_with_field(v, &h.field.values)? {
        prior.hyperfield_component_mut().expect("hyperfield present").field = outcome.field;
        return Ok(true);
    }
    Ok(false)
}

/// Runs the complete pipeline for one experiment.
pub fn reconstruct(config: &ReconstructionConfig) -> Result<ReconstructionResult> {
    reconstruct_traced(config, &mut Vec::new())
}

/// Like [`reconstruct`], appending trace rows to `trace` as they happen so
/// that a failed run still leaves its partial trace behind.
pub fn reconstruct_traced(config: &ReconstructionConfig, trace: &mut Vec<TraceEntry>) -> Result<ReconstructionResult> {
    trace.clear();
    config.validate()?;
    let n = config.lattice_size;
    let v_true = true_potential(n);
    let e_true = Ensemble::for_potential(&v_true, config.mass, config.beta)?;
    let p_true = likelihood_density(&e_true);
    let u_true = average_energy(&e_true);
    let kappa = match config.kappa {
        KappaSpec::Auto => u_true,
        KappaSpec::Value(k) => k,
    };
    let data = match &config.data {
        DataSource::Generate { count } => sample_positions(&p_true, *count, config.seed)?,
        DataSource::Given(s) => s.clone(),
    };

    let mut run = Run {
        config,
        data,
        kappa,
        fixed: vec![n - 1],
        policy: DegeneracyPolicy::Strict,
        regularization_applied: false,
        jitter_retries: 0,
        trace,
        rng: SplitMix64::new(config.seed).fork(0xA11EA1),
    };

    // initial guess
    let mut theta: Option<FieldState> = None;
    let template = config.prior.primary_template().build(n)?;
    let mut v0 = match &config.initial {
        InitialGuess::Zero => DVector::zeros(n),
        InitialGuess::Template => template.as_vector().clone(),
        InitialGuess::MaskedTemplate => {
            let band = impurity_band(n);
            DVector::from_fn(n, |i, _| if band.contains(&(i + 1)) { 0.0 } else { template[i] })
        }
        InitialGuess::AnnealedMix => {
            let (t1, t2, tau) = config.prior.template_pair().expect("validated two-template prior");
            let (v1, v2) = (t1.build(n)?, t2.build(n)?);
            let c = run.anneal_mix(&v1, &v2, tau)?;
            if matches!(config.prior, PriorSpec::Hyperfield { .. }) {
                theta = Some(FieldState::binary(c.iter().copied().collect())?);
            }
            mix_templates(&v1, &v2, &c, &run.fixed)
        }
        InitialGuess::Given(v) => v.as_vector().clone(),
    };
    for &i in &run.fixed {
        v0[i] = 0.0;
    }

    let phases = continuation_phases(config);
    let (mut prior, period_rounding) = build_prior(&config.prior, n, phases[0].steepness.unwrap_or(Steepness::Step), theta.as_ref())?;
    let mut state = IterationState {
        v: GridFunction::from_vector(v0)?,
        step: 0.0,
        iteration: 0,
        objective: f64::INFINITY,
        gradient_norm: f64::INFINITY,
        phase: phases[0],
    };
    let mut stop = StopReason::MaxIterations;
    let mut total = 0usize;
    let opt = &config.optimizer;

    'phases: for (k, phase) in phases.iter().enumerate() {
        let last = k + 1 == phases.len();
        if let (Some(s), Some(aux)) = (phase.steepness, prior.aux_component_mut()) {
            aux.steepness = s;
        }
        state.phase = *phase;
        state.objective = run.posterior(&prior, phase.mu).value(state.v.as_vector())?;
        run.push(&state, if k == 0 { TraceEvent::Start } else { TraceEvent::Schedule }, total);

        let prior_preconditioner = match opt.preconditioner {
            PreconditionerKind::Prior => {
                Preconditioner::from_matrix(&prior.curvature(n)?, &run.fixed).unwrap_or_else(|_| Preconditioner::identity(n, &run.fixed))
            }
            _ => Preconditioner::identity(n, &run.fixed),
        };
        let fallback = Preconditioner::identity(n, &run.fixed);
        let budget = if last { opt.max_iterations.saturating_sub(total) } else { opt.stage_iterations.min(opt.max_iterations - total) };
        let mut used = 0usize;
        stop = StopReason::MaxIterations;

        while used < budget {
            if total > 0
                && used > 0
                && total.is_multiple_of(opt.field_update_interval)
                && update_hyperfield(&mut prior, &state.v, &opt.anneal, &mut run.rng)?
            {
                state.objective = run.posterior(&prior, phase.mu).value(state.v.as_vector())?;
                run.push(&state, TraceEvent::Field, total);
            }

            let posterior = run.posterior(&prior, phase.mu);
            let main = if opt.preconditioner == PreconditionerKind::GaussNewton {
                match posterior.gauss_newton(state.v.as_vector()).and_then(|a| Preconditioner::from_matrix(&a, &run.fixed)) {
                    Ok(p) => p,
                    Err(BiqmError::DegenerateSpectrum { .. }) => {
                        let limit = Posterior { policy: DegeneracyPolicy::DividedDifferenceLimit, ..posterior.clone() };
                        Preconditioner::from_matrix(&limit.gauss_newton(state.v.as_vector())?, &run.fixed)?
                    }
                    Err(e) => return Err(e),
                }
            } else {
                prior_preconditioner.clone()
            };
            let outcome = match map_step(&state, &posterior, &main, opt.tolerance) {
                Err(BiqmError::StalledStep { .. }) if !main.is_identity() => map_step(&state, &posterior, &fallback, opt.tolerance),
                other => other,
            };
            match outcome {
                Ok(out) => {
                    run.regularization_applied |= out.regularization_applied;
                    if out.converged {
                        state.gradient_norm = out.state.gradient_norm;
                        state.objective = out.state.objective;
                        // v is stationary for the current θ; continue only if θ can still improve
                        if update_hyperfield(&mut prior, &state.v, &opt.anneal, &mut run.rng)? {
                            state.objective = run.posterior(&prior, phase.mu).value(state.v.as_vector())?;
                            run.push(&state, TraceEvent::Field, total);
                            continue;
                        }
                        stop = StopReason::Converged;
                        break;
                    }
                    state = out.state;
                    total += 1;
                    used += 1;
                    run.push(&state, TraceEvent::Step, total);
                }
                Err(BiqmError::DegenerateSpectrum { .. }) => {
                    if run.jitter_retries < MAX_JITTER_RETRIES {
                        run.jitter_retries += 1;
                        state.v = run.jitter(&state.v)?;
                        state.objective = run.posterior(&prior, phase.mu).value(state.v.as_vector())?;
                        run.push(&state, TraceEvent::Jitter, total);
                    } else {
                        run.policy = DegeneracyPolicy::DividedDifferenceLimit;
                    }
                }
                Err(BiqmError::StalledStep { .. }) => {
                    stop = StopReason::Stalled;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if total >= opt.max_iterations {
            stop = if stop == StopReason::Converged { stop } else { StopReason::MaxIterations };
            break 'phases;
        }
    }

    let v_star = state.v.clone();
    let e_star = Ensemble::for_potential(&v_star, config.mass, config.beta)?;
    let p_rec = likelihood_density(&e_star);
    // without measurements the empirical density is identically zero
    let p_emp = if run.data.is_empty() { GridFunction::zeros(n) } else { empirical_density(&run.data, n)? };
    let u_star = average_energy(&e_star);

    let (field, template_out) = if let Some(aux) = prior.aux_component() {
        (Some(aux.field(v_star.as_vector())?), template.clone())
    } else if let Some(h) = prior.hyperfield_component() {
        let th = &h.field.values;
        let t1 = h.first.template.as_vector();
        let t2 = h.second.template.as_vector();
        let mixed = DVector::from_fn(n, |x, _| (1.0 - th[x]) * t1[x] + th[x] * t2[x]);
        (Some(h.field.clone()), GridFunction::from_vector(mixed)?)
    } else {
        (None, template.clone())
    };
    let discontinuities = field.as_ref().filter(|f| f.is_binary()).map(|f| discontinuity_count(f.values.as_slice()));
    debug_assert!(field.as_ref().is_none_or(|f| f.kind != FieldKind::RealHyperfield || !f.is_binary()));

    let diagnostics = Diagnostics {
        rmse: rmse(&v_star, &v_true, 0..n),
        rmse_unperturbed: rmse(&v_star, &v_true, unperturbed_indices(n)),
        kl_emp_rec: kl_divergence(&p_emp, &p_rec),
        kl_emp_true: kl_divergence(&p_emp, &p_true),
        u_star,
        u_true,
        kappa,
        u_gap: (u_star - kappa).abs(),
        log_likelihood_rec: log_likelihood(&run.data, &e_star)?.value,
        log_likelihood_true: log_likelihood(&run.data, &e_true)?.value,
        iterations: total,
        stop_reason: stop,
        final_gradient_norm: state.gradient_norm,
        final_objective: state.objective,
        regularization_applied: run.regularization_applied,
        jitter_retries: run.jitter_retries,
        period_rounding,
        discontinuities,
    };
    Ok(ReconstructionResult {
        v_star,
        v_true,
        template: template_out,
        field,
        p_rec,
        p_true,
        p_emp,
        samples: run.data,
        trace: run.trace.clone(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(prior: PriorSpec) -> ReconstructionConfig {
        ReconstructionConfig {
            lattice_size: 12,
            mass: 0.25,
            beta: 4.0,
            seed: 1,
            data: DataSource::Generate { count: 50 },
            prior,
            mu: 0.0,
            kappa: KappaSpec::Auto,
            optimizer: OptimizerConfig::default_for(12),
            initial: InitialGuess::Zero,
        }
    }

    #[test]
    fn zero_data_returns_prior_mean() {
        let template = TemplateSpec::Sine { amplitude: 1.0, period: 6.0, phase: 0.0 };
        let mut config = base(PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Identity, template });
        config.data = DataSource::Given(SampleSet::new(vec![], 0, 12).unwrap());
        let result = reconstruct(&config).unwrap();
        let v0 = template.build(12).unwrap();
        assert!((result.v_star.as_vector() - v0.as_vector()).amax() < 1e-8);
        assert!(result.diagnostics.final_gradient_norm <= 1e-8);
        assert_eq!(result.diagnostics.stop_reason, StopReason::Converged);
    }

    #[test]
    fn geometric_stages() {
        let g = geometric(1.0, 1000.0, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[9], 1000.0);
        assert!((g[3] - 10.0).abs() < 1e-9);
        assert_eq!(geometric(2.0, 5.0, 1), vec![5.0]);
    }

    #[test]
    fn phases_combine_mu_and_nu() {
        let mut config = base(PriorSpec::SwitchFixed { lambda1: 0.2, lambda2: 0.2, threshold: 0.15, template: TemplateSpec::Zero });
        let phases = continuation_phases(&config);
        assert_eq!(phases.len(), 11);
        assert_eq!(phases[10].steepness, Some(Steepness::Step));
        config.mu = 1000.0;
        config.prior = PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero };
        let phases = continuation_phases(&config);
        assert_eq!(phases.len(), 10);
        assert!((phases[0].mu - 1.0).abs() < 1e-12);
        assert_eq!(phases[9].mu, 1000.0);
        assert!(phases.iter().all(|p| p.steepness.is_none()));
    }

    #[test]
    fn validation_names_keys() {
        let config = base(PriorSpec::Gaussian { lambda: -1.0, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero });
        match config.validate() {
            Err(BiqmError::InvalidParameter { name, .. }) => assert_eq!(name, "prior.lambda"),
            other => panic!("{other:?}"),
        }
        let mut config = base(PriorSpec::Gaussian { lambda: 1.0, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero });
        config.initial = InitialGuess::AnnealedMix;
        assert!(config.validate().is_err());
    }

    #[test]
    fn kl_and_rmse() {
        let p = GridFunction::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let q = GridFunction::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(kl_divergence(&p, &q), f64::INFINITY);
        assert!((kl_divergence(&q, &p) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(rmse(&p, &q, 0..2), 0.5);
        assert_eq!(unperturbed_indices(36).len(), 24);
    }

    #[test]
    fn smooth_prior_run_converges_monotonically_and_deterministically() {
        let mut config = base(PriorSpec::Gaussian { lambda: 0.2, covariance: CovarianceSpec::Laplacian, template: TemplateSpec::Zero });
        config.mu = 1000.0;
        config.optimizer.preconditioner = PreconditionerKind::GaussNewton;
        let a = reconstruct(&config).unwrap();
        assert_eq!(a.diagnostics.stop_reason, StopReason::Converged);
        assert!(a.diagnostics.u_gap < 0.05, "{}", a.diagnostics.u_gap);
        assert!(a.trace_is_monotone(1e-12));
        assert!((a.p_rec.sum() - 1.0).abs() < 1e-12);
        assert_eq!(a.v_star[11], 0.0);
        let b = reconstruct(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyperfield_run_reports_binary_field() {
        let t1 = TemplateSpec::Sine { amplitude: 2.0 / 3.0, period: 6.0, phase: 0.0 };
        let t2 = TemplateSpec::SignedSquare { period: 6.0 };
        let mut config = base(PriorSpec::Hyperfield { lambda1: 10.0, lambda2: 1.0, tau: 20.0, template1: t1, template2: t2 });
        config.optimizer.preconditioner = PreconditionerKind::GaussNewton;
        config.optimizer.anneal = AnnealSchedule::new(1.0, 1e-2, 0.8, 24).unwrap();
        config.initial = InitialGuess::AnnealedMix;
        let r = reconstruct(&config).unwrap();
        let field = r.field.clone().expect("hyperfield present");
        assert!(field.is_binary());
        assert_eq!(field.len(), 12);
        assert!(r.trace_is_monotone(1e-12));
    }
}
