//! MAP optimization primitives: preconditioned descent on the negative log
//! posterior with Armijo backtracking, and Metropolis simulated annealing of
//! binary fields with segment-flip moves.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::datagen::{SampleSet, SplitMix64};
use crate::ensemble::{likelihood_density, log_likelihood_from_density, Ensemble};
use crate::error::{BiqmError, Result};
use crate::gradients::{
    energy_penalty, fisher_information, grad_average_energy, grad_energy_penalty, grad_log_likelihood_with, grad_prior, DegeneracyPolicy,
};
use crate::lattice::{GridFunction, OperatorMatrix};
use crate::priors::{FieldKind, FieldState, PriorModel, Steepness};

/// First trial step of the line search.
pub const INITIAL_STEP: f64 = 1.0;
/// Backtracking factor.
pub const BACKTRACK_FACTOR: f64 = 0.5;
/// Sufficient-decrease constant.
pub const ARMIJO_C: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 40;
/// Ridge added to the restricted prior preconditioner.
pub const PRECONDITIONER_RIDGE: f64 = 1e-10;

/// Value and gradient of a function to be minimized.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Degenerate eigenvalue pairs were handled through the exact limit.
    pub regularization_applied: bool,
}

/// A function to minimize; `value` may return `+inf` outside the domain.
pub trait Objective {
    fn value(&self, v: &DVector<f64>) -> Result<f64>;
    fn evaluate(&self, v: &DVector<f64>) -> Result<Evaluation>;
}

/// Negative log posterior `F(v) = E_prior(v) − Σ_i ln p(x_i|v) + (μ/2)(U − κ)²`.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    pub prior: &'a PriorModel,
    pub data: &'a SampleSet,
    pub mass: f64,
    pub beta: f64,
    pub mu: f64,
    pub kappa: f64,
    pub policy: DegeneracyPolicy,
}

impl Posterior<'_> {
    fn ensemble(&self, v: &DVector<f64>) -> Result<Ensemble> {
        Ensemble::for_potential(&GridFunction::from_vector(v.clone())?, self.mass, self.beta)
    }

    /// Gauss–Newton curvature `K_prior + n·F + μ∇U∇Uᵀ`, with `F` the
    /// per-measurement Fisher information of the likelihood.
    pub fn gauss_newton(&self, v: &DVector<f64>) -> Result<OperatorMatrix> {
        let e = self.ensemble(v)?;
        let n = v.len();
        let mut a = self.prior.curvature(n)?.entries().clone();
        a += fisher_information(&e, self.policy)? * self.data.len() as f64;
        if self.mu > 0.0 {
            let g = grad_average_energy(&e);
            a += &g * g.transpose() * self.mu;
        }
        Ok(OperatorMatrix::symmetrized(a))
    }

    fn value_with(&self, v: &DVector<f64>, e: &Ensemble) -> Result<f64> {
        let ll = log_likelihood_from_density(self.data, &likelihood_density(e))?;
        if ll.zero_density {
            return Ok(f64::INFINITY);
        }
        let mut value = self.prior.energy(v)? - ll.value;
        if self.mu > 0.0 {
            value += energy_penalty(e, self.mu, self.kappa);
        }
        Ok(value)
    }
}

impl Objective for Posterior<'_> {
    fn value(&self, v: &DVector<f64>) -> Result<f64> {
        let e = self.ensemble(v)?;
        self.value_with(v, &e)
    }

    fn evaluate(&self, v: &DVector<f64>) -> Result<Evaluation> {
        let e = self.ensemble(v)?;
        let value = self.value_with(v, &e)?;
        let grid = GridFunction::from_vector(v.clone())?;
        let ll = grad_log_likelihood_with(&e, self.data, self.policy)?;
        let mut gradient = grad_prior(self.prior, &grid)?.gradient.into_vector() - ll.gradient.as_vector();
        if self.mu > 0.0 {
            gradient += grad_energy_penalty(&e, self.mu, self.kappa)?.as_vector();
        }
        Ok(Evaluation { value, gradient, regularization_applied: ll.regularization_applied })
    }
}

/// Which operator defines the preconditioner `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    /// The prior's inverse covariance restricted to the free indices, plus a ridge.
    Prior,
    Identity,
    /// The Gauss–Newton curvature of the full objective (prior curvature plus
    /// expected data and penalty curvature), refreshed every iteration.
    GaussNewton,
}

impl PreconditionerKind {
    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::Prior => "prior",
            PreconditionerKind::Identity => "identity",
            PreconditionerKind::GaussNewton => "gauss-newton",
        }
    }
}

/// `A⁻¹` on the free (unconstrained) indices; constrained indices receive
/// zero direction.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    size: usize,
    free: Vec<usize>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl Preconditioner {
    pub fn identity(size: usize, fixed: &[usize]) -> Self {
        Self { size, free: free_indices(size, fixed), factor: None }
    }

    /// Cholesky factor of `A[free, free] + ridge·I`; an all-zero `A` falls
    /// back to the identity.
    pub fn from_matrix(a: &OperatorMatrix, fixed: &[usize]) -> Result<Self> {
        let size = a.size();
        let free = free_indices(size, fixed);
        if a.entries().iter().all(|x| *x == 0.0) {
            return Ok(Self { size, free, factor: None });
        }
        let k = free.len();
        let restricted =
            nalgebra::DMatrix::from_fn(k, k, |r, c| a.entries()[(free[r], free[c])] + if r == c { PRECONDITIONER_RIDGE } else { 0.0 });
        let factor = Cholesky::new(restricted)
            .ok_or_else(|| BiqmError::Singular("preconditioner is not positive definite on the free indices".into()))?;
        Ok(Self { size, free, factor: Some(factor) })
    }

    pub fn is_identity(&self) -> bool {
        self.factor.is_none()
    }

    /// `d = −A⁻¹g` on the free indices, zero elsewhere.
    pub fn direction(&self, gradient: &DVector<f64>) -> DVector<f64> {
        let g = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| -gradient[i]));
        let solved = match &self.factor {
            Some(f) => f.solve(&g),
            None => g,
        };
        let mut d = DVector::zeros(self.size);
        for (k, &i) in self.free.iter().enumerate() {
            d[i] = solved[k];
        }
        d
    }
}

fn free_indices(size: usize, fixed: &[usize]) -> Vec<usize> {
    (0..size).filter(|i| !fixed.contains(i)).collect()
}

/// Armijo backtracking: the first `η = η0·ρ^k` with
/// `F(v + ηd) ≤ F(v) + c·η·⟨g, d⟩`.
pub fn line_search<F>(v: &DVector<f64>, value: f64, gradient: &DVector<f64>, direction: &DVector<f64>, objective: F) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let slope = gradient.dot(direction);
    if slope.is_nan() || slope >= 0.0 {
        return Err(BiqmError::StalledStep { backtracks: 0 });
    }
    let mut eta = INITIAL_STEP;
    for _ in 0..=MAX_BACKTRACKS {
        let trial = v + direction * eta;
        let f = objective(&trial)?;
        if f <= value + ARMIJO_C * eta * slope {
            return Ok((eta, f));
        }
        eta *= BACKTRACK_FACTOR;
    }
    Err(BiqmError::StalledStep { backtracks: MAX_BACKTRACKS })
}

/// Continuation parameters active during an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePhase {
    pub mu: f64,
    pub steepness: Option<Steepness>,
}

/// One point of the optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub v: GridFunction,
    /// Last accepted step width.
    pub step: f64,
    pub iteration: usize,
    /// Negative log posterior at `v`.
    pub objective: f64,
    /// Norm of the preconditioned direction at `v`.
    pub gradient_norm: f64,
    pub phase: SchedulePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: IterationState,
    pub converged: bool,
    pub regularization_applied: bool,
}

/// One preconditioned descent step `v ← v − ηA⁻¹∇F`; no step is taken when
/// the direction norm is at most `tolerance`.
pub fn map_step(state: &IterationState, objective: &dyn Objective, preconditioner: &Preconditioner, tolerance: f64) -> Result<StepOutcome> {
    let v = state.v.as_vector();
    let eval = objective.evaluate(v)?;
    let direction = preconditioner.direction(&eval.gradient);
    let norm = direction.norm();
    if norm <= tolerance {
        let mut next = state.clone();
        next.objective = eval.value;
        next.gradient_norm = norm;
        return Ok(StepOutcome { state: next, converged: true, regularization_applied: eval.regularization_applied });
    }
    let (eta, value) = line_search(v, eval.value, &eval.gradient, &direction, |w| objective.value(w))?;
    let next = IterationState {
        v: GridFunction::from_vector(v + direction * eta)?,
        step: eta,
        iteration: state.iteration + 1,
        objective: value,
        gradient_norm: norm,
        phase: state.phase,
    };
    Ok(StepOutcome { state: next, converged: false, regularization_applied: eval.regularization_applied })
}

/// Geometric cooling from `t_start` to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub t_start: f64,
    pub t_end: f64,
    pub cooling: f64,
    pub moves_per_temperature: usize,
}

impl AnnealSchedule {
    pub fn new(t_start: f64, t_end: f64, cooling: f64, moves_per_temperature: usize) -> Result<Self> {
        if !(cooling > 0.0 && cooling < 1.0) {
            return Err(BiqmError::InvalidParameter { name: "cooling", reason: format!("{cooling} outside (0, 1)") });
        }
        if !(t_start > 0.0 && t_end > 0.0 && t_end <= t_start && t_start.is_finite()) {
            return Err(BiqmError::InvalidParameter {
                name: "temperature",
                reason: format!("need 0 < t_end ≤ t_start < inf, got {t_end}, {t_start}"),
            });
        }
        if moves_per_temperature == 0 {
            return Err(BiqmError::InvalidParameter { name: "moves_per_temperature", reason: "must be positive".into() });
        }
        Ok(Self { t_start, t_end, cooling, moves_per_temperature })
    }

    /// T from 1 to 1e−3, factor 0.95, `50·n` moves per temperature.
    pub fn default_for(n: usize) -> Self {
        Self { t_start: 1.0, t_end: 1e-3, cooling: 0.95, moves_per_temperature: 50 * n }
    }

    pub fn temperatures(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.t_start;
        while t >= self.t_end {
            out.push(t);
            t *= self.cooling;
        }
        out
    }
}

/// Metropolis rule `p(accept) = min[1, exp(−β_ann ΔE)]`.
pub fn metropolis_accept(delta: f64, beta_ann: f64, rng: &mut SplitMix64) -> bool {
    if delta <= 0.0 || beta_ann == 0.0 {
        return true;
    }
    let p = (-beta_ann * delta).exp();
    rng.next_f64() < p
}

/// Flips every value in `[x1, x2)` of a binary field.
pub fn segment_flip(field: &mut DVector<f64>, x1: usize, x2: usize) {
    for x in x1..x2 {
        field[x] = 1.0 - field[x];
    }
}

/// Draws segment endpoints `0 ≤ x1 < x2 ≤ n` uniformly.
pub fn random_segment(n: usize, rng: &mut SplitMix64) -> (usize, usize) {
    loop {
        let a = rng.below(n + 1);
        let b = rng.below(n + 1);
        if a != b {
            return (a.min(b), a.max(b));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    /// Best field visited, including the initial one.
    pub field: FieldState,
    pub energy: f64,
    pub proposed: usize,
    pub accepted: usize,
}

/// Metropolis sweeps at fixed inverse temperature, starting from `field`.
/// Returns the number of accepted moves and updates the best-visited record.
pub fn metropolis_sweep<F>(
    field: &mut DVector<f64>,
    energy: &mut f64,
    energy_fn: &mut F,
    beta_ann: f64,
    moves: usize,
    rng: &mut SplitMix64,
    best: &mut (DVector<f64>, f64),
) -> Result<usize>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let n = field.len();
    let mut accepted = 0;
    for _ in 0..moves {
        let (x1, x2) = random_segment(n, rng);
        segment_flip(field, x1, x2);
        let trial = energy_fn(field)?;
        let delta = trial - *energy;
        if metropolis_accept(if delta.is_nan() { f64::INFINITY } else { delta }, beta_ann, rng) {
            *energy = trial;
            accepted += 1;
            if trial < best.1 {
                *best = (field.clone(), trial);
            }
        } else {
            segment_flip(field, x1, x2);
        }
    }
    Ok(accepted)
}

/// Simulated annealing of a binary field with segment-flip moves.
pub fn anneal_binary_field<F>(
    initial: &FieldState,
    mut energy_fn: F,
    schedule: &AnnealSchedule,
    rng: &mut SplitMix64,
) -> Result<AnnealOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    if !initial.is_binary() {
        return Err(BiqmError::InvalidParameter { name: "field", reason: "annealing requires a binary field".into() });
    }
    let mut field = initial.values.as_vector().clone();
    let mut energy = energy_fn(&field)?;
    let mut best = (field.clone(), energy);
    let mut proposed = 0;
    let mut accepted = 0;
    for t in schedule.temperatures() {
        accepted += metropolis_sweep(&mut field, &mut energy, &mut energy_fn, 1.0 / t, schedule.moves_per_temperature, rng, &mut best)?;
        proposed += schedule.moves_per_temperature;
    }
    let kind = match initial.kind {
        FieldKind::Auxiliary => FieldKind::Auxiliary,
        _ => FieldKind::BinaryHyperfield,
    };
    Ok(AnnealOutcome {
        field: FieldState { kind, values: GridFunction::from_vector(best.0)?, steepness: Steepness::Step },
        energy: best.1,
        proposed,
        accepted,
    })
}
